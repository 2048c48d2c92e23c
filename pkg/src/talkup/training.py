"""Training steps and loops for every stage, plus the synthetic clip bank they draw from."""
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .animator.losses import LossWeights, RandomTPS, equivariance_terms, perceptual_loss, region_loss, total_loss
from .backbone import reconstruction_loss
from .errors import ConfigurationError, InvalidArgument, NonFiniteLoss
from .interp import OUT_FRAMES, RATIO, interp_loss
from .syncnet import lower_half, sync_bce, sync_loss
from .synthdata.audio import MelNormalizer, extract_melspectrogram
from .synthdata.generator import SynthSpec, generate_synthetic_clip
from .synthdata.window import collate, sample_window

SHIFT_FRAMES = 5  # 200 ms at 25 FPS
FOMM_PERCEPTUAL_WEIGHTS = (10.0, 10.0, 10.0, 10.0, 10.0)
FOMM_EQUIVARIANCE_WEIGHTS = (10.0, 10.0)


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


@dataclass
class OptimConfig:
    lr: float = 1e-4
    total_steps: int = 1000
    decay_fraction: float = 0.5
    decay_gamma: float = 0.1
    patience: int = 10


def make_optimizer(params, cfg):
    """Adam with a single x``decay_gamma`` step at ``decay_fraction`` of training."""
    opt = torch.optim.Adam([p for p in params if p.requires_grad], lr=cfg.lr)
    step = max(1, int(cfg.total_steps * cfg.decay_fraction))
    return opt, torch.optim.lr_scheduler.StepLR(opt, step_size=step, gamma=cfg.decay_gamma)


class EarlyStopping:
    def __init__(self, patience=10):
        self.patience = patience
        self.best = float("inf")
        self.stale = 0

    def update(self, value):
        """Record a validation value; True once ``patience`` checks pass without improvement."""
        if value < self.best:
            self.best, self.stale = value, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def batch_diagnostics(batch):
    out = {}
    for k, v in batch.items():
        if isinstance(v, torch.Tensor) and v.is_floating_point():
            x = v.detach().double()
            finite = torch.isfinite(x)
            xf = x[finite] if finite.any() else torch.zeros(1, dtype=x.dtype)
            out[k] = {"shape": list(v.shape), "non_finite": int((~finite).sum()), "min": float(xf.min()),
                      "max": float(xf.max()), "mean": float(xf.mean())}
    return out


def check_finite(losses, batch, stage):
    bad = {k: float(v) for k, v in losses.items() if not torch.isfinite(torch.as_tensor(v)).all()}
    if bad:
        raise NonFiniteLoss(f"{stage}: non-finite loss {bad}", {"losses": bad, "batch": batch_diagnostics(batch)})


class LossLog:
    """Line-delimited JSON loss records."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record):
        self.records.append(record)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")


# --- data ---------------------------------------------------------------------

class ClipBank:
    """Synthetic clips with their full-track log-mels and one shared mel normaliser."""

    def __init__(self, clips, normalizer=None):
        if not clips:
            raise InvalidArgument("clip bank is empty")
        self.clips = list(clips)
        self.mels = [extract_melspectrogram(c.audio).mels for c in self.clips]
        self.normalizer = normalizer or MelNormalizer.fit(self.mels)

    @classmethod
    def synthesize(cls, seeds, n_frames=25, spec=None, normalizer=None):
        spec = spec or SynthSpec()
        return cls([generate_synthetic_clip(s, n_frames, spec) for s in seeds], normalizer)

    def __len__(self):
        return len(self.clips)

    @property
    def hr_side(self):
        return self.clips[0].clip.side

    def n_frames(self, i):
        return len(self.clips[i].clip)

    def sample(self, i, t0, window, scale_factor, quantize_lr=True):
        c = self.clips[i]
        return sample_window(c.clip, c.audio, t0, window=window, scale_factor=scale_factor, landmarks=c.landmarks,
                             mel=self.mels[i], quantize_lr=quantize_lr)

    def batch(self, rng, batch_size, window, scale_factor, clip_ids=None):
        ids = range(len(self)) if clip_ids is None else clip_ids
        samples = []
        for _ in range(batch_size):
            i = int(rng.choice(list(ids)))
            t0 = int(rng.integers(0, self.n_frames(i) - window + 1))
            samples.append(self.sample(i, t0, window, scale_factor))
        return collate(samples, self.normalizer)

    def all_windows(self, window, scale_factor, stride=None):
        stride = stride or window
        samples = [self.sample(i, t0, window, scale_factor)
                   for i in range(len(self)) for t0 in range(0, self.n_frames(i) - window + 1, stride)]
        return collate(samples, self.normalizer)

    def mel_window(self, i, t0, window):
        lo, hi = 4 * t0, 4 * (t0 + window)
        return self.normalizer(self.mels[i][lo:hi])


def sync_pairs(bank, rng, batch_size, window, positive_fraction=0.5, cross_clip_fraction=0.5):
    """Lip/mel pairs with labels; negatives are >= 200 ms shifts or other-clip mels."""
    lips, mels, labels = [], [], []
    for _ in range(batch_size):
        i = int(rng.integers(len(bank)))
        n = bank.n_frames(i)
        t0 = int(rng.integers(0, n - window + 1))
        lips.append(lower_half(bank.clips[i].clip.frames[t0:t0 + window]))
        if rng.random() < positive_fraction:
            mels.append(bank.mel_window(i, t0, window))
            labels.append(1.0)
            continue
        shifts = [t for t in range(0, n - window + 1) if abs(t - t0) >= SHIFT_FRAMES]
        if len(bank) > 1 and (not shifts or rng.random() < cross_clip_fraction):
            j = int(rng.choice([k for k in range(len(bank)) if k != i]))
            tj = int(rng.integers(0, bank.n_frames(j) - window + 1))
            mels.append(bank.mel_window(j, tj, window))
        elif shifts:
            mels.append(bank.mel_window(i, int(rng.choice(shifts)), window))
        else:
            raise InvalidArgument("clip too short for a 200 ms shifted negative and no other clip available")
        labels.append(0.0)
    return {"lips": torch.as_tensor(np.stack(lips)), "mel": torch.as_tensor(np.stack(mels)),
            "label": torch.tensor(labels)}


def shifted_pairs(bank, window, shift=SHIFT_FRAMES, stride=None):
    """Every in-sync window of the bank plus its ``shift``-frame displaced mel (labels 1 / 0)."""
    stride = stride or window
    lips, mels, labels = [], [], []
    for i in range(len(bank)):
        n = bank.n_frames(i)
        for t0 in range(0, n - window + 1, stride):
            ts = t0 + shift if t0 + shift + window <= n else t0 - shift
            if ts < 0:
                continue
            crop = lower_half(bank.clips[i].clip.frames[t0:t0 + window])
            lips += [crop, crop]
            mels += [bank.mel_window(i, t0, window), bank.mel_window(i, ts, window)]
            labels += [1.0, 0.0]
    return {"lips": torch.as_tensor(np.stack(lips)), "mel": torch.as_tensor(np.stack(mels)),
            "label": torch.tensor(labels)}


# --- steps ----------------------------------------------------------------------

def backbone_train_step(backbone, opt, batch, scheduler=None):
    backbone.train()
    f_int = backbone(batch["lr"], batch["mel"])
    loss = reconstruction_loss(f_int, batch["gt"])
    check_finite({"L_rec": loss}, batch, "backbone")
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    if scheduler is not None:
        scheduler.step()
    return {"L_rec": float(loss.detach())}


def syncnet_train_step(syncnet, opt, pairs, scheduler=None):
    syncnet.train()
    loss = sync_bce(syncnet(pairs["lips"], pairs["mel"]), pairs["label"])
    check_finite({"L_sync_bce": loss}, pairs, "syncnet")
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    if scheduler is not None:
        scheduler.step()
    syncnet.trained_steps += 1
    return {"L_bce": float(loss.detach())}


@dataclass
class E2EOptions:
    weights: LossWeights = field(default_factory=LossWeights)
    use_region: bool = True
    rec_target: str = "f_int"  # f_int | f_hr | both
    perceptual_weights: tuple = FOMM_PERCEPTUAL_WEIGHTS
    equivariance_weights: tuple = FOMM_EQUIVARIANCE_WEIGHTS

    def __post_init__(self):
        if self.rec_target not in ("f_int", "f_hr", "both"):
            raise InvalidArgument(f"rec_target must be f_int, f_hr or both, got {self.rec_target!r}")


def e2e_losses(backbone, animator, batch, syncnet, extractor, options=None, generator=None):
    """All components of the end-to-end objective; returns (components, f_int, animation output)."""
    options = options or E2EOptions()
    f_int = backbone(batch["lr"], batch["mel"])
    out = animator(batch["identity"], f_int)
    gt = batch["gt"]
    if options.rec_target == "f_int":
        rec = reconstruction_loss(f_int, gt)
    elif options.rec_target == "f_hr":
        rec = reconstruction_loss(out.f_hr, gt)
    else:
        rec = reconstruction_loss(f_int, gt) + reconstruction_loss(out.f_hr, gt)

    perc = perceptual_loss(out.f_hr, gt, extractor, layer_weights=list(options.perceptual_weights))
    driving = f_int.flatten(0, 1)
    tps = RandomTPS(driving.shape[0], generator=generator, dtype=driving.dtype)
    kp_t = animator.detect_keypoints(tps.transform_frame(driving))
    value, jac = equivariance_terms(out.kp_driving, kp_t, tps)
    wv, wj = options.equivariance_weights
    fomm = perc + wv * value + wj * jac

    if options.use_region and "landmarks" in batch:
        region = region_loss(out.f_hr, gt, batch["landmarks"])
    else:
        region = gt.new_zeros(())

    if options.weights.sync != 0:
        if syncnet is None:
            raise ConfigurationError("sync weight is non-zero but no sync discriminator was supplied")
        sync = sync_loss(out.f_hr, batch["mel"], syncnet)
    else:
        sync = gt.new_zeros(())
    comps = {"rec": rec, "fomm": fomm, "region": region, "sync": sync}
    comps["total"] = total_loss(comps, options.weights)
    return comps, f_int, out


def record_from(components, step):
    rec = {"step": step}
    for key, name in (("rec", "L_rec"), ("fomm", "L_fomm"), ("region", "L_region"), ("sync", "L_sync"),
                      ("total", "L_HR")):
        rec[name] = float(components[key].detach())
    return rec


def e2e_train_step(backbone, animator, opt, batch, syncnet, extractor, options=None, scheduler=None,
                   generator=None, step=0):
    if syncnet is not None:
        if not syncnet.is_trained:
            raise ConfigurationError("sync discriminator is untrained; run train-syncnet first")
        syncnet.freeze()
    backbone.train()
    animator.train()
    comps, _, _ = e2e_losses(backbone, animator, batch, syncnet, extractor, options, generator)
    check_finite(comps, batch, "e2e")
    opt.zero_grad(set_to_none=True)
    comps["total"].backward()
    opt.step()
    if scheduler is not None:
        scheduler.step()
    return record_from(comps, step)


def interp_train_step(model, opt, lr25, scheduler=None):
    """``lr25``: (B, 25, 3, h, w) true 25 FPS LR frames; inputs are every fifth frame."""
    model.train()
    pred = model(lr25[:, ::RATIO])
    loss = interp_loss(pred, lr25)
    check_finite({"L_interp": loss}, {"lr25": lr25}, "interp")
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    if scheduler is not None:
        scheduler.step()
    return {"L_interp": float(loss.detach())}


def lr_clips_25(bank, scale_factor, rng, batch_size):
    """Random one-second (25-frame) LR sequences, 8-bit quantised."""
    from .synthdata.degrade import bicubic_downscale
    from .synthdata.window import dequantize, quantize

    out = []
    for _ in range(batch_size):
        i = int(rng.integers(len(bank)))
        n = bank.n_frames(i)
        if n < OUT_FRAMES:
            raise InvalidArgument(f"interpolation training needs clips of >= {OUT_FRAMES} frames")
        t0 = int(rng.integers(0, n - OUT_FRAMES + 1))
        lr = bicubic_downscale(bank.clips[i].clip.frames[t0:t0 + OUT_FRAMES], scale_factor)
        out.append(dequantize(quantize(lr)))
    return torch.as_tensor(np.stack(out))


# --- loops ----------------------------------------------------------------------

def _val_loss(fn, val_batch):
    with torch.no_grad():
        return float(fn(val_batch))


def train_backbone(backbone, bank, steps, *, batch_size=4, seed=0, optim=None, log=None, val_batch=None,
                   val_every=50):
    optim = optim or OptimConfig(total_steps=steps)
    opt, sched = make_optimizer(backbone.parameters(), optim)
    rng = np.random.default_rng(seed)
    stopper = EarlyStopping(optim.patience)
    c = backbone.config
    history = []
    for step in range(steps):
        rec = backbone_train_step(backbone, opt, bank.batch(rng, batch_size, c.window, c.scale_factor), sched)
        rec["step"] = step
        history.append(rec)
        if log:
            log.write(rec)
        if val_batch is not None and (step + 1) % val_every == 0:
            backbone.eval()
            val = _val_loss(lambda b: reconstruction_loss(backbone(b["lr"], b["mel"]), b["gt"]), val_batch)
            if stopper.update(val):
                break
    return history


def train_syncnet(syncnet, bank, steps, *, batch_size=16, seed=0, optim=None, log=None):
    optim = optim or OptimConfig(total_steps=steps)
    syncnet.requires_grad_(True)
    opt, sched = make_optimizer(syncnet.parameters(), optim)
    rng = np.random.default_rng(seed)
    history = []
    for step in range(steps):
        rec = syncnet_train_step(syncnet, opt, sync_pairs(bank, rng, batch_size, syncnet.config.window), sched)
        rec["step"] = step
        history.append(rec)
        if log:
            log.write(rec)
    return history


def train_e2e(backbone, animator, bank, steps, *, syncnet=None, extractor=None, options=None, batch_size=2,
              seed=0, optim=None, log=None, batch=None):
    """End-to-end fine-tuning of backbone + animator; ``batch`` pins a fixed batch (overfit runs)."""
    optim = optim or OptimConfig(total_steps=steps)
    params = list(backbone.parameters()) + list(animator.parameters())
    opt, sched = make_optimizer(params, optim)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    c = backbone.config
    history = []
    for step in range(steps):
        b = batch if batch is not None else bank.batch(rng, batch_size, c.window, c.scale_factor)
        rec = e2e_train_step(backbone, animator, opt, b, syncnet, extractor, options, sched, gen, step)
        history.append(rec)
        if log:
            log.write(rec)
    return history


def train_interp(model, bank, steps, *, scale_factor=32, batch_size=4, seed=0, optim=None, log=None):
    optim = optim or OptimConfig(total_steps=steps)
    opt, sched = make_optimizer(model.parameters(), optim)
    rng = np.random.default_rng(seed)
    history = []
    for step in range(steps):
        rec = interp_train_step(model, opt, lr_clips_25(bank, scale_factor, rng, batch_size), sched)
        rec["step"] = step
        history.append(rec)
        if log:
            log.write(rec)
    return history


def roc_auc(scores, labels):
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    from scipy.stats import rankdata

    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidArgument("AUC needs both positive and negative examples")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def options_dict(options):
    return asdict(options)
