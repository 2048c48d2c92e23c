"""``talkup`` command line: data generation, training stages, codec, evaluation, ablations."""
import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorruptStream, InvalidArgument, ManifestError, MissingPrerequisite

# stage -> stages whose artifacts it consumes
STAGE_GRAPH = {
    "gen-data": (),
    "train-backbone": ("gen-data",),
    "train-syncnet": ("gen-data",),
    "train-interp": ("gen-data",),
    "train-e2e": ("train-backbone", "train-syncnet"),
    "upsample": ("train-e2e",),
    "eval": ("train-e2e",),
}
ARTIFACTS = {
    "gen-data": "manifest.jsonl",
    "train-backbone": "backbone.ckpt",
    "train-syncnet": "syncnet.ckpt",
    "train-interp": "interp.ckpt",
    "train-e2e": "e2e_backbone.ckpt",
}


def topo_order(graph=STAGE_GRAPH):
    """Stages in dependency order; raises on a cycle."""
    order, state = [], {}

    def visit(node):
        if state.get(node) == 1:
            raise ConfigurationError(f"stage graph has a cycle through {node}")
        if state.get(node) == 2:
            return
        state[node] = 1
        for dep in graph[node]:
            visit(dep)
        state[node] = 2
        order.append(node)

    for node in graph:
        visit(node)
    return order


# --- helpers --------------------------------------------------------------------

def _emit(rows, columns, out=None, delimiter=","):
    """Print rows as delimited text (csv quoting) and optionally write them to ``out``."""
    import io

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", delimiter=delimiter, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r.get(c, "")) for c in columns})
    text = buf.getvalue().rstrip("\n")
    print(text)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    return text


def _fmt(v):
    if isinstance(v, float):
        return "n/a" if np.isnan(v) else f"{v:.6g}"
    return str(v)


def _config(args, overrides=None):
    from .config import RunConfig

    ov = {"seed": args.seed} if args.seed is not None else {}
    model = {}
    if getattr(args, "scale", None):
        model["scale_factor"] = args.scale
    if getattr(args, "window", None):
        model["window"] = args.window
    if getattr(args, "no_audio", False):
        model["use_audio"] = False
    if model:
        ov["model"] = model
    if getattr(args, "no_region_loss", False):
        ov.setdefault("loss", {})["use_region"] = False
    if getattr(args, "no_pretrain", False):
        ov["train_e2e"] = {"pretrain": False}
    if getattr(args, "steps", None):
        stage = args.command.replace("-", "_")
        if stage.startswith("train_"):
            ov[stage] = {"steps": args.steps}
    cfg = RunConfig.load(args.config, overrides=ov, desk=args.desk)
    if overrides:
        cfg = RunConfig.load(None, overrides=_deep_update(cfg.data, overrides))
    return cfg


def _deep_update(base, upd):
    import copy

    out = copy.deepcopy(base)
    for k, v in upd.items():
        out[k] = _deep_update(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _run_dir(args, cfg):
    run = Path(args.run)
    if not args.dry_run:
        run.mkdir(parents=True, exist_ok=True)
        cfg.dump(run / f"config.{args.command}.yaml")
        (run / "seed.txt").write_text(f"{cfg['seed']}\n")
    return run


def _require(stage, path, needed_by):
    if not Path(path).exists():
        raise MissingPrerequisite(f"{needed_by} needs {path}; run `talkup {stage}` first")
    return Path(path)


def _load_split(data_dir, split, needed_by):
    from .synthdata.manifest import DatasetManifest
    from .training import ClipBank

    man = DatasetManifest.read(_require("gen-data", Path(data_dir) / ARTIFACTS["gen-data"], needed_by))
    entries = man.split(split)
    if not entries:
        raise ConfigurationError(f"split {split!r} is empty in {data_dir}")
    return [load_entry(e) for e in entries], ClipBank


def load_entry(entry):
    """Materialise one manifest entry as a SyntheticClip-like tuple."""
    import yaml

    from .synthdata.generator import SynthSpec, SyntheticClip, generate_synthetic_clip
    from .synthdata.io import load_clip, load_wav, read_landmarks
    from .synthdata.manifest import SYNTHETIC

    if entry.video.endswith(".synth.yaml"):
        meta = yaml.safe_load(Path(entry.video).read_text())
        return generate_synthetic_clip(meta["seed"], meta["n_frames"], SynthSpec.from_mapping(meta.get("spec", {})))
    clip = load_clip(entry.video)
    audio = load_wav(entry.audio)
    lm = None if entry.landmarks == SYNTHETIC else read_landmarks(entry.landmarks)
    return SyntheticClip(clip, audio, lm, {})


def _bank(args, cfg, split, needed_by, normalizer=None):
    clips, bank_cls = _load_split(args.data, split, needed_by)
    return bank_cls(clips, normalizer)


def _normalizer_path(run):
    return Path(run) / "mel_norm.json"


def _save_normalizer(run, norm):
    _normalizer_path(run).write_text(json.dumps({"lo": norm.lo, "hi": norm.hi}))


def _load_normalizer(run):
    from .synthdata.audio import MelNormalizer

    p = _normalizer_path(run)
    return MelNormalizer(**json.loads(p.read_text())) if p.exists() else None


# --- commands -------------------------------------------------------------------

def cmd_gen_data(args):
    import yaml

    from .synthdata.manifest import build_manifest

    cfg = _config(args)
    d = cfg["data"]
    out = Path(args.data)
    splits = [("train", d["n_train"]), ("val", d["n_val"]), ("test", d["n_test"])]
    seed0 = cfg["seed"] * 10000
    plan, k = {}, 0
    for split, n in splits:
        for _ in range(n):
            plan[f"clip{k:04d}"] = (split, seed0 + k)
            k += 1
    if args.dry_run:
        print(f"would write {k} clip specs to {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    for stem, (_, seed) in plan.items():
        meta = {"seed": seed, "n_frames": d["n_frames"], "identity": f"synth{seed:04d}", "spec": d["synth"]}
        (out / f"{stem}.synth.yaml").write_text(yaml.safe_dump(meta, sort_keys=True))
    man = build_manifest(out, {"entries": {s: p[0] for s, p in plan.items()}})
    man.write(out / ARTIFACTS["gen-data"])
    if args.materialize:
        from .synthdata.io import save_clip, save_wav, write_landmarks

        media = out / "media"
        media.mkdir(exist_ok=True)
        for e in man.entries:
            c = load_entry(e)
            stem = Path(e.video).name[: -len(".synth.yaml")]
            save_clip(media / f"{stem}.npz", c.clip)
            save_wav(media / f"{stem}.wav", c.audio)
            write_landmarks(media / f"{stem}.lmk", c.landmarks)
    _emit([{"split": s, "identities": n} for s, n in man.summary().items()], ["split", "identities"])
    return 0


def _save(module, path, kind, config, role="trainable", extra=None):
    from .checkpoint import save_checkpoint

    return save_checkpoint(path, module, kind=kind, config=config, role=role, extra=extra)


def _finish_training(run, name, history):
    from .plotting import plot_loss_curves

    fig = plot_loss_curves(history, Path(run) / f"{name}_losses.png", title=name)
    last = history[-1]
    _emit([last], list(last))
    print(f"figure: {fig}")


def cmd_train_backbone(args):
    import torch

    from .backbone import Backbone
    from .training import LossLog, seed_everything, train_backbone

    cfg = _config(args)
    run = _run_dir(args, cfg)
    bank = _bank(args, cfg, "train", "train-backbone")
    bcfg = cfg.backbone_config()
    if args.dry_run:
        print(f"train-backbone: {len(bank)} clips, window {bcfg.window}, scale {bcfg.scale_factor}")
        return 0
    _save_normalizer(run, bank.normalizer)
    seed_everything(cfg["seed"])
    model = Backbone(bcfg)
    st = cfg["train_backbone"]
    val = None
    try:
        vb = _bank(args, cfg, "val", "train-backbone", bank.normalizer)
        val = vb.all_windows(bcfg.window, bcfg.scale_factor)
    except ConfigurationError:
        pass
    torch.set_num_threads(max(1, torch.get_num_threads()))
    hist = train_backbone(model, bank, st["steps"], batch_size=st["batch_size"], seed=cfg["seed"],
                          optim=cfg.optim(st["steps"]), log=LossLog(run / "backbone_losses.jsonl"),
                          val_batch=val, val_every=st["val_every"])
    _save(model, run / ARTIFACTS["train-backbone"], "backbone", bcfg.to_dict())
    _finish_training(run, "backbone", hist)
    return 0


def _sync_eval(syncnet, bank):
    import torch

    from .training import roc_auc, shifted_pairs

    pairs = shifted_pairs(bank, syncnet.config.window, stride=1)
    syncnet.eval()
    with torch.no_grad():
        cos = syncnet(pairs["lips"], pairs["mel"]).numpy()
    return roc_auc(cos, pairs["label"].numpy()), cos, pairs["label"].numpy()


def cmd_train_syncnet(args):
    from .plotting import plot_sync_scores
    from .syncnet import SyncNet
    from .training import LossLog, seed_everything, train_syncnet

    cfg = _config(args)
    run = _run_dir(args, cfg)
    norm = _load_normalizer(run)
    bank = _bank(args, cfg, "train", "train-syncnet", norm)
    scfg = cfg.syncnet_config()
    if args.dry_run:
        print(f"train-syncnet: {len(bank)} clips, window {scfg.window}")
        return 0
    if norm is None:
        _save_normalizer(run, bank.normalizer)
    seed_everything(cfg["seed"])
    model = SyncNet(scfg)
    st = cfg["train_syncnet"]
    hist = train_syncnet(model, bank, st["steps"], batch_size=st["batch_size"], seed=cfg["seed"],
                         optim=cfg.optim(st["steps"]), log=LossLog(run / "syncnet_losses.jsonl"))
    extra = {}
    try:
        val = _bank(args, cfg, "val", "train-syncnet", bank.normalizer)
        auc, cos, labels = _sync_eval(model, val)
        extra["val_auc"] = auc
        plot_sync_scores(cos, labels, run / "syncnet_scores.png")
        print(f"val_auc,{auc:.4f}")
    except ConfigurationError:
        pass
    _save(model.freeze(), run / ARTIFACTS["train-syncnet"], "syncnet", scfg.to_dict(), role="frozen-scorer",
          extra=extra)
    _finish_training(run, "syncnet", hist)
    return 0


def _load_models(run, cfg, *, e2e=True, needed_by="upsample"):
    from .animator import Animator
    from .backbone import Backbone
    from .checkpoint import load_into

    backbone, animator = Backbone(cfg.backbone_config()), Animator(cfg.animator_config())
    if e2e:
        load_into(backbone, _require("train-e2e", Path(run) / ARTIFACTS["train-e2e"], needed_by), "backbone")
        load_into(animator, _require("train-e2e", Path(run) / "e2e_animator.ckpt", needed_by), "animator")
    return backbone, animator


def _load_syncnet(run, cfg, needed_by):
    from .checkpoint import load_into
    from .syncnet import SyncNet

    sn = SyncNet(cfg.syncnet_config())
    load_into(sn, _require("train-syncnet", Path(run) / ARTIFACTS["train-syncnet"], needed_by), "syncnet")
    return sn


def cmd_train_e2e(args):
    from .animator import Animator, FeaturePyramid
    from .backbone import Backbone
    from .checkpoint import load_into
    from .training import LossLog, seed_everything, train_e2e

    cfg = _config(args)
    run = _run_dir(args, cfg)
    st = cfg["train_e2e"]
    opts = cfg.e2e_options()
    ckpt_bb = Path(run) / ARTIFACTS["train-backbone"]
    if st["pretrain"]:
        _require("train-backbone", ckpt_bb, "train-e2e")
    syncnet = None
    if opts.weights.sync != 0:
        syncnet = _load_syncnet(run, cfg, "train-e2e")
    bank = _bank(args, cfg, "train", "train-e2e", _load_normalizer(run))
    if args.dry_run:
        print(f"train-e2e: {len(bank)} clips, pretrain={st['pretrain']}, sync={'on' if syncnet else 'off'}")
        return 0
    seed_everything(cfg["seed"])
    backbone, animator = Backbone(cfg.backbone_config()), Animator(cfg.animator_config())
    if st["pretrain"]:
        load_into(backbone, ckpt_bb, "backbone")
    hist = train_e2e(backbone, animator, bank, st["steps"], syncnet=syncnet, extractor=FeaturePyramid(),
                     options=opts, batch_size=st["batch_size"], seed=cfg["seed"], optim=cfg.optim(st["steps"]),
                     log=LossLog(run / "e2e_losses.jsonl"))
    _save(backbone, run / ARTIFACTS["train-e2e"], "backbone", cfg.backbone_config().to_dict())
    _save(animator, run / "e2e_animator.ckpt", "animator", cfg.animator_config().to_dict())
    _finish_training(run, "e2e", hist)
    return 0


def cmd_train_interp(args):
    from .interp import InterpNet
    from .training import LossLog, seed_everything, train_interp

    cfg = _config(args)
    run = _run_dir(args, cfg)
    bank = _bank(args, cfg, "train", "train-interp")
    icfg = cfg.interp_config()
    if args.dry_run:
        print(f"train-interp: {len(bank)} clips")
        return 0
    seed_everything(cfg["seed"])
    model = InterpNet(icfg)
    st = cfg["train_interp"]
    hist = train_interp(model, bank, st["steps"], scale_factor=cfg["model"]["scale_factor"],
                        batch_size=st["batch_size"], seed=cfg["seed"], optim=cfg.optim(st["steps"]),
                        log=LossLog(run / "interp_losses.jsonl"))
    _save(model, run / ARTIFACTS["train-interp"], "interp", icfg.to_dict())
    _finish_training(run, "interp", hist)
    return 0


def cmd_encode(args):
    from .codec import FpsMode, IdentityCodec, encode_stream
    from .synthdata.degrade import bicubic_downscale
    from .synthdata.io import load_clip, load_frame_dir

    cfg = _config(args)
    src = Path(args.input)
    if src.suffix == ".yaml":
        from .synthdata.manifest import ManifestEntry

        frames = load_entry(ManifestEntry(str(src), "", "", "", "")).clip.frames
    elif src.is_dir():
        frames = load_frame_dir(src)
    else:
        frames = load_clip(src).frames
    mode = FpsMode.FPS5_INTERP if args.fps_mode == "5interp" else FpsMode.FPS25
    lr = bicubic_downscale(frames, cfg["model"]["scale_factor"])
    if mode == FpsMode.FPS5_INTERP:
        n = (len(lr) // 25) * 25
        if n == 0:
            raise InvalidArgument("5 FPS mode needs at least 25 source frames")
        lr = lr[:n:5]
    codec = IdentityCodec.PNG if args.identity_codec == "png" else IdentityCodec.RAW
    stream = encode_stream(lr, frames[0], mode, codec)
    if args.dry_run:
        print(f"would write {len(stream.to_bytes())} bytes to {args.output}")
        return 0
    Path(args.output).write_bytes(stream.to_bytes())
    _emit([{"frames": stream.header.frame_count, "lr_side": stream.header.lr_side,
            "payload_bytes": len(stream.frame_payload), "startup_bytes": stream.startup_bytes}],
          ["frames", "lr_side", "payload_bytes", "startup_bytes"])
    return 0


def cmd_decode(args):
    from PIL import Image

    from .codec import decode_stream
    from .synthdata.io import save_frame_dir
    from .synthdata.window import dequantize

    lr, ident, header = decode_stream(Path(args.input).read_bytes())
    if args.dry_run:
        print(f"stream ok: {header.frame_count} frames of {header.lr_side}x{header.lr_side}")
        return 0
    out = Path(args.output)
    save_frame_dir(out / "lr", dequantize(lr))
    Image.fromarray(np.ascontiguousarray(ident.transpose(1, 2, 0))).save(out / "identity.png")
    (out / "header.json").write_text(json.dumps({
        "lr_side": header.lr_side, "hr_side": header.hr_side, "fps_mode": int(header.fps_mode),
        "frame_count": header.frame_count, "identity_codec": int(header.identity_codec)}))
    print(f"decoded {header.frame_count} frames to {out}")
    return 0


def cmd_upsample(args):
    from .checkpoint import load_into
    from .codec import FpsMode, decode_stream
    from .evaluation import Pipeline
    from .interp import InterpNet
    from .synthdata.audio import extract_melspectrogram
    from .synthdata.io import load_wav, save_frame_dir
    from .synthdata.window import dequantize
    from .synthdata.generator import VideoClip
    from .synthdata.io import save_clip

    cfg = _config(args)
    run = Path(args.run)
    lr, ident, header = decode_stream(Path(args.input).read_bytes())
    backbone, animator = _load_models(run, cfg, needed_by="upsample")
    interp = None
    if header.fps_mode == FpsMode.FPS5_INTERP:
        interp = InterpNet(cfg.interp_config())
        load_into(interp, _require("train-interp", run / ARTIFACTS["train-interp"], "upsample"), "interp")
    norm = _load_normalizer(run)
    if norm is None:
        raise MissingPrerequisite(f"upsample needs {_normalizer_path(run)}; run `talkup train-backbone` first")
    pipe = Pipeline(backbone, animator, interp)
    lr = dequantize(lr)
    if interp is not None:
        lr = pipe.interpolate(lr)
    mel = norm(extract_melspectrogram(load_wav(args.audio)).mels)
    if args.dry_run:
        print(f"would upsample {len(lr)} frames")
        return 0
    out = pipe.upsample(lr, mel, dequantize(ident))
    dest = Path(args.output)
    if dest.suffix == ".npz":
        save_clip(dest, VideoClip(out.f_hr, 25.0, "upsampled"))
    else:
        save_frame_dir(dest, out.f_hr)
    print(f"wrote {len(out.f_hr)} frames to {dest}")
    return 0


EVAL_COLUMNS = ["clip", "psnr", "psnr_int", "ssim", "lmd", "pose_mae", "lse_d", "frechet"]


def _evaluate(run, cfg, bank, syncnet=None, backbone=None, animator=None):
    from .evaluation import Pipeline, evaluate_bank

    if backbone is None:
        backbone, animator = _load_models(run, cfg, needed_by="eval")
    return evaluate_bank(Pipeline(backbone, animator), bank, syncnet)


def cmd_eval(args):
    from .plotting import plot_frame_strip

    cfg = _config(args)
    run = Path(args.run)
    _require("train-e2e", run / ARTIFACTS["train-e2e"], "eval")
    syncnet = _load_syncnet(run, cfg, "eval") if (run / ARTIFACTS["train-syncnet"]).exists() else None
    bank = _bank(args, cfg, args.split, "eval", _load_normalizer(run))
    if args.dry_run:
        print(f"would evaluate {len(bank)} clips")
        return 0
    rows, agg = _evaluate(run, cfg, bank, syncnet)
    _emit(rows + [agg], EVAL_COLUMNS, run / f"eval_{args.split}.csv")
    from .evaluation import Pipeline
    from .synthdata.degrade import bicubic_downscale

    backbone, animator = _load_models(run, cfg, needed_by="eval")
    c = bank.clips[0]
    lr = bicubic_downscale(c.clip.frames, cfg["model"]["scale_factor"])
    out = Pipeline(backbone, animator).upsample(lr, bank.normalizer(bank.mels[0]), c.clip.frames[0])
    fig = plot_frame_strip([c.clip.frames, out.f_int, out.f_hr], run / f"eval_{args.split}_frames.png",
                           ["ground truth", "F_int", "F_hr"])
    print(f"figure: {fig}")
    return 0


def cmd_bpp(args):
    from fractions import Fraction

    from .codec import PUBLISHED_BASELINES, compute_bpp
    from .plotting import plot_bpp_table

    methods = [args.method] if args.method != "all" else ["ours", "ours_interp", "keypoint_baseline"]
    cfg = _config(args)
    m = cfg["model"]
    rows = []
    for method in methods:
        bits = Fraction(args.bits) if args.bits is not None else None
        rep = compute_bpp(method, lr_side=m["hr_side"] // m["scale_factor"], hr_side=m["hr_side"],
                          bits_per_frame=bits)
        row = rep.as_row()
        row["provenance"] = "recomputed"
        rows.append(row)
    if args.table:
        for name, bpp, *_ in PUBLISHED_BASELINES:
            rows.append({"method": name, "bpp": "n/a" if bpp is None else bpp, "provenance": "ingested"})
    cols = ["method", "bits_per_frame", "bpp", "bpp_exact", "published_bpp", "provenance", "notes"]
    out = Path(args.run) / "bpp.csv" if args.run and not args.dry_run else None
    _emit(rows, cols, out, delimiter="\t" if args.tsv else ",")
    if out is not None:
        print(f"figure: {plot_bpp_table(rows, out.with_suffix('.png'))}")
    return 0


ABLATIONS = {
    "audio": ("use_audio", [True, False], "lse_d"),
    "region-loss": ("use_region", [True, False], "lmd"),
    "pretrain": ("pretrain", [True, False], "final_L_HR"),
    "window": ("window", [3, 5, 7], "psnr"),
}


def run_ablation(kind, values, cfg, train_bank, test_bank, *, backbone_steps, e2e_steps, syncnet=None,
                 seed=0, log_dir=None):
    """Train one model per setting and evaluate it; returns metric rows."""
    from .animator import Animator, FeaturePyramid
    from .backbone import Backbone, BackboneConfig
    from .evaluation import Pipeline, evaluate_bank
    from .training import LossLog, OptimConfig, seed_everything, train_backbone, train_e2e

    if kind not in ABLATIONS:
        raise InvalidArgument(f"unknown ablation {kind!r}; choose from {sorted(ABLATIONS)}")
    rows = []
    base = cfg.backbone_config()
    for v in values:
        seed_everything(seed)
        bcfg = BackboneConfig(**{**base.to_dict(), **({"use_audio": v} if kind == "audio" else {}),
                                 **({"window": int(v)} if kind == "window" else {})})
        opts = cfg.e2e_options()
        if kind == "region-loss":
            opts.use_region = bool(v)
        if kind == "window" or (syncnet is not None and syncnet.config.window != bcfg.window):
            opts.weights.sync = 0.0
        sn = syncnet if opts.weights.sync else None
        if opts.weights.sync and sn is None:
            opts.weights.sync = 0.0
        backbone, animator = Backbone(bcfg), Animator(cfg.animator_config())
        if not (kind == "pretrain" and not v):
            train_backbone(backbone, train_bank, backbone_steps, seed=seed,
                           optim=OptimConfig(total_steps=backbone_steps, **cfg["optim"]))
        log = LossLog(Path(log_dir) / f"ablate_{kind}={v}.jsonl") if log_dir else None
        hist = train_e2e(backbone, animator, train_bank, e2e_steps, syncnet=sn, extractor=FeaturePyramid(),
                         options=opts, seed=seed, optim=OptimConfig(total_steps=e2e_steps, **cfg["optim"]), log=log)
        _, agg = evaluate_bank(Pipeline(backbone, animator), test_bank, syncnet if kind == "audio" else None,
                               with_frechet=False)
        tail = hist[-max(1, len(hist) // 10):]
        agg["final_L_HR"] = float(np.mean([h["L_HR"] for h in tail]))
        agg["setting"] = f"{kind}={v}"
        rows.append(agg)
    return rows


def cmd_ablate(args):
    from .plotting import plot_ablation

    cfg = _config(args)
    run = _run_dir(args, cfg)
    field, default_values, metric = ABLATIONS[args.kind]
    if args.values:
        values = [int(x) for x in args.values.split(",")] if args.kind == "window" else \
            [x.strip().lower() in ("1", "true", "yes", "on") for x in args.values.split(",")]
    else:
        values = default_values
    if args.kind == "window" and any(v not in (3, 5, 7) for v in values):
        raise InvalidArgument("window ablation values must be drawn from 3, 5, 7")
    norm = _load_normalizer(run)
    train_bank = _bank(args, cfg, "train", "ablate", norm)
    test_bank = _bank(args, cfg, "test", "ablate", train_bank.normalizer)
    syncnet = None
    if args.kind == "audio":
        syncnet = _load_syncnet(run, cfg, "ablate audio")
    if args.dry_run:
        print(f"ablate {args.kind}: settings {values}")
        return 0
    rows = run_ablation(args.kind, values, cfg, train_bank, test_bank,
                        backbone_steps=cfg["train_backbone"]["steps"], e2e_steps=cfg["train_e2e"]["steps"],
                        syncnet=syncnet, seed=cfg["seed"], log_dir=run)
    cols = ["setting", "psnr", "ssim", "lmd", "pose_mae", "lse_d", "final_L_HR"]
    out = run / f"ablate_{args.kind}.csv"
    _emit(rows, cols, out)
    print(f"figure: {plot_ablation(rows, metric, out.with_suffix('.png'))}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-backbone": cmd_train_backbone,
    "train-syncnet": cmd_train_syncnet,
    "train-e2e": cmd_train_e2e,
    "train-interp": cmd_train_interp,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "upsample": cmd_upsample,
    "eval": cmd_eval,
    "bpp": cmd_bpp,
    "ablate": cmd_ablate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--scale", type=int, choices=(4, 8, 16, 32))
    common.add_argument("--window", type=int, choices=(3, 5, 7))
    common.add_argument("--no-audio", action="store_true")
    common.add_argument("--no-region-loss", action="store_true")
    common.add_argument("--no-pretrain", action="store_true")
    common.add_argument("--fps-mode", choices=("25", "5interp"), default="25")
    common.add_argument("--dry-run", action="store_true", help="validate inputs, write nothing")
    common.add_argument("--desk", action="store_true", help="64 px reduced-width models for one CPU core")
    common.add_argument("--data", default="data", help="dataset directory")
    common.add_argument("--run", default="runs/default", help="run directory")
    common.add_argument("--steps", type=int, help="override the stage's step count")

    p = argparse.ArgumentParser(prog="talkup", description="Audio-visual talking-face upsampling toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("gen-data", parents=[common], help="write synthetic clip specs and a manifest")
    sp.add_argument("--materialize", action="store_true", help="also write npz/wav/lmk media files")
    for name in ("train-backbone", "train-syncnet", "train-e2e", "train-interp"):
        sub.add_parser(name, parents=[common])
    sp = sub.add_parser("encode", parents=[common], help="clip (.npz, frame dir or .synth.yaml) -> LR stream")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--identity-codec", choices=("raw", "png"), default="raw")
    sp = sub.add_parser("decode", parents=[common], help="LR stream -> frame directory")
    sp.add_argument("input")
    sp.add_argument("output")
    sp = sub.add_parser("upsample", parents=[common], help="LR stream + audio -> HR frames")
    sp.add_argument("input")
    sp.add_argument("output", help=".npz clip or frame directory")
    sp.add_argument("--audio", required=True, help="16 kHz wav")
    sp = sub.add_parser("eval", parents=[common])
    sp.add_argument("--split", default="test")
    sp = sub.add_parser("bpp", parents=[common], help="bits-per-pixel accounting")
    sp.add_argument("--method", default="ours", choices=("ours", "ours_interp", "keypoint_baseline", "custom", "all"))
    sp.add_argument("--bits", help="bits per frame for --method custom")
    sp.add_argument("--table", action="store_true", help="append published comparison rows")
    sp.add_argument("--tsv", action="store_true")
    sp = sub.add_parser("ablate", parents=[common])
    sp.add_argument("kind", choices=sorted(ABLATIONS))
    sp.add_argument("--values", help="comma-separated settings, e.g. 3,5,7")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "bpp" and args.run == "runs/default":
        args.run = None
    try:
        return COMMANDS[args.command](args) or 0
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, InvalidArgument, CorruptStream, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
