"""Per-stage run configuration, loaded from one YAML file.

Unset keys fall back to the defaults below; unknown keys are rejected so a
typo cannot silently change an experiment.
"""
import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError

DEFAULTS = {
    "seed": 0,
    "data": {
        "root": "data",
        "n_train": 8,
        "n_val": 2,
        "n_test": 2,
        "n_frames": 50,
        "synth": {"size": 256},
    },
    "model": {
        "window": 5,
        "scale_factor": 32,
        "hr_side": 256,
        "use_audio": True,
        "backbone": {},
        "animator": {},
        "syncnet": {},
        "interp": {},
    },
    "mel": {"sample_rate": 16000, "hop": 160, "win": 400, "n_fft": 512, "n_mels": 80},
    "loss": {"rec": 50.0, "region": 100.0, "sync": 0.05, "use_region": True, "rec_target": "f_int"},
    "optim": {"lr": 1e-4, "decay_fraction": 0.5, "decay_gamma": 0.1, "patience": 10},
    "train_backbone": {"steps": 2000, "batch_size": 4, "val_every": 50},
    "train_syncnet": {"steps": 2000, "batch_size": 16},
    "train_e2e": {"steps": 2000, "batch_size": 2, "pretrain": True},
    "train_interp": {"steps": 2000, "batch_size": 4},
}

# reduced widths that keep every stage trainable on one CPU core at 64 px
DESK_MODEL = {
    "hr_side": 64,
    "scale_factor": 8,
    "backbone": {"visual_widths": [32, 64], "audio_widths": [16, 32, 64], "proj_widths": [64, 32, 16, 8]},
    "animator": {"kp_resolution": 16, "kp_block_expansion": 16, "kp_max_features": 128, "kp_num_blocks": 3,
                 "motion_block_expansion": 16, "motion_max_features": 128, "motion_num_blocks": 3,
                 "gen_block_expansion": 8, "gen_max_features": 64, "gen_num_down_blocks": 2,
                 "gen_num_bottleneck": 2},
    "syncnet": {"input_size": [32, 64], "video_widths": [16, 32, 64, 128], "audio_widths": [16, 32, 64, 128],
                "batch_norm": True},
}

OPEN_SECTIONS = {("model", "backbone"), ("model", "animator"), ("model", "syncnet"), ("model", "interp"),
                 ("data", "synth")}


def _merge(base, override, path=()):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base and path not in OPEN_SECTIONS:
            raise ConfigurationError(f"unknown config key {'.'.join(path + (key,))!r}")
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            out[key] = _merge(base[key], value, path + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=None, desk=False):
        cfg = copy.deepcopy(DEFAULTS)
        if desk:
            cfg = _merge(cfg, {"model": DESK_MODEL, "data": {"synth": {"size": 64}}})
        if path is not None:
            raw = yaml.safe_load(Path(path).read_text()) or {}
            if not isinstance(raw, dict):
                raise ConfigurationError(f"{path}: top level must be a mapping")
            if raw.pop("desk", False):
                cfg = _merge(cfg, {"model": DESK_MODEL, "data": {"synth": {"size": 64}}})
            cfg = _merge(cfg, raw)
        cfg = _merge(cfg, overrides or {})
        out = cls(cfg)
        out.validate()
        return out

    def __getitem__(self, key):
        return self.data[key]

    def validate(self):
        m = self.data["model"]
        if m["scale_factor"] not in (4, 8, 16, 32):
            raise ConfigurationError(f"scale_factor must be 4, 8, 16 or 32, got {m['scale_factor']}")
        if m["window"] < 1:
            raise ConfigurationError("window must be positive")
        if m["hr_side"] % m["scale_factor"]:
            raise ConfigurationError("hr_side must be divisible by scale_factor")
        if self.data["data"]["synth"].get("size", m["hr_side"]) != m["hr_side"]:
            raise ConfigurationError("data.synth.size must equal model.hr_side")
        mel = self.data["mel"]
        fixed = {"sample_rate": 16000, "hop": 160, "win": 400, "n_fft": 512, "n_mels": 80}
        if mel != fixed:
            raise ConfigurationError(f"mel front end is fixed at {fixed}; got {mel}")
        if self.data["loss"]["rec_target"] not in ("f_int", "f_hr", "both"):
            raise ConfigurationError("loss.rec_target must be f_int, f_hr or both")
        for k in ("rec", "region", "sync"):
            if self.data["loss"][k] < 0:
                raise ConfigurationError(f"loss.{k} must be >= 0")

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.data, sort_keys=True))

    # model builders ------------------------------------------------------

    def backbone_config(self):
        from .backbone import BackboneConfig, default_proj_widths

        m = self.data["model"]
        extra = dict(m["backbone"])
        if "proj_widths" not in extra and m["hr_side"] != 256:
            extra["proj_widths"] = default_proj_widths(m["hr_side"])
        return BackboneConfig(window=m["window"], scale_factor=m["scale_factor"], hr_side=m["hr_side"],
                              use_audio=m["use_audio"], **extra)

    def animator_config(self):
        from .animator import AnimatorConfig

        return AnimatorConfig(**self.data["model"]["animator"])

    def syncnet_config(self):
        from .syncnet import SyncNetConfig

        return SyncNetConfig(window=self.data["model"]["window"], **self.data["model"]["syncnet"])

    def interp_config(self):
        from .interp import InterpConfig

        return InterpConfig(**self.data["model"]["interp"])

    def synth_spec(self):
        from .synthdata import SynthSpec

        return SynthSpec.from_mapping(self.data["data"]["synth"])

    def optim(self, steps):
        from .training import OptimConfig

        return OptimConfig(total_steps=steps, **self.data["optim"])

    def e2e_options(self):
        from .animator import LossWeights
        from .training import E2EOptions

        loss = self.data["loss"]
        return E2EOptions(weights=LossWeights(loss["rec"], loss["region"], loss["sync"]),
                          use_region=loss["use_region"], rec_target=loss["rec_target"])
