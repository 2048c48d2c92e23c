"""Dataset manifests with identity-disjoint train/test splits."""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..errors import InvalidArgument, ManifestError

SYNTHETIC = "SYNTHETIC"


@dataclass
class ManifestEntry:
    video: str
    audio: str
    landmarks: str
    identity: str
    split: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    def identities(self, split):
        return {e.identity for e in self.entries if e.split == split}

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def overlap(self):
        splits = sorted({e.split for e in self.entries})
        shared = set()
        for i, a in enumerate(splits):
            for b in splits[i + 1:]:
                shared |= self.identities(a) & self.identities(b)
        return shared

    def validate(self):
        shared = self.overlap()
        if shared:
            raise ManifestError(
                f"identities appear in more than one split: {', '.join(sorted(shared))}", shared)
        return self

    def summary(self):
        return {s: len(self.identities(s)) for s in sorted({e.split for e in self.entries})}

    def write(self, path):
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path):
        entries = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    entries.append(ManifestEntry(**json.loads(line)))
        return cls(entries).validate()


def _discover(root):
    """Yield (stem, video, audio, landmarks, identity) for every clip under ``root``."""
    root = Path(root)
    for spec_path in sorted(root.glob("*.synth.yaml")):
        stem = spec_path.name[: -len(".synth.yaml")]
        with open(spec_path) as fh:
            meta = yaml.safe_load(fh) or {}
        identity = meta.get("identity") or f"synth{int(meta.get('identity_seed', meta.get('seed', 0))):04d}"
        yield stem, str(spec_path), str(spec_path), SYNTHETIC, str(identity)
    for clip_path in sorted(root.glob("*.npz")):
        stem = clip_path.stem
        with np.load(clip_path, allow_pickle=False) as z:
            identity = str(z["identity"]) if "identity" in z else stem
        audio = root / f"{stem}.wav"
        lmk = root / f"{stem}.lmk"
        yield stem, str(clip_path), str(audio), str(lmk) if lmk.exists() else SYNTHETIC, identity


def assign_splits(identities, split_spec):
    """Map identity -> split name.

    ``split_spec`` is either ``{"assign": {identity: split}}`` or fractions
    like ``{"train": 0.8, "test": 0.2, "seed": 0}``; fractions shuffle the
    sorted identity list with the seed and cut it in order.
    """
    identities = sorted(set(identities))
    if "assign" in split_spec:
        mapping = dict(split_spec["assign"])
        missing = [i for i in identities if i not in mapping]
        if missing:
            raise InvalidArgument(f"no split given for identities: {missing}")
        return mapping
    fractions = {k: float(v) for k, v in split_spec.items() if k != "seed"}
    if not fractions or abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise InvalidArgument(f"split fractions must sum to 1, got {fractions}")
    order = list(np.random.default_rng(split_spec.get("seed", 0)).permutation(len(identities)))
    names = list(fractions)
    mapping, start = {}, 0
    for i, name in enumerate(names):
        count = len(identities) - start if i == len(names) - 1 else int(round(fractions[name] * len(identities)))
        for j in order[start:start + count]:
            mapping[identities[j]] = name
        start += count
    return mapping


def build_manifest(root, split_spec):
    """Scan ``root`` and assign identity-disjoint splits.

    A per-entry ``split`` in the spec (``{"entries": {stem: split}}``) is
    honoured too, which is the path where overlaps can occur; they are
    rejected with the offending identities listed.
    """
    found = list(_discover(root))
    if not found:
        raise InvalidArgument(f"no clips found under {root}")
    if "entries" in split_spec:
        per_entry = split_spec["entries"]
        entries = [ManifestEntry(v, a, l, ident, per_entry[stem]) for stem, v, a, l, ident in found]
    else:
        mapping = assign_splits([f[4] for f in found], split_spec)
        entries = [ManifestEntry(v, a, l, ident, mapping[ident]) for _, v, a, l, ident in found]
    return DatasetManifest(entries).validate()
