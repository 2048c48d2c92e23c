from .audio import (
    AudioTrack,
    MelNormalizer,
    MelSpectrogram,
    extract_melspectrogram,
    frame_rms,
    mel_filterbank,
    pure_tone,
)
from .degrade import bicubic_downscale, downscale_matrix
from .face import REGIONS, FaceIdentity
from .generator import (
    SynthSpec,
    SyntheticClip,
    VideoClip,
    aperture_from_rms,
    generate_synthetic_clip,
    mouth_aperture,
)
from .manifest import DatasetManifest, ManifestEntry, build_manifest
from .window import FaceTrackSample, collate, dequantize, quantize, sample_window

__all__ = [
    "AudioTrack",
    "DatasetManifest",
    "FaceIdentity",
    "FaceTrackSample",
    "ManifestEntry",
    "MelNormalizer",
    "MelSpectrogram",
    "REGIONS",
    "SynthSpec",
    "SyntheticClip",
    "VideoClip",
    "aperture_from_rms",
    "bicubic_downscale",
    "build_manifest",
    "collate",
    "dequantize",
    "downscale_matrix",
    "extract_melspectrogram",
    "frame_rms",
    "generate_synthetic_clip",
    "mel_filterbank",
    "mouth_aperture",
    "pure_tone",
    "quantize",
    "sample_window",
]
