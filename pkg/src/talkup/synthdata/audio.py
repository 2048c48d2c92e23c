"""Audio tracks, synthetic speech-like signals and log-mel features."""
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument

SAMPLE_RATE = 16000
HOP = 160  # 10 ms
WIN = 400  # 25 ms
N_FFT = 512
N_MELS = 80
FMIN = 55.0
FMAX = 7600.0
LOG_FLOOR = 1e-5
MEL_STEPS_PER_FRAME = 4  # at 25 FPS


@dataclass
class AudioTrack:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise InvalidArgument("audio samples must be 1-D")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def shifted(self, n_samples):
        """Circularly delay the track by ``n_samples`` (negative advances)."""
        return AudioTrack(np.roll(self.samples, n_samples), self.sample_rate)


@dataclass
class MelSpectrogram:
    mels: np.ndarray  # (T', 80)
    hop_ms: float = 10.0
    win_ms: float = 25.0


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels=N_MELS, fmin=FMIN, fmax=FMAX):
    """(n_mels + 2) frequencies: lower edge, centres, upper edge of each triangle."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sr=SAMPLE_RATE, fmin=FMIN, fmax=FMAX):
    """Triangular HTK-style filterbank, shape (n_mels, n_fft // 2 + 1)."""
    edges = mel_band_edges(n_mels, fmin, fmax)
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


_FB = mel_filterbank()
_WINDOW = np.hanning(WIN + 1)[:-1]  # periodic Hann


def extract_melspectrogram(audio):
    """Log-mel spectrogram, one step per 10 ms hop.

    The signal is reflect-padded by half a window on both sides and
    ``len // 160`` frames are taken, so 0.2 s of audio gives exactly 20
    steps and every 40 ms video frame owns 4 steps.
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise InvalidArgument(f"expected {SAMPLE_RATE} Hz audio, got {audio.sample_rate} Hz")
    x = np.asarray(audio.samples, dtype=np.float64)
    n_steps = len(x) // HOP
    if n_steps == 0:
        raise InvalidArgument("audio shorter than one hop")
    pad = WIN // 2
    mode = "reflect" if len(x) > pad else "constant"
    xp = np.pad(x, pad, mode=mode)
    idx = np.arange(n_steps)[:, None] * HOP + np.arange(WIN)[None]
    frames = xp[idx] * _WINDOW
    mag = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))
    mel = mag @ _FB.T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32))


@dataclass
class MelNormalizer:
    """Corpus-level min-max scaling of log-mel values into [0, 1]."""

    lo: float = float(np.log(LOG_FLOOR))
    hi: float = 4.0

    @classmethod
    def fit(cls, mels):
        stacked = np.concatenate([np.ravel(m) for m in mels])
        lo, hi = float(stacked.min()), float(stacked.max())
        if hi <= lo:
            hi = lo + 1.0
        return cls(lo, hi)

    def __call__(self, mel):
        return np.clip((np.asarray(mel) - self.lo) / (self.hi - self.lo), 0.0, 1.0).astype(np.float32)


def envelope_signal(kind, n_samples, rng, rate_hz=4.0, sr=SAMPLE_RATE):
    """Amplitude envelope in [0, 1] driving both loudness and mouth opening."""
    t = np.arange(n_samples) / sr
    if kind == "zero":
        return np.zeros(n_samples)
    if kind == "sine":
        return 0.5 - 0.5 * np.cos(2 * np.pi * rate_hz * t)
    if kind != "random":
        raise InvalidArgument(f"unknown envelope kind {kind!r}")
    # syllable-like bumps: raised cosines at jittered onsets
    env = np.zeros(n_samples)
    duration = n_samples / sr
    onset = rng.uniform(0.0, 1.0 / rate_hz)
    while onset < duration:
        width = rng.uniform(0.08, 0.22)
        height = rng.uniform(0.25, 1.0)
        m = (t >= onset) & (t < onset + width)
        env[m] = np.maximum(env[m], height * 0.5 * (1 - np.cos(2 * np.pi * (t[m] - onset) / width)))
        onset += width + rng.exponential(0.6 / rate_hz) + 0.02
    return np.clip(env, 0.0, 1.0)


def voiced_carrier(n_samples, rng, f0=None, sr=SAMPLE_RATE):
    """Harmonic buzz plus a little noise, peak-normalised."""
    t = np.arange(n_samples) / sr
    if f0 is None:
        f0 = rng.uniform(100.0, 220.0)
    vib = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(3, 6) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * vib) / sr
    sig = np.zeros(n_samples)
    for k in range(1, 12):
        if k * f0 * 1.05 >= sr / 2:
            break
        sig += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    sig += 0.15 * rng.standard_normal(n_samples)
    peak = np.max(np.abs(sig))
    return sig / peak if peak > 0 else sig


def frame_rms(samples, n_frames, fps=25, sr=SAMPLE_RATE):
    """RMS of each co-timed 1/fps window."""
    spf = sr // fps
    x = np.asarray(samples, dtype=np.float64)[: n_frames * spf]
    x = np.pad(x, (0, n_frames * spf - len(x)))
    return np.sqrt(np.mean(x.reshape(n_frames, spf) ** 2, axis=1))


def pure_tone(freq, seconds, amplitude=0.5, sr=SAMPLE_RATE):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioTrack(amplitude * np.sin(2 * np.pi * freq * t), sr)
