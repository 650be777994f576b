"""Frame-level acoustic features and an energy VAD for 8 kHz telephony audio.

Each 50 ms frame (400 samples, no overlap) maps to a 30-dim vector laid out as::

    [log_energy, f0_hz, voicing, zcr, log_mel_0 .. log_mel_25]

The last 2 s of an IPU become a 40 x 30 matrix, left-padded with zero rows
when the IPU is shorter.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SAMPLE_RATE = 8000
FRAME_MS = 50
FRAME_LEN = SAMPLE_RATE * FRAME_MS // 1000
N_FRAMES = 40
N_MELS = 26
N_FFT = 512
FEATURE_DIM = 4 + N_MELS
EPS = 1e-10
MIN_LAG, MAX_LAG = 20, 133  # 400 Hz .. ~60 Hz
VOICING_THRESHOLD = 0.3
FEATURE_NAMES = ("log_energy", "f0_hz", "voicing", "zcr") + tuple(f"log_mel_{i}" for i in range(N_MELS))


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ValueError(f"sample rate {self.sample_rate_hz} Hz not supported (need {SAMPLE_RATE})")
        if self.samples.ndim != 1:
            raise ValueError("audio must be mono")
        if not np.isfinite(self.samples).all():
            raise ValueError("audio contains non-finite samples")

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate_hz


@dataclass
class FrameMatrix:
    values: np.ndarray
    valid_frames: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != FRAME_LEN:
        raise ValueError(f"frame must have {FRAME_LEN} samples, got {x.shape[-1]}")
    return x


def frame_energy(frame) -> float | np.ndarray:
    """log10(mean square + 1e-10); accepts one frame or a stack of frames."""
    x = _frames(frame)
    out = np.log10((x * x).mean(axis=-1) + EPS)
    return float(out) if out.ndim == 0 else out


def frame_zcr(frame) -> float | np.ndarray:
    """Fraction of adjacent sample pairs whose sign differs (zero counts as positive)."""
    x = _frames(frame)
    pos = x >= 0
    out = (pos[..., 1:] != pos[..., :-1]).sum(axis=-1) / (FRAME_LEN - 1)
    return float(out) if np.ndim(out) == 0 else out


def _pitch(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xc = x - x.mean(axis=-1, keepdims=True)
    spec = np.fft.rfft(xc, n=1024, axis=-1)
    ac = np.fft.irfft(spec.real**2 + spec.imag**2, n=1024, axis=-1)[..., : MAX_LAG + 1]
    r0 = ac[..., 0]
    lag = np.argmax(ac[..., MIN_LAG:], axis=-1) + MIN_LAG
    peak = np.take_along_axis(ac, lag[..., None], axis=-1)[..., 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.where(r0 > 0, peak / np.where(r0 > 0, r0, 1.0), 0.0)
    voiced = norm > VOICING_THRESHOLD
    f0 = np.where(voiced, SAMPLE_RATE / lag, 0.0)
    return f0, voiced.astype(np.float64)


def frame_pitch(frame) -> tuple[float, int]:
    """Autocorrelation pitch over lags 20..133; unvoiced when the normalised peak is <= 0.3."""
    f0, v = _pitch(_frames(frame)[None, :])
    return float(f0[0]), int(v[0])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges() -> np.ndarray:
    """The N_MELS + 2 filter corner frequencies in Hz, 0 to 4000 Hz evenly spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(SAMPLE_RATE / 2), N_MELS + 2))


def mel_band_centers() -> np.ndarray:
    return mel_band_edges()[1:-1]


@lru_cache(maxsize=1)
def _mel_matrix() -> np.ndarray:
    edges = mel_band_edges()
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    fb = np.zeros((N_MELS, freqs.size))
    for m in range(N_MELS):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (c - lo)
        fall = (hi - freqs) / (hi - c)
        fb[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=1)
def _hann() -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(FRAME_LEN) / FRAME_LEN)
    w.setflags(write=False)
    return w


def mel_filterbank(frame) -> np.ndarray:
    """26 log mel-band energies (natural log of power + 1e-10)."""
    x = _frames(frame)
    spec = np.fft.rfft(x * _hann(), n=N_FFT, axis=-1)
    power = spec.real**2 + spec.imag**2
    return np.log(power @ _mel_matrix().T + EPS)


def frame_features(frames) -> np.ndarray:
    """(..., 400) samples -> (..., 30) feature vectors."""
    x = _frames(frames)
    single = x.ndim == 1
    x2 = x.reshape(-1, FRAME_LEN)
    f0, voiced = _pitch(x2)
    feats = np.concatenate(
        [
            np.log10((x2 * x2).mean(axis=-1) + EPS)[:, None],
            f0[:, None],
            voiced[:, None],
            frame_zcr(x2)[:, None],
            mel_filterbank(x2),
        ],
        axis=1,
    )
    return feats[0] if single else feats.reshape(x.shape[:-1] + (FEATURE_DIM,))


def extract_frame_matrix(
    clip: AudioClip, ipu_end_ms: int, ipu_start_ms: int = 0, n_frames: int = N_FRAMES
) -> FrameMatrix:
    """Features of the ``n_frames`` 50 ms frames ending at ``ipu_end_ms``.

    Frames that would begin before ``ipu_start_ms`` (or before the clip) are
    zero rows at the top of the matrix.
    """
    end = int(ipu_end_ms) * SAMPLE_RATE // 1000
    if end > len(clip.samples):
        raise ValueError(f"ipu_end_ms {ipu_end_ms} beyond clip length {clip.duration_ms:.0f} ms")
    first = max(0, int(ipu_start_ms) * SAMPLE_RATE // 1000)
    valid = min(n_frames, max(0, (end - first) // FRAME_LEN))
    values = np.zeros((n_frames, FEATURE_DIM))
    if valid:
        seg = clip.samples[end - valid * FRAME_LEN : end].reshape(valid, FRAME_LEN)
        values[n_frames - valid :] = frame_features(seg)
    return FrameMatrix(values, valid)


def detect_speech_regions(clip: AudioClip) -> list[tuple[int, int]]:
    """Energy VAD on 50 ms frames.

    A frame is speech when its energy exceeds the clip's 10th-percentile frame
    energy by more than 6 dB.  Single non-speech frames between speech frames
    are bridged (one-frame hangover).  Returns ``(start_ms, end_ms)`` runs.
    """
    n = len(clip.samples) // FRAME_LEN
    if n == 0:
        return []
    frames = clip.samples[: n * FRAME_LEN].reshape(n, FRAME_LEN)
    db = 10.0 * frame_energy(frames)
    speech = db > np.percentile(db, 10) + 6.0
    for i in range(1, n - 1):
        if not speech[i] and speech[i - 1] and speech[i + 1]:
            speech[i] = True
    regions = []
    i = 0
    while i < n:
        if speech[i]:
            j = i
            while j < n and speech[j]:
                j += 1
            regions.append((i * FRAME_MS, j * FRAME_MS))
            i = j
        else:
            i += 1
    return regions
