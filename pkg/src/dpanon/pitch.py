"""Pitch estimation, zero handling, normalization and pitch conversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp_core import laplace_noise
from .errors import CalibrationError, DataError, DegenerateInputError

FRAME_MS = 10.0
STD_FLOOR = 1e-6
NAIVE_CLIP = 4.0


@dataclass(frozen=True)
class VoicedView:
    """Voiced frames of a pitch sequence plus where the zeros were."""

    voiced: np.ndarray
    zero_positions: np.ndarray
    length: int

    def with_voiced(self, voiced) -> VoicedView:
        return VoicedView(np.asarray(voiced, dtype=np.float64), self.zero_positions, self.length)


@dataclass(frozen=True)
class PitchStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std >= 0:
            raise DataError(f"pitch std must be non-negative, got {self.std}")


@dataclass(frozen=True)
class CorpusPitchSummary:
    length_min: float
    length_max: float
    length_avg: float
    length_std: float
    nonzero_min: float
    nonzero_max: float
    nonzero_avg: float
    nonzero_std: float


def as_pitch(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DataError(f"pitch sequence must be 1-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DataError("pitch values must be finite and non-negative")
    return p


def estimate_pitch(
    waveform,
    sample_rate: int,
    frame_ms: float = FRAME_MS,
    f0_range: tuple[float, float] = (60.0, 400.0),
    window_ms: float = 40.0,
    voicing_threshold: float = 0.5,
    energy_floor: float = 1e-4,
) -> np.ndarray:
    """Autocorrelation F0 tracker, one value per ``frame_ms`` hop; 0 = unvoiced.

    Each frame takes a ``window_ms`` window centred on the hop and computes the
    normalized cross-correlation over lags in the F0 search range. A frame is
    voiced when its RMS exceeds ``energy_floor`` (relative to full scale 1.0)
    and the correlation peak reaches ``voicing_threshold``. The shortest lag
    within 10% of the best peak wins, which suppresses octave-down errors.
    """
    x = np.asarray(waveform, dtype=np.float64).ravel()
    if x.size == 0:
        raise DataError("empty waveform")
    if sample_rate < 8000:
        raise DataError(f"sample rate must be at least 8 kHz, got {sample_rate}")
    fmin, fmax = f0_range
    if not 0 < fmin < fmax <= sample_rate / 2:
        raise DataError(f"f0 range {f0_range} must satisfy 0 < min < max <= Nyquist")

    hop = int(round(sample_rate * frame_ms / 1000.0))
    win = int(round(sample_rate * window_ms / 1000.0))
    lag_min = max(1, int(np.floor(sample_rate / fmax)))
    lag_max = int(np.ceil(sample_rate / fmin))
    n_frames = max(1, x.size // hop)

    half = win // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(win + lag_max)])
    f0 = np.zeros(n_frames)
    for i in range(n_frames):
        start = i * hop + hop // 2  # index of window start in padded coords
        seg = padded[start:start + win]
        if np.sqrt(np.mean(seg**2)) < energy_floor:
            continue
        ext = padded[start:start + win + lag_max]
        e0 = np.dot(seg, seg)
        # sliding energies and cross-correlations for all candidate lags
        lags = np.arange(lag_min, lag_max + 1)
        frames = np.lib.stride_tricks.sliding_window_view(ext, win)[lags]
        cross = frames @ seg
        energies = np.einsum("ij,ij->i", frames, frames)
        denom = np.sqrt(e0 * energies)
        nccf = np.divide(cross, denom, out=np.zeros_like(cross), where=denom > 0)
        best = nccf.max()
        if best < voicing_threshold:
            continue
        j = int(np.argmax(nccf >= 0.9 * best))
        # climb to the local maximum of this peak before interpolating
        while j + 1 < nccf.size and nccf[j + 1] > nccf[j]:
            j += 1
        lag = float(lags[j])
        if 0 < j < nccf.size - 1:
            a, b, c = nccf[j - 1], nccf[j], nccf[j + 1]
            curv = a - 2 * b + c
            if curv < 0:
                lag += 0.5 * (a - c) / curv
        f0[i] = sample_rate / lag
    return f0


def remove_zeros(p) -> VoicedView:
    p = as_pitch(p)
    mask = p > 0
    if not mask.any():
        raise DegenerateInputError("pitch sequence has no voiced frames")
    return VoicedView(p[mask].copy(), np.flatnonzero(~mask), int(p.size))


def reinsert_zeros(view: VoicedView) -> np.ndarray:
    n_voiced = view.length - view.zero_positions.size
    voiced = np.asarray(view.voiced, dtype=np.float64)
    if voiced.ndim != 1 or voiced.size != n_voiced:
        raise DataError(f"expected {n_voiced} voiced values, got {voiced.size}")
    out = np.zeros(view.length)
    mask = np.ones(view.length, dtype=bool)
    mask[view.zero_positions] = False
    out[mask] = voiced
    return out


def normalize(voiced) -> tuple[np.ndarray, PitchStats]:
    """Zero mean, unit population std."""
    v = np.asarray(voiced, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise DataError("normalization needs at least two values")
    mean = float(v.mean())
    std = float(v.std())
    if std < STD_FLOOR:
        raise DegenerateInputError(f"constant pitch sequence (std={std:.3g})")
    return (v - mean) / std, PitchStats(mean, std)


def pitch_convert(z, target: PitchStats) -> np.ndarray:
    if not target.std > 0:
        raise DataError(f"target std must be positive, got {target.std}")
    return np.asarray(z, dtype=np.float64) * target.std + target.mean


def naive_dp_pitch(
    z, epsilon: float, rng: np.random.Generator, level: str = "frame"
) -> np.ndarray:
    """Input-perturbation baseline: clip to [-4, 4] then add Laplace noise.

    ``level="frame"`` calibrates to one entry (sensitivity 8, scale 8/eps).
    ``level="utterance"`` calibrates to the whole sequence (sensitivity 8*K),
    which is the guarantee the autoencoder's epsilon describes.
    """
    if not epsilon > 0:
        raise CalibrationError(f"epsilon must be positive, got {epsilon}")
    z = np.clip(np.asarray(z, dtype=np.float64), -NAIVE_CLIP, NAIVE_CLIP)
    width = 2 * NAIVE_CLIP
    if level == "frame":
        sensitivity = width
    elif level == "utterance":
        sensitivity = width * z.size
    else:
        raise ValueError(f"unknown level {level!r}")
    return z + laplace_noise(sensitivity / epsilon, z.shape, rng)


def corpus_pitch_stats(corpus) -> CorpusPitchSummary:
    seqs = [as_pitch(p) for p in corpus]
    if not seqs:
        raise DataError("empty corpus")
    lengths = np.array([p.size for p in seqs], dtype=np.float64)
    if np.any(lengths == 0):
        raise DataError("corpus contains an empty pitch sequence")
    fracs = np.array([np.count_nonzero(p) / p.size for p in seqs])
    return CorpusPitchSummary(
        lengths.min(), lengths.max(), lengths.mean(), lengths.std(),
        fracs.min(), fracs.max(), fracs.mean(), fracs.std(),
    )
