"""WAV ingestion and a log-mel filterbank front end."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, FormatError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class WaveformRecord:
    """Mono 16-bit PCM samples."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1:
            raise DataError("only mono waveforms are supported")
        if not np.issubdtype(s.dtype, np.integer):
            raise DataError("samples must be 16-bit integers")
        if s.size and (s.min() < -32768 or s.max() > 32767):
            raise DataError("samples exceed the 16-bit range")
        if self.sample_rate <= 0:
            raise DataError("sample rate must be positive")
        object.__setattr__(self, "samples", s.astype(np.int16))

    @property
    def channels(self) -> int:
        return 1

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64) / 32768.0


def read_wav(path) -> WaveformRecord:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise FormatError(f"{path}: unsupported format: {w.getnchannels()} channels, expected mono")
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: unsupported format: {8 * w.getsampwidth()}-bit samples, expected 16")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable WAV file: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    return WaveformRecord(np.frombuffer(raw, dtype="<i2").copy(), rate)


def write_wav(path, record: WaveformRecord) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(record.sample_rate)
        w.writeframes(record.samples.astype("<i2").tobytes())


def from_float(x, sample_rate: int) -> WaveformRecord:
    """Quantize a [-1, 1) float signal to 16-bit PCM."""
    q = np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767)
    return WaveformRecord(q.astype(np.int16), sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1) with peaks evenly spaced on the mel scale."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_mels, bins.size))
    for i in range(n_mels):
        lo, mid, hi = edges[i:i + 3]
        rise = (bins - lo) / (mid - lo)
        fall = (hi - bins) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def logmel_features(w: WaveformRecord, n_mels: int = 20, frame_ms: float = 25.0,
                    hop_ms: float = 10.0) -> np.ndarray:
    """K x n_mels log-mel energies, one row per hop.

    K = floor((samples - frame) / hop) + 1. The FFT size is the next power of
    two at or above the frame length; energies are floored at 1e-10 before
    the log.
    """
    if w.sample_rate < 8000:
        raise DataError(f"sample rate {w.sample_rate} Hz is below 8 kHz")
    frame = int(round(w.sample_rate * frame_ms / 1000))
    hop = int(round(w.sample_rate * hop_ms / 1000))
    x = w.as_float()
    if x.size < frame:
        raise DataError(f"waveform of {x.size} samples is shorter than one {frame}-sample frame")
    n_fft = 1 << (frame - 1).bit_length()
    frames = sliding_window_view(x, frame)[::hop] * np.hanning(frame)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(n_mels, n_fft, w.sample_rate).T
    return np.log(np.maximum(mel, LOG_FLOOR))
