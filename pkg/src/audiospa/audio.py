"""Clip containers and WAV I/O."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import DomainError

DEFAULT_SAMPLE_RATE = 24000


@dataclass(frozen=True)
class MonauralClip:
    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise DomainError(f"mono clip must be a non-empty 1-D sequence, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DomainError("mono clip contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class BinauralClip:
    """Two-channel clip stored as a ``(2, N)`` array, row 0 = left ear."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] != 2 or samples.shape[1] < 1:
            raise DomainError(f"binaural clip must have shape (2, N), got {samples.shape}")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_channels(cls, left, right, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> "BinauralClip":
        left = np.asarray(left, dtype=np.float64)
        right = np.asarray(right, dtype=np.float64)
        if left.shape != right.shape:
            raise DomainError(f"channel length mismatch: {left.shape} vs {right.shape}")
        return cls(np.stack([left, right]), sample_rate_hz)

    @classmethod
    def duplicate(cls, mono: MonauralClip) -> "BinauralClip":
        """The 'Mono' baseline: the same signal at both ears."""
        return cls(np.stack([mono.samples, mono.samples]), mono.sample_rate_hz)

    @property
    def left(self) -> np.ndarray:
        return self.samples[0]

    @property
    def right(self) -> np.ndarray:
        return self.samples[1]

    def __len__(self) -> int:
        return self.samples.shape[1]


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise DomainError(f"unsupported WAV sample type {data.dtype}")


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64, shape ``(channels, N)``."""
    try:
        rate, data = wavfile.read(os.fspath(path))
    except (OSError, ValueError) as exc:
        raise DomainError(f"cannot read WAV file {path}: {exc}") from exc
    data = _to_float(data)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return np.ascontiguousarray(data), int(rate)


def read_mono(path) -> MonauralClip:
    data, rate = read_wav(path)
    if data.shape[0] != 1:
        raise DomainError(f"{path}: expected 1 channel, found {data.shape[0]}")
    return MonauralClip(data[0], rate)


def read_binaural(path) -> BinauralClip:
    data, rate = read_wav(path)
    if data.shape[0] != 2:
        raise DomainError(f"{path}: expected 2 channels, found {data.shape[0]}")
    return BinauralClip(data, rate)


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wav(path, clip) -> None:
    """Write a mono or binaural clip as float32 WAV (atomically)."""
    import io

    if isinstance(clip, MonauralClip):
        data = clip.samples.astype(np.float32)
    elif isinstance(clip, BinauralClip):
        data = clip.samples.T.astype(np.float32)
    else:
        raise TypeError(f"expected MonauralClip or BinauralClip, got {type(clip).__name__}")
    buf = io.BytesIO()
    wavfile.write(buf, clip.sample_rate_hz, np.ascontiguousarray(data))
    atomic_write_bytes(path, buf.getvalue())
