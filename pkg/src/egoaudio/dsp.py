"""Fixed-window log-power spectrogram features (331 x 248 images)."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from egoaudio.audio_io import AudioClip
from egoaudio.errors import (
    ConfigError,
    DomainError,
    FormatError,
    InvalidLengthError,
    TooShortError,
)


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    frame_len: int = 661
    hop: int = 256
    window_seconds: float = 4.0
    log_epsilon: float = 1e-10

    def __post_init__(self):
        if self.frame_len < 1 or self.hop < 1:
            raise ConfigError("frame_len and hop must be >= 1")
        if self.window_samples < self.frame_len:
            raise ConfigError("analysis window shorter than one frame")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def freq_bins(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def time_frames(self) -> int:
        return num_frames(self.window_samples, self)


DEFAULT_CONFIG = StftConfig()


@dataclass
class SpectrogramImage:
    """Normalized log-power image; columns at and after ``valid_frames`` are zero."""

    values: np.ndarray
    valid_frames: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hamming_window(n: int) -> np.ndarray:
    if n < 2:
        raise InvalidLengthError(f"window length must be >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def num_frames(length: int, cfg: StftConfig = DEFAULT_CONFIG) -> int:
    if length < cfg.frame_len:
        raise TooShortError(f"signal of {length} samples is shorter than one frame ({cfg.frame_len})")
    return 1 + (length - cfg.frame_len) // cfg.hop


def frame_signal(samples: np.ndarray, cfg: StftConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Frames as rows of a ``(num_frames, frame_len)`` array (a strided view, no copy)."""
    x = np.asarray(samples)
    n = num_frames(len(x), cfg)
    return np.lib.stride_tricks.as_strided(
        x, shape=(n, cfg.frame_len), strides=(x.strides[0] * cfg.hop, x.strides[0]), writeable=False
    )


def stft(samples: np.ndarray, cfg: StftConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Complex spectrum of shape ``(freq_bins, num_frames)``, Hamming-windowed, no centering."""
    x = np.asarray(samples, dtype=np.float64)
    frames = frame_signal(x, cfg) * hamming_window(cfg.frame_len)
    return np.fft.rfft(frames, axis=1).T


def power_spectrogram(spec: np.ndarray) -> np.ndarray:
    return spec.real ** 2 + spec.imag ** 2


def log_compress(power: np.ndarray, epsilon: float = 1e-10) -> np.ndarray:
    p = np.asarray(power, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("power spectrogram has negative entries")
    return np.log(p + epsilon)


def normalize(values: np.ndarray) -> np.ndarray:
    """Standardize to zero mean and unit population std; constant input maps to zeros."""
    s = np.asarray(values, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot normalize an empty matrix")
    centered = s - s.mean()
    sigma = np.sqrt(np.mean(centered ** 2))
    if sigma == 0.0:
        return np.zeros_like(s)
    return centered / sigma


def featurize_samples(samples: np.ndarray, cfg: StftConfig = DEFAULT_CONFIG,
                      dtype=np.float32) -> SpectrogramImage:
    """Truncate to the analysis window, STFT -> power -> log -> normalize, zero-pad to full width.

    Computation runs in float64; the result is cast to ``dtype`` at the end.
    """
    x = np.asarray(samples, dtype=np.float64)[: cfg.window_samples]
    logp = log_compress(power_spectrogram(stft(x, cfg)), cfg.log_epsilon)
    valid = logp.shape[1]
    out = np.zeros((cfg.freq_bins, cfg.time_frames), dtype=dtype)
    out[:, :valid] = normalize(logp)
    return SpectrogramImage(out, valid)


def featurize_segment(clip: AudioClip, cfg: StftConfig = DEFAULT_CONFIG,
                      dtype=np.float32) -> SpectrogramImage:
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigError(f"clip rate {clip.sample_rate} Hz != {cfg.sample_rate} Hz")
    return featurize_samples(clip.mono, cfg, dtype)


# --- EGOSPEC1 feature files -------------------------------------------------

SPEC_MAGIC = b"EGOSPEC1"
_SPEC_HEADER = struct.Struct("<8sIII")


def encode_feature(img: SpectrogramImage) -> bytes:
    rows, cols = img.values.shape
    if not 0 <= img.valid_frames <= cols:
        raise FormatError("valid_frames out of range")
    body = np.ascontiguousarray(img.values, dtype="<f4").tobytes()
    return _SPEC_HEADER.pack(SPEC_MAGIC, rows, cols, img.valid_frames) + body


def decode_feature(data: bytes) -> SpectrogramImage:
    if len(data) < _SPEC_HEADER.size:
        raise FormatError("feature file too short")
    magic, rows, cols, valid = _SPEC_HEADER.unpack_from(data)
    if magic != SPEC_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    expected = _SPEC_HEADER.size + rows * cols * 4
    if len(data) != expected:
        raise FormatError(f"feature file is {len(data)} bytes, header implies {expected}")
    if valid > cols:
        raise FormatError("valid_frames exceeds column count")
    values = np.frombuffer(data, dtype="<f4", offset=_SPEC_HEADER.size).reshape(rows, cols)
    return SpectrogramImage(values.astype(np.float32), valid)


def write_feature(path, img: SpectrogramImage) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_feature(img))


def read_feature(path) -> SpectrogramImage:
    with open(path, "rb") as fh:
        return decode_feature(fh.read())
