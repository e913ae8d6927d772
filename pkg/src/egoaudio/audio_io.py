"""WAVE decoding and canonical 16 kHz mono conversion."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from egoaudio.errors import (
    EmptySegmentError,
    FormatError,
    InvalidRangeError,
    UnsupportedChannelCountError,
    UnsupportedEncodingError,
)

TARGET_RATE = 16000
PCM_SCALE = 32768.0
_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Sampled waveform, shape ``(num_channels, num_samples)``, float64 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError(f"samples must be (channels, n), got shape {s.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    @property
    def mono(self) -> np.ndarray:
        if self.num_channels != 1:
            raise UnsupportedChannelCountError("clip is not mono")
        return self.samples[0]


def decode_pcm(data: bytes) -> AudioClip:
    """Parse a RIFF/WAVE byte string holding 16-bit signed PCM (1 or 2 channels).

    Raises ``FormatError`` for structural problems (bad magic, truncated or
    inconsistent chunks) and ``UnsupportedEncodingError`` for anything other
    than 16-bit integer PCM.
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    riff_size = struct.unpack_from("<I", data, 4)[0]
    if riff_size + 8 != len(data):
        raise FormatError(f"RIFF size {riff_size + 8} disagrees with file length {len(data)}")

    fmt = None
    pcm = None
    pos = 12
    while pos < len(data):
        if pos + 8 > len(data):
            raise FormatError("truncated chunk header")
        cid = data[pos:pos + 4]
        size = struct.unpack_from("<I", data, pos + 4)[0]
        body = pos + 8
        if body + size > len(data):
            raise FormatError(f"chunk {cid!r} length {size} runs past end of file")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif cid == b"data":
            pcm = data[body:body + size]
        pos = body + size + (size & 1)
    if fmt is None or pcm is None:
        raise FormatError("missing fmt or data chunk")

    tag, channels, rate, byte_rate, block_align, bits = fmt
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        raise UnsupportedEncodingError("WAVE_FORMAT_EXTENSIBLE is not supported")
    if tag != _WAVE_FORMAT_PCM:
        raise UnsupportedEncodingError(f"format tag {tag} is not integer PCM")
    if bits != 16:
        raise UnsupportedEncodingError(f"{bits}-bit PCM is not supported")
    if channels not in (1, 2):
        raise UnsupportedChannelCountError(f"{channels} channels")
    if rate <= 0:
        raise FormatError("sample rate must be positive")
    if block_align != channels * 2 or byte_rate != rate * block_align:
        raise FormatError("inconsistent block_align/byte_rate")
    if len(pcm) % block_align:
        raise FormatError("data chunk is not a whole number of frames")

    ints = np.frombuffer(pcm, dtype="<i2").reshape(-1, channels).T
    return AudioClip(ints.astype(np.float64) / PCM_SCALE, rate)


def encode_pcm(clip: AudioClip) -> bytes:
    """Inverse of :func:`decode_pcm`; values are clipped to the int16 range."""
    ints = np.clip(np.round(clip.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    pcm = ints.T.tobytes()
    ch = clip.num_channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, _WAVE_FORMAT_PCM, ch, clip.sample_rate,
        clip.sample_rate * ch * 2, ch * 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


def read_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        return decode_pcm(fh.read())


def write_wav(path, clip: AudioClip) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pcm(clip))


def downmix(clip: AudioClip) -> AudioClip:
    if clip.num_channels == 1:
        return clip
    if clip.num_channels != 2:
        raise UnsupportedChannelCountError(f"cannot downmix {clip.num_channels} channels")
    return AudioClip((clip.samples[0] + clip.samples[1]) / 2.0, clip.sample_rate)


def resample(clip: AudioClip, target_rate: int = TARGET_RATE) -> AudioClip:
    """Linear-interpolation resampling of a mono clip.

    Output sample ``j`` sits at source position ``j * source / target``;
    positions past the last input sample hold its value.
    """
    x = clip.mono
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    n_out = int(round(len(x) * target_rate / clip.sample_rate))
    if len(x) == 0 or n_out == 0:
        return AudioClip(np.zeros(0), target_rate)
    pos = np.arange(n_out) * (clip.sample_rate / target_rate)
    return AudioClip(np.interp(pos, np.arange(len(x)), x), target_rate)


def to_canonical(clip: AudioClip, target_rate: int = TARGET_RATE) -> AudioClip:
    """Downmix first, then resample."""
    return resample(downmix(clip), target_rate)


def slice_segment(clip: AudioClip, start_sec: float, stop_sec: float) -> AudioClip:
    """Samples ``[round(start*rate), round(stop*rate))``, stop clamped to the clip end."""
    if start_sec < 0 or start_sec >= stop_sec:
        raise InvalidRangeError(f"invalid range [{start_sec}, {stop_sec})")
    x = clip.mono
    lo = int(round(start_sec * clip.sample_rate))
    hi = min(int(round(stop_sec * clip.sample_rate)), len(x))
    if lo >= len(x) or hi <= lo:
        raise EmptySegmentError(f"segment [{start_sec}, {stop_sec}) lies past clip end")
    return AudioClip(x[lo:hi].copy(), clip.sample_rate)
