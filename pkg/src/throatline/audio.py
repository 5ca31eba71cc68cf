"""Sample buffers, frame segmentation, SPSC ring buffers, WAV I/O, and resampling."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_RATE = 24000
DEFAULT_FRAME_LEN = 1920  # 80 ms at 24 kHz

PCM16_SCALE = 32768.0
PCM16_MAX = 32767.0 / 32768.0

_WAVE_PCM = 1
_WAVE_FLOAT = 3


class FormatError(ValueError):
    """Raised for malformed or truncated WAV data."""


class UnsupportedFormatError(FormatError):
    """Raised for WAV encodings other than PCM16 and IEEE float32."""


@dataclass(frozen=True)
class SampleBuffer:
    """Mono PCM audio: float32 samples (nominal range [-1, 1]) at a fixed rate.

    Immutable after construction; samples must be finite and the rate positive.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if not np.isfinite(samples).all():
            raise ValueError("samples must be finite (no NaN/Inf)")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class Frame:
    """One fixed-length block of samples with its position in the stream."""

    samples: np.ndarray
    index: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        object.__setattr__(self, "samples", samples)

    @property
    def frame_len(self) -> int:
        return self.samples.shape[0]


def frame_split(buffer: SampleBuffer, frame_len: int) -> tuple[list[Frame], int]:
    """Cut a buffer into consecutive fixed-size frames.

    Returns (frames, dropped): the trailing partial frame is dropped, not
    padded, and its sample count is reported as ``dropped``.
    """
    if frame_len <= 0:
        raise ValueError("frame_len must be > 0")
    n = len(buffer)
    n_frames = n // frame_len
    dropped = n - n_frames * frame_len
    frames = [
        Frame(buffer.samples[i * frame_len : (i + 1) * frame_len], i)
        for i in range(n_frames)
    ]
    return frames, dropped


class RingBuffer:
    """Single-producer/single-consumer ring buffer over float32 samples.

    Push never overwrites unread data (excess is rejected and counted as
    overruns); pull never blocks (shortfall is zero-filled and counted as
    underruns).  Cursors are monotone counters; capacity must be a power of
    two.  The push/pull paths perform a bounded number of slice copies into
    preallocated storage and take no locks, so one producer and one consumer
    may run from two threads concurrently.
    """

    def __init__(self, capacity: int):
        if capacity <= 0 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        self._data = np.zeros(capacity, dtype=np.float32)
        self._mask = capacity - 1
        self._write = 0
        self._read = 0
        self.underruns = 0
        self.overruns = 0

    @property
    def capacity(self) -> int:
        return self._mask + 1

    def available(self) -> int:
        """Samples ready to pull (consumer view)."""
        return self._write - self._read

    def free(self) -> int:
        """Space left for push (producer view)."""
        return self.capacity - (self._write - self._read)

    def push(self, samples: np.ndarray) -> int:
        """Append samples in FIFO order; returns the count accepted.

        Rejected overflow increments ``overruns``.  Producer context only.
        """
        n = samples.shape[0]
        accept = self.free()
        if accept > n:
            accept = n
        if accept < n:
            self.overruns += n - accept
        if accept == 0:
            return 0
        start = self._write & self._mask
        first = self.capacity - start
        if first > accept:
            first = accept
        self._data[start : start + first] = samples[:first]
        if accept > first:
            self._data[: accept - first] = samples[first:accept]
        # cursor advances only after the data is in place
        self._write += accept
        return accept

    def pull(self, n: int, out: np.ndarray | None = None) -> np.ndarray:
        """Remove and return ``n`` samples in FIFO order.

        A shortfall is zero-filled and counted in ``underruns``.  Pass a
        preallocated ``out`` array (length >= n) to avoid allocation on the
        real-time path.  Consumer context only.
        """
        if out is None:
            out = np.empty(n, dtype=np.float32)
        got = self._write - self._read
        if got > n:
            got = n
        if got < n:
            self.underruns += n - got
            out[got:n] = 0.0
        if got > 0:
            start = self._read & self._mask
            first = self.capacity - start
            if first > got:
                first = got
            out[:first] = self._data[start : start + first]
            if got > first:
                out[first:got] = self._data[: got - first]
            self._read += got
        return out[:n] if out.shape[0] != n else out


def wav_read(path: str | Path) -> SampleBuffer:
    """Read a RIFF/WAVE file (PCM16 or IEEE float32) as a mono SampleBuffer.

    Multi-channel audio is downmixed by arithmetic mean; PCM16 samples are
    scaled by 1/32768.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt " and len(body) >= 16:
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels < 1 or rate <= 0:
        raise FormatError(f"{path}: invalid fmt chunk")
    if audio_format == _WAVE_PCM and bits == 16:
        ints = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2")
        samples = ints.astype(np.float64) / PCM16_SCALE
    elif audio_format == _WAVE_FLOAT and bits == 32:
        samples = np.frombuffer(data[: len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits})"
        )
    if channels > 1:
        usable = samples.shape[0] // channels * channels
        samples = samples[:usable].reshape(-1, channels).mean(axis=1)
    return SampleBuffer(samples.astype(np.float32), rate)


def wav_write(buffer: SampleBuffer, path: str | Path, encoding: str = "float32") -> None:
    """Write a mono WAV file as PCM16 or IEEE float32.

    float32 round-trips bit-exactly; pcm16 clamps to [-1, 1 - 1/32768] and is
    exact to within 1/32768 per sample.
    """
    if len(buffer) == 0:
        raise ValueError("refusing to write an empty buffer")
    rate = buffer.sample_rate
    if encoding == "pcm16":
        clamped = np.clip(buffer.samples.astype(np.float64), -1.0, PCM16_MAX)
        payload = np.round(clamped * PCM16_SCALE).astype("<i2").tobytes()
        fmt_chunk = struct.pack("<HHIIHH", _WAVE_PCM, 1, rate, rate * 2, 2, 16)
        extra = b""
    elif encoding == "float32":
        payload = buffer.samples.astype("<f4").tobytes()
        fmt_chunk = struct.pack("<HHIIHH", _WAVE_FLOAT, 1, rate, rate * 4, 4, 32)
        # fact chunk is required for non-PCM formats
        extra = b"fact" + struct.pack("<II", 4, len(buffer))
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += extra + b"data" + struct.pack("<I", len(payload)) + payload
    blob = b"RIFF" + struct.pack("<I", len(body)) + body
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


_RESAMPLE_TAPS = 32
_RESAMPLE_HALF = _RESAMPLE_TAPS // 2


def _phase_filters(n_phases: int, ratio: float) -> np.ndarray:
    """Windowed-sinc interpolation filters, one row per fractional phase."""
    fc = 0.5 * min(1.0, ratio)  # cycles per input sample
    k = np.arange(_RESAMPLE_TAPS, dtype=np.float64)
    fracs = np.arange(n_phases, dtype=np.float64)[:, None] / n_phases
    x = (k[None, :] - (_RESAMPLE_HALF - 1)) - fracs
    win = np.where(np.abs(x) < _RESAMPLE_HALF, 0.5 + 0.5 * np.cos(np.pi * x / _RESAMPLE_HALF), 0.0)
    h = 2.0 * fc * np.sinc(2.0 * fc * x) * win
    h /= h.sum(axis=1, keepdims=True)  # exact DC preservation per phase
    return h


def resample(buffer: SampleBuffer, target_rate: int) -> SampleBuffer:
    """Band-limited polyphase resampling (windowed-sinc, 32 taps per phase).

    Output length is round(len * target / source); equal rates return the
    input unchanged.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError("target_rate must be > 0")
    src = buffer.sample_rate
    if target_rate == src:
        return buffer
    g = math.gcd(src, target_rate)
    up, down = target_rate // g, src // g
    x = buffer.samples.astype(np.float64)
    n_out = int(round(len(x) * target_rate / src))
    if n_out == 0:
        return SampleBuffer(np.zeros(0, dtype=np.float32), target_rate)
    filters = _phase_filters(up, up / down)
    padded = np.pad(x, (_RESAMPLE_HALF, _RESAMPLE_HALF + 1), mode="edge")
    out = np.empty(n_out, dtype=np.float64)
    taps = np.arange(_RESAMPLE_TAPS)
    block = 1 << 16
    for lo in range(0, n_out, block):
        hi = min(lo + block, n_out)
        i = np.arange(lo, hi, dtype=np.int64)
        num = i * down
        base = num // up
        phase = num - base * up  # == (i * down) % up
        idx = base[:, None] + taps[None, :] + 1  # pad offset 16, first tap at base-15
        out[lo:hi] = np.einsum("ij,ij->i", padded[idx], filters[phase])
    return SampleBuffer(out.astype(np.float32), target_rate)
