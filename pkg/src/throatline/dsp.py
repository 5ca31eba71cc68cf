"""Spectral analysis, filterbanks, biquad filters, and crossfading.

Shared primitives for the metrics, channel simulator, codec loss, and the
live spectrogram feed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio import SampleBuffer

LOG_FLOOR_DB = -80.0

# live/UI spectrogram analysis parameters (~43 ms windows at 24 kHz)
SPEC_WIN = 1024
SPEC_HOP = 256


class FilterbankError(ValueError):
    """Raised when a filterbank configuration leaves a band empty."""


@dataclass(frozen=True)
class Spectrogram:
    """Time-frequency matrix: ``data[t]`` is the spectral column at hop t."""

    data: np.ndarray  # (n_cols, n_bins)
    hop: int
    win_len: int
    kind: str  # {"complex", "power", "log-dB"}

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_cols(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Filterbank:
    """Non-negative band weights over FFT bins plus the band edges in Hz."""

    weights: np.ndarray  # (n_bands, n_bins)
    centers_hz: np.ndarray
    edges_hz: np.ndarray  # band boundary frequencies, low to high

    def __post_init__(self) -> None:
        if (self.weights < 0).any():
            raise FilterbankError("band weights must be non-negative")
        empty = np.flatnonzero(self.weights.sum(axis=1) == 0)
        if empty.size:
            raise FilterbankError(f"bands with no bins: {empty.tolist()}")

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]

    def apply(self, power_columns: np.ndarray) -> np.ndarray:
        """Band-integrate power columns: (n_cols, n_bins) -> (n_cols, n_bands)."""
        return power_columns @ self.weights.T


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p <<= 1
    return p


def stft(buffer: SampleBuffer, win_len: int, hop: int) -> Spectrogram:
    """Hann-windowed STFT; FFT size is the next power of two >= win_len.

    Column t covers samples [t*hop, t*hop + win_len).  Inputs shorter than
    one window yield an empty spectrogram.
    """
    if not (win_len >= hop > 0):
        raise ValueError("need win_len >= hop > 0")
    x = buffer.samples.astype(np.float64)
    fft_len = next_pow2(win_len)
    n_bins = fft_len // 2 + 1
    if len(x) < win_len:
        return Spectrogram(np.zeros((0, n_bins), dtype=np.complex128), hop, win_len, "complex")
    n_cols = (len(x) - win_len) // hop + 1
    window = np.hanning(win_len)
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_cols)[:, None]
    frames = x[idx] * window[None, :]
    data = np.fft.rfft(frames, n=fft_len, axis=1)
    return Spectrogram(data, hop, win_len, "complex")


def power_spectrogram(buffer: SampleBuffer, win_len: int, hop: int) -> Spectrogram:
    spec = stft(buffer, win_len, hop)
    return Spectrogram(np.abs(spec.data) ** 2, hop, win_len, "power")


def log_spectrogram(buffer: SampleBuffer, win_len: int = SPEC_WIN, hop: int = SPEC_HOP) -> Spectrogram:
    """Log-power spectrogram normalized so the stream maximum sits at 0 dB.

    Values are clamped to [-80, 0] dB; an all-silent input maps to the floor.
    """
    power = power_spectrogram(buffer, win_len, hop).data
    return Spectrogram(log_scale(power), hop, win_len, "log-dB")


def log_scale(power: np.ndarray, ref: float | None = None) -> np.ndarray:
    """10*log10(power/ref) clamped to [LOG_FLOOR_DB, 0]; ref defaults to max."""
    if ref is None:
        ref = float(power.max()) if power.size else 0.0
    if ref <= 0.0:
        return np.full(power.shape, LOG_FLOOR_DB, dtype=np.float64)
    floor = ref * 10.0 ** (LOG_FLOOR_DB / 10.0)
    return 10.0 * np.log10(np.maximum(power, floor) / ref)


def third_octave_filterbank(n_bins: int, fft_rate: int) -> Filterbank:
    """15 one-third-octave bands with centers 150*2^(k/3) Hz, k = 0..14.

    Rectangular 0/1 weights between band edges 2^(-1/6)*fc and 2^(1/6)*fc.
    Adjacent edges coincide, so covered bins belong to exactly one band.
    """
    n_bands = 15
    fft_len = 2 * (n_bins - 1)
    freqs = np.arange(n_bins) * fft_rate / fft_len
    # edges[j] = 150 * 2^((2j-1)/6) so band k spans [edges[k], edges[k+1])
    edges = 150.0 * 2.0 ** ((2.0 * np.arange(n_bands + 1) - 1.0) / 6.0)
    centers = 150.0 * 2.0 ** (np.arange(n_bands) / 3.0)
    weights = np.zeros((n_bands, n_bins))
    for k in range(n_bands):
        weights[k, (freqs >= edges[k]) & (freqs < edges[k + 1])] = 1.0
    return Filterbank(weights, centers, edges)


def _hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int, rate: int, n_bands: int = 64) -> Filterbank:
    """Triangular mel filterbank from 0 Hz to Nyquist."""
    fft_len = 2 * (n_bins - 1)
    freqs = np.arange(n_bins) * rate / fft_len
    mel_pts = np.linspace(0.0, _hz_to_mel(rate / 2.0), n_bands + 2)
    hz_pts = np.asarray(_mel_to_hz(mel_pts))
    weights = np.zeros((n_bands, n_bins))
    for k in range(n_bands):
        lo, mid, hi = hz_pts[k], hz_pts[k + 1], hz_pts[k + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - freqs) / max(hi - mid, 1e-12)
        weights[k] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return Filterbank(weights, hz_pts[1:-1], hz_pts)


@dataclass(frozen=True)
class BiquadCoeffs:
    """Second-order section coefficients, a0 normalized to 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def __post_init__(self) -> None:
        # stability triangle: poles strictly inside the unit circle
        if not (abs(self.a2) < 1.0 and abs(self.a1) < 1.0 + self.a2):
            raise ValueError(f"unstable biquad: a1={self.a1}, a2={self.a2}")

    def response(self, freq_hz: float, rate: int) -> complex:
        """Transfer function value at one frequency."""
        z = np.exp(-2j * np.pi * freq_hz / rate)
        return (self.b0 + self.b1 * z + self.b2 * z * z) / (1.0 + self.a1 * z + self.a2 * z * z)


def _check_fc(fc: float, rate: int) -> None:
    if not (0.0 < fc < rate / 2.0):
        raise ValueError(f"fc must lie in (0, rate/2); got {fc} at rate {rate}")


def biquad_lowpass(fc: float, q: float, rate: int) -> BiquadCoeffs:
    """Cookbook second-order low-pass; DC gain is exactly 1."""
    _check_fc(fc, rate)
    w0 = 2.0 * np.pi * fc / rate
    alpha = np.sin(w0) / (2.0 * q)
    cw = np.cos(w0)
    a0 = 1.0 + alpha
    return BiquadCoeffs(
        b0=(1.0 - cw) / 2.0 / a0,
        b1=(1.0 - cw) / a0,
        b2=(1.0 - cw) / 2.0 / a0,
        a1=-2.0 * cw / a0,
        a2=(1.0 - alpha) / a0,
    )


def biquad_highshelf(fc: float, gain_db: float, q: float, rate: int) -> BiquadCoeffs:
    """Cookbook high-shelf: unity gain below fc, +gain_db above."""
    _check_fc(fc, rate)
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * fc / rate
    alpha = np.sin(w0) / (2.0 * q)
    cw = np.cos(w0)
    sq = 2.0 * np.sqrt(a) * alpha
    a0 = (a + 1.0) - (a - 1.0) * cw + sq
    return BiquadCoeffs(
        b0=a * ((a + 1.0) + (a - 1.0) * cw + sq) / a0,
        b1=-2.0 * a * ((a - 1.0) + (a + 1.0) * cw) / a0,
        b2=a * ((a + 1.0) + (a - 1.0) * cw - sq) / a0,
        a1=2.0 * ((a - 1.0) - (a + 1.0) * cw) / a0,
        a2=((a + 1.0) - (a - 1.0) * cw - sq) / a0,
    )


def biquad_apply(coeffs: BiquadCoeffs, buffer: SampleBuffer) -> SampleBuffer:
    """Filter a whole buffer (zero initial state)."""
    y = lfilter([coeffs.b0, coeffs.b1, coeffs.b2], [1.0, coeffs.a1, coeffs.a2],
                buffer.samples.astype(np.float64))
    return SampleBuffer(y.astype(np.float32), buffer.sample_rate)


class StreamingBiquad:
    """Biquad with persistent state for frame-by-frame processing."""

    def __init__(self, coeffs: BiquadCoeffs):
        self._b = np.array([coeffs.b0, coeffs.b1, coeffs.b2])
        self._a = np.array([1.0, coeffs.a1, coeffs.a2])
        self._zi = np.zeros(2)

    def process(self, samples: np.ndarray) -> np.ndarray:
        y, self._zi = lfilter(self._b, self._a, samples.astype(np.float64), zi=self._zi)
        return y

    def reset(self) -> None:
        self._zi[:] = 0.0


def crossfade(a: np.ndarray, b: np.ndarray, fade_len: int) -> np.ndarray:
    """Equal-power fade from a to b over the first fade_len samples, then b.

    Weights are cos^2/sin^2 of pi*i/(2*fade_len), so sample 0 is a[0] and
    sample fade_len onwards is exactly b.
    """
    if len(a) != len(b):
        raise ValueError("crossfade inputs must have equal length")
    if fade_len > len(a):
        raise ValueError("fade_len exceeds input length")
    out = np.array(b, dtype=np.float32, copy=True)
    if fade_len > 0:
        i = np.arange(fade_len)
        wa = np.cos(np.pi * i / (2.0 * fade_len)) ** 2
        out[:fade_len] = (wa * a[:fade_len] + (1.0 - wa) * b[:fade_len]).astype(np.float32)
    return out


class StreamingLogSpectrogram:
    """Incremental log-power columns over a sample stream.

    Keeps win-hop samples of overlap between feeds and normalizes against the
    running stream maximum, clamped to [-80, 0] dB.
    """

    def __init__(self, win_len: int = SPEC_WIN, hop: int = SPEC_HOP):
        self.win_len = win_len
        self.hop = hop
        self.fft_len = next_pow2(win_len)
        self.n_bins = self.fft_len // 2 + 1
        self._window = np.hanning(win_len)
        self._carry = np.zeros(0, dtype=np.float32)
        self._ref = 0.0

    def feed(self, samples: np.ndarray) -> np.ndarray:
        """Consume samples; returns (n_new_cols, n_bins) of log-dB values."""
        x = np.concatenate([self._carry, np.asarray(samples, dtype=np.float32)])
        if len(x) < self.win_len:
            self._carry = x
            return np.zeros((0, self.n_bins))
        n_cols = (len(x) - self.win_len) // self.hop + 1
        idx = np.arange(self.win_len)[None, :] + self.hop * np.arange(n_cols)[:, None]
        frames = x[idx].astype(np.float64) * self._window[None, :]
        power = np.abs(np.fft.rfft(frames, n=self.fft_len, axis=1)) ** 2
        self._ref = max(self._ref, float(power.max()) if power.size else 0.0)
        self._carry = x[n_cols * self.hop :]
        return log_scale(power, ref=self._ref if self._ref > 0 else None)
