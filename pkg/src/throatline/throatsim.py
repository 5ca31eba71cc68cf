"""Throat-microphone channel simulator.

Degrades clean speech the way a body-conducted sensor does: a steep low-pass
(the body's filtering) plus sparse low-frequency physiological noise bursts
(heartbeat/breathing/swallowing stand-ins), producing paired clean/degraded
corpora for training and evaluation.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import SampleBuffer, wav_read, wav_write
from .dsp import BiquadCoeffs, biquad_apply, biquad_lowpass

log = logging.getLogger(__name__)

MANIFEST_HEADER = ["clean", "degraded", "seed", "cfg_hash"]

# reference power anchoring the physiological noise floor for (near-)silent
# input: -80 dBFS, so silence still carries a tiny noise floor unless the
# SNR is the +inf sentinel
_FLOOR_POWER = 1e-8


class EmptyCorpusError(FileNotFoundError):
    """Raised when the corpus directory contains no WAV files."""


@dataclass(frozen=True)
class ChannelConfig:
    """Body-channel parameters; all numeric defaults are design knobs."""

    cutoff_hz: float = 1500.0
    filter_order: int = 4
    phys_noise_snr_db: float = 30.0
    phys_noise_band_hz: tuple[float, float] = (20.0, 100.0)
    burst_rate_hz: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.filter_order < 2 or self.filter_order % 2:
            raise ValueError("filter_order must be a positive even integer")
        if not self.phys_noise_band_hz[0] < self.phys_noise_band_hz[1]:
            raise ValueError("phys_noise_band_hz must satisfy low < high")
        if math.isnan(self.phys_noise_snr_db):
            raise ValueError("phys_noise_snr_db must not be NaN")

    def cfg_hash(self) -> str:
        text = "|".join(
            repr(v)
            for v in (
                self.cutoff_hz,
                self.filter_order,
                self.phys_noise_snr_db,
                self.phys_noise_band_hz,
                self.burst_rate_hz,
                self.seed,
            )
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def channel_filter(cfg: ChannelConfig, rate: int) -> list[BiquadCoeffs]:
    """Butterworth-style cascade: order/2 biquads with the standard Q split."""
    if not cfg.cutoff_hz < rate / 2:
        raise ValueError(f"cutoff_hz {cfg.cutoff_hz} must be below Nyquist at rate {rate}")
    order = cfg.filter_order
    sections = []
    for i in range(order // 2):
        theta = math.pi * (2 * i + 1) / (2 * order)
        q = 1.0 / (2.0 * math.cos(theta))
        sections.append(biquad_lowpass(cfg.cutoff_hz, q, rate))
    return sections


def _burst_noise(n: int, rate: int, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Poisson-timed band-limited bursts with half-cosine envelopes, unit-ish scale."""
    lo, hi = cfg.phys_noise_band_hz
    noise = np.zeros(n)
    t = 0.0
    duration = n / rate
    while True:
        t += rng.exponential(1.0 / cfg.burst_rate_hz)
        if t >= duration:
            break
        burst_s = rng.uniform(0.1, 0.4)
        m = int(burst_s * rate)
        start = int(t * rate)
        m = min(m, n - start)
        if m < 8:
            continue
        seg = rng.standard_normal(m)
        spec = np.fft.rfft(seg)
        f = np.fft.rfftfreq(m, 1.0 / rate)
        spec[(f < lo) | (f > hi)] = 0.0
        seg = np.fft.irfft(spec, m)
        env = np.sin(np.pi * np.arange(m) / m)  # half-cosine hump
        noise[start : start + m] += seg * env
    return noise


def simulate_channel(clean: SampleBuffer, cfg: ChannelConfig) -> SampleBuffer:
    """Apply the body-channel model; deterministic for a given (input, cfg).

    Output has the input's length and rate, clamped to [-1, 1]; clamp events
    are logged.
    """
    rate = clean.sample_rate
    filtered = clean
    for coeffs in channel_filter(cfg, rate):
        filtered = biquad_apply(coeffs, filtered)
    y = filtered.samples.astype(np.float64)
    if not math.isinf(cfg.phys_noise_snr_db):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF]))
        noise = _burst_noise(len(y), rate, cfg, rng)
        noise_power = float(np.mean(noise**2))
        if noise_power > 0.0:
            ref_power = max(float(np.mean(y**2)), _FLOOR_POWER)
            target = ref_power / 10.0 ** (cfg.phys_noise_snr_db / 10.0)
            noise *= math.sqrt(target / noise_power)
            y = y + noise
    clipped = int(np.count_nonzero(np.abs(y) > 1.0))
    if clipped:
        log.debug("simulate_channel: clamped %d samples", clipped)
        np.clip(y, -1.0, 1.0, out=y)
    return SampleBuffer(y.astype(np.float32), rate)


def make_pairs(corpus_dir: str | Path, out_dir: str | Path, cfg: ChannelConfig) -> Path:
    """Simulate the channel for every WAV in corpus_dir.

    Writes one degraded file per clean file plus a manifest CSV
    (``clean,degraded,seed,cfg_hash``) and returns the manifest path.
    Per-file RNG state derives from (cfg.seed, file index), so a rerun with
    the same config reproduces identical bytes.
    """
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    files = sorted(corpus_dir.glob("*.wav"))
    if not files:
        raise EmptyCorpusError(f"no .wav files in {corpus_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    base_hash = cfg.cfg_hash()
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for i, clean_path in enumerate(files):
            file_seed = int(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, i]).generate_state(1)[0])
            degraded = simulate_channel(wav_read(clean_path), replace(cfg, seed=file_seed))
            degraded_path = out_dir / f"{clean_path.stem}.throat.wav"
            wav_write(degraded, degraded_path, "float32")
            writer.writerow([str(clean_path.resolve()), degraded_path.name, file_seed, base_hash])
    log.info("make_pairs: wrote %d pairs to %s", len(files), out_dir)
    return manifest_path


def read_manifest(manifest_path: str | Path) -> list[dict[str, str]]:
    """Rows of a pair manifest with degraded paths resolved against its directory."""
    manifest_path = Path(manifest_path)
    rows = []
    with open(manifest_path, newline="") as fh:
        for row in csv.DictReader(fh):
            resolved = dict(row)
            for key in ("clean", "degraded"):
                p = Path(row[key])
                resolved[key] = str(p if p.is_absolute() else manifest_path.parent / p)
            rows.append(resolved)
    return rows
