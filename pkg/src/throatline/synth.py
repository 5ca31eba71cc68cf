"""Synthetic harmonic speech-like material.

Voiced "utterances" built from harmonic stacks whose fundamental steps through
a glide and whose amplitude follows a syllabic contour.  Fundamentals are
chosen so every analysis frame holds an integer number of cycles: frames are
phase-aligned and the corpus stays learnable at toy-codec scale while still
carrying speech-like pitch, formant structure, and envelope modulation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import DEFAULT_FRAME_LEN, DEFAULT_RATE, SampleBuffer, wav_write

# cycles per 80 ms frame -> f0 in {125, 150, 175, 200, 225} Hz
_CYCLE_CHOICES = (10, 12, 14, 16, 18)
_MAX_FREQ_HZ = 5000.0


def _formant_envelope(freqs_hz: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Spectral tilt plus three formant-like log-frequency bumps."""
    tilt = (200.0 / np.maximum(freqs_hz, 100.0)) ** rng.uniform(0.4, 0.8)
    env = tilt.copy()
    centers = [rng.uniform(400, 800), rng.uniform(1000, 1900), rng.uniform(2400, 3800)]
    gains = [rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0), rng.uniform(3.0, 6.0)]
    for fc, g in zip(centers, gains):
        env += tilt * g * np.exp(-0.5 * (np.log2(freqs_hz / fc) / 0.35) ** 2)
    return env


def speech_like(
    seconds: float,
    seed: int,
    rate: int = DEFAULT_RATE,
    frame_len: int = DEFAULT_FRAME_LEN,
) -> SampleBuffer:
    """One deterministic speech-like utterance of roughly ``seconds`` length."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF]))
    n_frames = max(1, int(round(seconds * rate / frame_len)))
    cycles_per_frame = np.asarray(_CYCLE_CHOICES)
    base_hz = rate / frame_len  # 12.5 Hz at the defaults

    # one unit-RMS waveform per pitch step, shared by all frames of the file
    waveforms = {}
    n = np.arange(frame_len)
    for c in cycles_per_frame:
        max_h = int(_MAX_FREQ_HZ / (c * base_hz))
        h = np.arange(1, max_h + 1)
        freqs = h * c * base_hz
        amps = _formant_envelope(freqs, rng)
        w = (amps[:, None] * np.sin(2.0 * np.pi * np.outer(h * c, n) / frame_len)).sum(axis=0)
        waveforms[int(c)] = w / np.abs(w).max()  # peak-normalized: amp track stays in range

    # pitch glide: random walk over the step indices
    pitch_idx = [rng.integers(0, len(cycles_per_frame))]
    for _ in range(n_frames - 1):
        pitch_idx.append(int(np.clip(pitch_idx[-1] + rng.integers(-1, 2), 0, len(cycles_per_frame) - 1)))

    # syllabic amplitude contour: 3-6 frame humps (240-480 ms) with deep swings
    amps: list[float] = []
    while len(amps) < n_frames:
        span = int(rng.integers(3, 7))
        peak = rng.uniform(0.55, 0.95)
        for t in range(span):
            amps.append(peak * (0.15 + 0.85 * np.sin(np.pi * (t + 0.5) / span) ** 0.8))
    amps = amps[:n_frames]

    out = np.concatenate(
        [amps[j] * waveforms[int(cycles_per_frame[pitch_idx[j]])] for j in range(n_frames)]
    )
    return SampleBuffer(out.astype(np.float32), rate)


def generate_corpus(
    out_dir: str | Path,
    total_seconds: float,
    seed: int = 0,
    file_seconds: float = 3.0,
    rate: int = DEFAULT_RATE,
) -> list[Path]:
    """Write enough speech-like WAV files to cover ``total_seconds``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_files = max(1, int(np.ceil(total_seconds / file_seconds)))
    paths = []
    for i in range(n_files):
        b = speech_like(file_seconds, seed=seed * 100003 + i, rate=rate)
        path = out_dir / f"synth_{i:03d}.wav"
        wav_write(b, path, "float32")
        paths.append(path)
    return paths
