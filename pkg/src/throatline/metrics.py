"""Objective evaluation: SI-SDR, STOI, and log-spectral distance.

Single-pair metrics plus corpus-level aggregation into a report table with
one row per manifest pair and mean/stddev aggregates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .audio import SampleBuffer, resample, wav_read
from .dsp import stft, third_octave_filterbank
from .throatsim import read_manifest

log = logging.getLogger(__name__)

SI_SDR_CAP_DB = 100.0

# standard STOI analysis parameters
_STOI_RATE = 10000
_STOI_WIN = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_SEG = 30  # 384 ms at the analysis rate
_STOI_BETA = -15.0
_STOI_DYN_RANGE_DB = 40.0

REPORT_COLUMNS = [
    "file",
    "si_sdr_degraded",
    "stoi_degraded",
    "lsd_degraded",
    "si_sdr_enhanced",
    "stoi_enhanced",
    "lsd_enhanced",
]


class ZeroReferenceError(ValueError):
    """Raised when the reference signal carries no energy."""


class InsufficientSignalError(ValueError):
    """Raised when too little non-silent signal remains for STOI."""


def _pair_arrays(estimate, reference) -> tuple[np.ndarray, np.ndarray]:
    est = estimate.samples if isinstance(estimate, SampleBuffer) else np.asarray(estimate)
    ref = reference.samples if isinstance(reference, SampleBuffer) else np.asarray(reference)
    est = est.astype(np.float64).reshape(-1)
    ref = ref.astype(np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: estimate {est.shape[0]} vs reference {ref.shape[0]}")
    return est, ref


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +100.

    The target is the reference scaled by the optimal projection coefficient;
    the score is the energy ratio of that target to the residual.
    """
    est, ref = _pair_arrays(estimate, reference)
    ref_energy = float(ref @ ref)
    if ref_energy <= 0.0:
        raise ZeroReferenceError("reference signal is all zero")
    target = (float(est @ ref) / ref_energy) * ref
    target_energy = float(target @ target)
    residual = est - target
    residual_energy = float(residual @ residual)
    if residual_energy < 1e-20 * target_energy or residual_energy == 0.0:
        return SI_SDR_CAP_DB
    return min(SI_SDR_CAP_DB, 10.0 * np.log10(target_energy / residual_energy))


def _frame_signal(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    n_frames = (len(x) - _STOI_WIN) // _STOI_HOP + 1
    if n_frames <= 0:
        return np.zeros((0, _STOI_WIN))
    idx = np.arange(_STOI_WIN)[None, :] + _STOI_HOP * np.arange(n_frames)[:, None]
    return x[idx] * win[None, :]


def _remove_silent_frames(ref: np.ndarray, est: np.ndarray, win: np.ndarray):
    """Drop frames >40 dB below the reference's loudest frame, OLA the rest."""
    ref_frames = _frame_signal(ref, win)
    est_frames = _frame_signal(est, win)
    if ref_frames.shape[0] == 0:
        raise InsufficientSignalError("input shorter than one analysis frame")
    energies_db = 20.0 * np.log10(np.linalg.norm(ref_frames, axis=1) + 1e-300)
    mask = energies_db > energies_db.max() - _STOI_DYN_RANGE_DB
    if not mask.any():
        raise InsufficientSignalError("no frames above the silence threshold")
    ref_kept, est_kept = ref_frames[mask], est_frames[mask]
    n = ref_kept.shape[0]
    out_len = _STOI_HOP * (n - 1) + _STOI_WIN
    ref_out = np.zeros(out_len)
    est_out = np.zeros(out_len)
    for i in range(n):
        sl = slice(i * _STOI_HOP, i * _STOI_HOP + _STOI_WIN)
        ref_out[sl] += ref_kept[i]
        est_out[sl] += est_kept[i]
    return ref_out, est_out


def stoi(estimate, reference) -> float:
    """Short-time objective intelligibility of ``estimate`` against ``reference``.

    Pipeline: resample to 10 kHz, drop silent frames (keyed on the reference),
    STFT 256/128/512, 15 one-third-octave band envelopes, 30-column segments,
    per-segment per-band normalization and clipping at beta = -15 dB, then the
    mean Pearson correlation over all segments and bands.
    """
    if isinstance(estimate, SampleBuffer):
        est_buf, ref_buf = estimate, reference
    else:
        est_buf = SampleBuffer(np.asarray(estimate, dtype=np.float32), _STOI_RATE)
        ref_buf = SampleBuffer(np.asarray(reference, dtype=np.float32), _STOI_RATE)
    if len(est_buf) != len(ref_buf):
        raise ValueError("length mismatch between estimate and reference")
    est = resample(est_buf, _STOI_RATE).samples.astype(np.float64)
    ref = resample(ref_buf, _STOI_RATE).samples.astype(np.float64)

    win = np.hanning(_STOI_WIN + 2)[1:-1]
    ref, est = _remove_silent_frames(ref, est, win)

    ref_frames = _frame_signal(ref, win)
    est_frames = _frame_signal(est, win)
    spec_ref = np.abs(np.fft.rfft(ref_frames, _STOI_FFT, axis=1)) ** 2
    spec_est = np.abs(np.fft.rfft(est_frames, _STOI_FFT, axis=1)) ** 2
    bank = third_octave_filterbank(_STOI_FFT // 2 + 1, _STOI_RATE)
    x = np.sqrt(bank.apply(spec_ref)).T  # (bands, frames), reference
    y = np.sqrt(bank.apply(spec_est)).T

    n_frames = x.shape[1]
    if n_frames < _STOI_SEG:
        raise InsufficientSignalError(
            f"only {n_frames} frames after silence removal; need {_STOI_SEG}"
        )
    clip = 10.0 ** (-_STOI_BETA / 20.0)
    eps = np.finfo(np.float64).eps
    correlations = []
    for m in range(_STOI_SEG, n_frames + 1):
        seg_x = x[:, m - _STOI_SEG : m]
        seg_y = y[:, m - _STOI_SEG : m]
        alpha = np.sqrt(
            (seg_x**2).sum(axis=1, keepdims=True)
            / ((seg_y**2).sum(axis=1, keepdims=True) + eps)
        )
        seg_y = np.minimum(alpha * seg_y, seg_x * (1.0 + clip))
        dx = seg_x - seg_x.mean(axis=1, keepdims=True)
        dy = seg_y - seg_y.mean(axis=1, keepdims=True)
        norm = np.linalg.norm(dx, axis=1) * np.linalg.norm(dy, axis=1) + eps
        correlations.append((dx * dy).sum(axis=1) / norm)
    return float(np.mean(correlations))


def lsd(estimate, reference, win_len: int = 1024, hop: int = 256) -> float:
    """Log-spectral distance in dB: RMS over frames and bins of the
    difference of 10*log10(power + 1e-10) spectra."""
    est, ref = _pair_arrays(estimate, reference)
    rate = estimate.sample_rate if isinstance(estimate, SampleBuffer) else 24000
    spec_e = stft(SampleBuffer(est.astype(np.float32), rate), win_len, hop).data
    spec_r = stft(SampleBuffer(ref.astype(np.float32), rate), win_len, hop).data
    log_e = 10.0 * np.log10(np.abs(spec_e) ** 2 + 1e-10)
    log_r = 10.0 * np.log10(np.abs(spec_r) ** 2 + 1e-10)
    return float(np.sqrt(np.mean((log_e - log_r) ** 2)))


@dataclass
class PairResult:
    file: str
    si_sdr_degraded: float | None = None
    stoi_degraded: float | None = None
    lsd_degraded: float | None = None
    si_sdr_enhanced: float | None = None
    stoi_enhanced: float | None = None
    lsd_enhanced: float | None = None
    error: str | None = None

    def as_row(self) -> list[str]:
        vals = [
            self.si_sdr_degraded,
            self.stoi_degraded,
            self.lsd_degraded,
            self.si_sdr_enhanced,
            self.stoi_enhanced,
            self.lsd_enhanced,
        ]
        return [self.file] + ["" if v is None else f"{v:.6f}" for v in vals]


@dataclass
class MetricReport:
    rows: list[PairResult]
    aggregates: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return sum(1 for r in self.rows if r.error is None)

    def mean(self, column: str) -> float:
        return self.aggregates[column][0]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows:
                writer.writerow(row.as_row())

    def to_text(self) -> str:
        lines = [f"pairs evaluated: {self.n_samples} (of {len(self.rows)})"]
        for col, (mean, std) in self.aggregates.items():
            lines.append(f"{col:>16s}: mean {mean:9.4f}  stddev {std:8.4f}")
        failures = [r for r in self.rows if r.error]
        for r in failures:
            lines.append(f"ERROR {r.file}: {r.error}")
        return "\n".join(lines)


def _aggregate(rows: list[PairResult]) -> dict[str, tuple[float, float]]:
    out: dict[str, tuple[float, float]] = {}
    for col in REPORT_COLUMNS[1:]:
        vals = [getattr(r, col) for r in rows if r.error is None and getattr(r, col) is not None]
        if vals:
            arr = np.asarray(vals)
            out[col] = (float(arr.mean()), float(arr.std()))
    return out


def evaluate_pair(
    clean: SampleBuffer,
    degraded: SampleBuffer,
    enhance: Callable[[SampleBuffer], SampleBuffer] | None,
    name: str,
    frame_len: int = 1920,
) -> PairResult:
    result = PairResult(file=name)
    n = min(len(clean), len(degraded))
    if enhance is not None:
        n = n // frame_len * frame_len  # align to the enhancer's frame grid
    if n == 0:
        result.error = "empty overlap between clean and degraded"
        return result
    clean_t = SampleBuffer(clean.samples[:n], clean.sample_rate)
    degraded_t = SampleBuffer(degraded.samples[:n], degraded.sample_rate)
    result.si_sdr_degraded = si_sdr(degraded_t, clean_t)
    result.stoi_degraded = stoi(degraded_t, clean_t)
    result.lsd_degraded = lsd(degraded_t, clean_t)
    if enhance is not None:
        enhanced = enhance(degraded_t)
        m = min(len(enhanced), n)
        enhanced_t = SampleBuffer(enhanced.samples[:m], enhanced.sample_rate)
        clean_e = SampleBuffer(clean.samples[:m], clean.sample_rate)
        result.si_sdr_enhanced = si_sdr(enhanced_t, clean_e)
        result.stoi_enhanced = stoi(enhanced_t, clean_e)
        result.lsd_enhanced = lsd(enhanced_t, clean_e)
    return result


def evaluate_corpus(
    manifest_path: str | Path,
    enhance: Callable[[SampleBuffer], SampleBuffer] | None = None,
    frame_len: int = 1920,
    report_csv: str | Path | None = None,
) -> MetricReport:
    """Per-pair metrics for every manifest row, plus mean/stddev aggregates.

    A missing or unreadable file is recorded as a row-level error and the run
    continues.  Rows are sorted by file name for determinism.  When
    ``report_csv`` is given, the CSV and a structured-text sibling (.txt) are
    written as well.
    """
    rows = []
    for entry in sorted(read_manifest(manifest_path), key=lambda e: e["clean"]):
        name = Path(entry["clean"]).name
        try:
            clean = wav_read(entry["clean"])
            degraded = wav_read(entry["degraded"])
            rows.append(evaluate_pair(clean, degraded, enhance, name, frame_len))
        except (OSError, ValueError) as exc:
            log.warning("evaluate_corpus: %s failed: %s", name, exc)
            rows.append(PairResult(file=name, error=str(exc)))
    report = MetricReport(rows=rows, aggregates=_aggregate(rows))
    if report_csv is not None:
        report_csv = Path(report_csv)
        report_csv.parent.mkdir(parents=True, exist_ok=True)
        report.write_csv(report_csv)
        report_csv.with_suffix(".txt").write_text(report.to_text() + "\n")
    return report
