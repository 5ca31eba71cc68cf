"""Real-time frame-aligned streaming engine.

Three execution roles share a StreamEngine: a capture context that only
pushes samples, a worker context that processes whole frames, and a playback
context that only pulls.  Control changes (bypass, enhancer switch, buffer
sizes) arrive from any context and are armed atomically, taking effect at the
next frame boundary with a short equal-power crossfade so the stream never
glitches.

The pipeline delay is fixed at exactly two frames: one to fill the input
frame, one for the process/playback hand-off (realized by priming the output
ring with two frames of silence).  End-to-end latency therefore decomposes as
2 * frame_ms + input_buffer_ms + output_buffer_ms.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .audio import DEFAULT_FRAME_LEN, DEFAULT_RATE, RingBuffer, SampleBuffer, frame_split
from .codec import CodecModel, EnhancerModel, enhance_frame, load_model
from .dsp import biquad_highshelf, crossfade, StreamingBiquad

log = logging.getLogger(__name__)

CROSSFADE_MS = 10.0

# equalizer baseline: shelf boost + waveshaping to regenerate highs
EQ_SHELF_HZ = 2000.0
EQ_SHELF_GAIN_DB = 12.0
EQ_DRIVE = 2.0


class ControlError(ValueError):
    """Raised for invalid control operations (unknown enhancer id, ...)."""


@dataclass(frozen=True)
class EngineConfig:
    sample_rate: int = DEFAULT_RATE
    frame_len: int = DEFAULT_FRAME_LEN
    input_buffer_ms: float = 32.0
    output_buffer_ms: float = 32.0
    active_enhancer: str = "passthrough"
    bypass: bool = False
    input_ring_capacity: int = 1 << 15
    output_ring_capacity: int = 1 << 16

    def __post_init__(self) -> None:
        if self.sample_rate <= 0 or self.frame_len <= 0:
            raise ValueError("sample_rate and frame_len must be positive")
        if self.input_buffer_ms < 0 or self.output_buffer_ms < 0:
            raise ValueError("buffer sizes must be non-negative")

    @property
    def frame_ms(self) -> float:
        return self.frame_len * 1000.0 / self.sample_rate


@dataclass(frozen=True)
class LatencyReport:
    frame_ms: float
    inference_ms: float
    input_buffer_ms: float
    output_buffer_ms: float
    end_to_end_ms: float
    measured_end_to_end_ms: float | None = None

    def __post_init__(self) -> None:
        want = 2.0 * self.frame_ms + self.input_buffer_ms + self.output_buffer_ms
        if self.end_to_end_ms != want:
            raise ValueError("end_to_end_ms must equal 2*frame_ms + buffers")


def predicted_latency(cfg: EngineConfig) -> LatencyReport:
    """Structural latency decomposition: two frames plus device buffers."""
    return LatencyReport(
        frame_ms=cfg.frame_ms,
        inference_ms=0.0,
        input_buffer_ms=cfg.input_buffer_ms,
        output_buffer_ms=cfg.output_buffer_ms,
        end_to_end_ms=2.0 * cfg.frame_ms + cfg.input_buffer_ms + cfg.output_buffer_ms,
    )


@dataclass(frozen=True)
class EnhancerDescriptor:
    id: str
    display_name: str
    algorithmic_delay_frames: int = 0

    def __post_init__(self) -> None:
        if self.algorithmic_delay_frames < 0:
            raise ValueError("algorithmic_delay_frames must be >= 0")


class PassthroughEnhancer:
    """Identity; the reference point for latency and A/B listening."""

    descriptor = EnhancerDescriptor("passthrough", "Bypass (identity)")

    def process(self, frame: np.ndarray) -> np.ndarray:
        return frame.copy()

    def reset(self) -> None:
        pass


class EqualizerEnhancer:
    """Non-learned baseline: +12 dB high-shelf above 2 kHz plus tanh
    waveshaping (drive 2) to regenerate high-frequency harmonics."""

    descriptor = EnhancerDescriptor("equalizer", "Shelf EQ + exciter")

    def __init__(self, rate: int = DEFAULT_RATE):
        self._shelf = StreamingBiquad(biquad_highshelf(EQ_SHELF_HZ, EQ_SHELF_GAIN_DB, 0.7071, rate))
        self._norm = float(np.tanh(EQ_DRIVE))

    def process(self, frame: np.ndarray) -> np.ndarray:
        shaped = np.tanh(EQ_DRIVE * frame.astype(np.float64)) / self._norm
        return self._shelf.process(shaped).astype(np.float32)

    def reset(self) -> None:
        self._shelf.reset()


class CodecEnhancer:
    """Frame-wise neural codec enhancement (fine-tuned encoder + frozen
    quantizer/decoder, or a plain codec as a through-token identity)."""

    def __init__(self, model: CodecModel | EnhancerModel, enhancer_id: str):
        self.model = model
        self.descriptor = EnhancerDescriptor(enhancer_id, "Token codec enhancer")

    def process(self, frame: np.ndarray) -> np.ndarray:
        return enhance_frame(self.model, frame)

    def reset(self) -> None:
        pass


def build_enhancer(enhancer_id: str, rate: int = DEFAULT_RATE):
    """Resolve an enhancer id: passthrough | equalizer | codec:<model-path>."""
    if enhancer_id == "passthrough":
        return PassthroughEnhancer()
    if enhancer_id == "equalizer":
        return EqualizerEnhancer(rate)
    if enhancer_id.startswith("codec:"):
        model = load_model(enhancer_id.split(":", 1)[1])
        return CodecEnhancer(model, enhancer_id)
    raise ControlError(f"unknown enhancer id {enhancer_id!r}")


class StreamEngine:
    """Frame-aligned streaming pipeline with glitch-free control changes.

    push_input (capture context) and pull_output (playback context) are
    wait-free: bounded slice copies into preallocated rings, no locks, no
    array allocation.  process_step (worker context) drains whole frames,
    runs the active enhancer, and applies armed control changes at frame
    boundaries with a 10 ms equal-power crossfade.
    """

    def __init__(self, cfg: EngineConfig, enhancers: dict[str, object] | None = None):
        self.cfg = cfg
        self._in_ring = RingBuffer(cfg.input_ring_capacity)
        self._out_ring = RingBuffer(cfg.output_ring_capacity)
        self._frame = np.zeros(cfg.frame_len, dtype=np.float32)
        self._fade_len = min(int(CROSSFADE_MS / 1000.0 * cfg.sample_rate), cfg.frame_len)
        if enhancers is None:
            enhancers = {"passthrough": PassthroughEnhancer(),
                         "equalizer": EqualizerEnhancer(cfg.sample_rate)}
        self._enhancers = dict(enhancers)
        if cfg.active_enhancer not in self._enhancers:
            self._enhancers[cfg.active_enhancer] = build_enhancer(cfg.active_enhancer, cfg.sample_rate)
        self._active_id = cfg.active_enhancer
        self._bypass = cfg.bypass
        # control slots written by the control context, consumed at frame
        # boundaries by the worker (single 'armed' reference, swapped whole)
        self._pending: dict | None = None
        self._pending_lock = threading.Lock()  # control contexts only, never audio paths
        self.frames_processed = 0
        self.enhancer_errors = 0
        self.inference_ms = 0.0
        self.inference_violations = 0
        self.spectrogram_drops = 0
        self._tap = []  # worker-appended (frames, bypass_flag) copies
        self._tap_limit = 64
        self._started = False

    # -- capture context ----------------------------------------------------
    def push_input(self, samples: np.ndarray) -> int:
        """Wait-free append of capture samples; overflow is counted."""
        return self._in_ring.push(samples)

    # -- playback context ---------------------------------------------------
    def pull_output(self, n: int, out: np.ndarray | None = None) -> np.ndarray:
        """Wait-free removal of playback samples; shortfall is zero-filled."""
        return self._out_ring.pull(n, out=out)

    # -- control contexts ---------------------------------------------------
    def set_bypass(self, on: bool) -> None:
        """Arm a bypass change; applied at the next frame boundary."""
        with self._pending_lock:
            pending = dict(self._pending or {})
            pending["bypass"] = bool(on)
            self._pending = pending

    def set_enhancer(self, enhancer_id: str) -> None:
        """Arm an enhancer switch; loading happens here, off the audio path."""
        if enhancer_id not in self._enhancers:
            self._enhancers[enhancer_id] = build_enhancer(enhancer_id, self.cfg.sample_rate)
        with self._pending_lock:
            pending = dict(self._pending or {})
            pending["enhancer"] = enhancer_id
            self._pending = pending

    def set_buffer_ms(self, input_ms: float, output_ms: float) -> None:
        input_ms = min(max(float(input_ms), 0.0), 128.0)
        output_ms = min(max(float(output_ms), 0.0), 128.0)
        self.cfg = replace(self.cfg, input_buffer_ms=input_ms, output_buffer_ms=output_ms)

    @property
    def bypass(self) -> bool:
        return self._bypass

    @property
    def active_enhancer(self) -> str:
        return self._active_id

    @property
    def target_bypass(self) -> bool:
        """Armed bypass state: what the stream will be at the next boundary."""
        pending = self._pending
        return pending.get("bypass", self._bypass) if pending else self._bypass

    @property
    def target_enhancer(self) -> str:
        pending = self._pending
        return pending.get("enhancer", self._active_id) if pending else self._active_id

    def descriptors(self) -> list[EnhancerDescriptor]:
        return [e.descriptor for e in self._enhancers.values()]

    @property
    def underruns(self) -> int:
        return self._out_ring.underruns

    @property
    def overruns(self) -> int:
        return self._in_ring.overruns

    # -- worker context -----------------------------------------------------
    def start(self) -> None:
        """Warm the active path with one dummy frame before going live."""
        if self._started:
            return
        enhancer = self._enhancers[self._active_id]
        try:
            enhancer.process(np.zeros(self.cfg.frame_len, dtype=np.float32))
        except Exception:
            log.exception("warm-up: enhancer %s failed", self._active_id)
        finally:
            enhancer.reset()
        self._out_ring.push(np.zeros(2 * self.cfg.frame_len, dtype=np.float32))
        self._started = True

    def _output_frame(self, raw: np.ndarray, enhancer_id: str, bypass: bool) -> np.ndarray:
        if bypass:
            return raw.copy()
        enhancer = self._enhancers[enhancer_id]
        t0 = time.perf_counter()
        try:
            out = enhancer.process(raw)
        except Exception:
            self.enhancer_errors += 1
            log.exception("enhancer %s failed; substituting silence", enhancer_id)
            return np.zeros_like(raw)
        dt = (time.perf_counter() - t0) * 1000.0
        self.inference_ms = dt
        if dt >= self.cfg.frame_ms:
            self.inference_violations += 1
        return np.asarray(out, dtype=np.float32)

    def process_step(self) -> int:
        """Drain all complete frames: enhance (or bypass), crossfade armed
        changes at the boundary, clamp, and hand off to the output ring."""
        if not self._started:
            self.start()
        processed = 0
        while self._in_ring.available() >= self.cfg.frame_len:
            self._in_ring.pull(self.cfg.frame_len, out=self._frame)
            raw = self._frame
            with self._pending_lock:
                pending, self._pending = self._pending, None
            new_bypass = self._bypass if pending is None else pending.get("bypass", self._bypass)
            new_id = self._active_id if pending is None else pending.get("enhancer", self._active_id)
            path_changed = (new_bypass != self._bypass) or (
                not new_bypass and new_id != self._active_id
            )
            if path_changed:
                old = self._output_frame(raw, self._active_id, self._bypass)
                new = self._output_frame(raw, new_id, new_bypass)
                out = crossfade(old, new, self._fade_len)
            else:
                out = self._output_frame(raw, new_id, new_bypass)
            self._bypass, self._active_id = new_bypass, new_id
            np.clip(out, -1.0, 1.0, out=out)
            self._out_ring.push(out)
            if len(self._tap) < self._tap_limit:
                self._tap.append((out.copy(), self._bypass))
            else:
                self.spectrogram_drops += 1
            self.frames_processed += 1
            processed += 1
        return processed

    def drain_tap(self) -> list[tuple[np.ndarray, bool]]:
        """Hand the spectrogram feed its pending frames (worker/feed context)."""
        out, self._tap = self._tap, []
        return out

    def latency_report(self) -> LatencyReport:
        predicted = predicted_latency(self.cfg)
        return replace(predicted, inference_ms=self.inference_ms)


def offline_enhance(buffer: SampleBuffer, enhancer, frame_len: int = DEFAULT_FRAME_LEN,
                    bypass: bool = False) -> SampleBuffer:
    """Batch equivalent of the streaming path: split, process, clamp, concat.

    The trailing partial frame is dropped, mirroring the engine's frame grid.
    """
    frames, _ = frame_split(buffer, frame_len)
    if not frames:
        return SampleBuffer(np.zeros(0, dtype=np.float32), buffer.sample_rate)
    enhancer.reset()
    chunks = []
    for f in frames:
        out = f.samples.copy() if bypass else np.asarray(enhancer.process(f.samples), dtype=np.float32)
        chunks.append(np.clip(out, -1.0, 1.0))
    return SampleBuffer(np.concatenate(chunks), buffer.sample_rate)


@dataclass
class LoopbackResult:
    output: np.ndarray
    measured_latency_ms: float | None
    underruns: int
    overruns: int
    frames_processed: int
    inference_ms: float


def run_loopback_fast(engine: StreamEngine, buffer: SampleBuffer) -> LoopbackResult:
    """Device-free, unpaced loopback: interleave push/process/pull frame by
    frame, deterministically.  Used for offline/online equivalence checks."""
    cfg = engine.cfg
    engine.start()
    out_chunks = []
    pos = 0
    n = len(buffer)
    pull_buf = np.empty(cfg.frame_len, dtype=np.float32)
    while pos < n:
        chunk = buffer.samples[pos : pos + cfg.frame_len]
        pos += len(chunk)
        engine.push_input(chunk)
        engine.process_step()
        avail = engine._out_ring.available()
        while avail >= cfg.frame_len:
            out_chunks.append(engine.pull_output(cfg.frame_len, out=pull_buf).copy())
            avail -= cfg.frame_len
    rest = engine._out_ring.available()
    if rest:
        out_chunks.append(engine.pull_output(rest).copy())
    output = np.concatenate(out_chunks) if out_chunks else np.zeros(0, dtype=np.float32)
    return LoopbackResult(
        output=output,
        measured_latency_ms=None,
        underruns=engine.underruns,
        overruns=engine.overruns,
        frames_processed=engine.frames_processed,
        inference_ms=engine.inference_ms,
    )


def run_loopback_realtime(
    engine: StreamEngine,
    buffer: SampleBuffer,
    on_pull=None,
    stop_after_s: float | None = None,
) -> LoopbackResult:
    """Wall-clock paced loopback standing in for a capture/playback device.

    The capture role delivers samples in input_buffer_ms batches at the time
    each batch completes; the playback role pulls output_buffer_ms batches
    and is modeled as playing them one buffer period later.  The measured
    latency is first-nonzero play time minus first-nonzero capture time.
    """
    cfg = engine.cfg
    rate = cfg.sample_rate
    in_chunk = max(int(cfg.input_buffer_ms / 1000.0 * rate), max(rate // 250, 16))
    out_chunk = max(int(cfg.output_buffer_ms / 1000.0 * rate), max(rate // 250, 16))
    out_delay_s = cfg.output_buffer_ms / 1000.0
    total = len(buffer) if stop_after_s is None else min(len(buffer), int(stop_after_s * rate))
    samples = buffer.samples
    nz = np.flatnonzero(np.abs(samples[:total]) > 1e-6)
    first_in_idx = int(nz[0]) if nz.size else None

    engine.start()
    t_start = time.monotonic() + 0.010
    stop = threading.Event()
    first_out: list[float] = []
    collected: list[np.ndarray] = []

    def capture():
        pos = 0
        k = 0
        while pos < total and not stop.is_set():
            k += 1
            deadline = t_start + (min(k * in_chunk, total)) / rate
            now = time.monotonic()
            if deadline > now:
                time.sleep(deadline - now)
            end = min(k * in_chunk, total)
            engine.push_input(samples[pos:end])
            pos = end
        stop.set()

    def worker():
        while not stop.is_set():
            engine.process_step()
            time.sleep(0.002)
        engine.process_step()

    def playback():
        # the stream holds exactly the priming plus every whole input frame
        expected = 2 * cfg.frame_len + (total // cfg.frame_len) * cfg.frame_len
        buf = np.empty(out_chunk, dtype=np.float32)
        k = 0
        pulled = 0
        while pulled < expected:
            k += 1
            deadline = t_start + k * out_chunk / rate
            now = time.monotonic()
            if deadline > now:
                time.sleep(deadline - now)
            pull_time = time.monotonic()
            n = min(out_chunk, expected - pulled)
            got = engine.pull_output(n, out=buf)
            if on_pull is not None:
                on_pull(got)
            collected.append(got.copy())
            if not first_out:
                nz_out = np.flatnonzero(np.abs(got) > 1e-6)
                if nz_out.size:
                    first_out.append(pull_time + out_delay_s + nz_out[0] / rate)
            pulled += n

    threads = [threading.Thread(target=f, daemon=True) for f in (capture, worker, playback)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=total / rate + 5.0)
    measured = None
    if first_out and first_in_idx is not None:
        t_first_in = t_start + first_in_idx / rate
        measured = (first_out[0] - t_first_in) * 1000.0
    return LoopbackResult(
        output=np.concatenate(collected) if collected else np.zeros(0, dtype=np.float32),
        measured_latency_ms=measured,
        underruns=engine.underruns,
        overruns=engine.overruns,
        frames_processed=engine.frames_processed,
        inference_ms=engine.inference_ms,
    )
