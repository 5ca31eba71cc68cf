"""Websocket control/telemetry service and the spectrogram feed.

Text frames carry canonical-JSON control and telemetry messages; binary
frames carry fixed-layout spectrogram columns.  One client at a time holds
the controls; later clients get read-only telemetry plus a busy flag.
"""

from __future__ import annotations

import asyncio
import json
import logging
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from aiohttp import WSMsgType, web

from .audio import wav_read
from .dsp import SPEC_HOP, SPEC_WIN, StreamingLogSpectrogram
from .engine import ControlError, EngineConfig, StreamEngine, run_loopback_realtime

log = logging.getLogger(__name__)

DEFAULT_PORT = 8787
TELEMETRY_HZ = 10.0

SPC_MAGIC = b"SPC1"
_SPC_HEADER = struct.Struct("<4sIBH")  # magic, column_index, source, n_bins

CONTROL_TYPES = frozenset({"set_bypass", "set_enhancer", "set_buffer_ms", "get_status"})
TELEMETRY_TYPES = frozenset({"latency", "status", "error"})

BUFFER_MS_MIN = 0.0
BUFFER_MS_MAX = 128.0


class ProtocolError(ValueError):
    """Raised for malformed or unknown protocol messages."""


def canonical_json(obj) -> bytes:
    """Stable byte encoding: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode_control(msg_type: str, value=None) -> bytes:
    if msg_type not in CONTROL_TYPES:
        raise ProtocolError(f"unknown control type {msg_type!r}")
    return canonical_json({"type": msg_type, "value": value})


def parse_control(raw: bytes | str) -> dict:
    try:
        msg = json.loads(raw)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from exc
    if not isinstance(msg, dict) or msg.get("type") not in CONTROL_TYPES:
        raise ProtocolError(f"unknown control message: {raw!r:.80}")
    value = msg.get("value")
    if msg["type"] == "set_bypass" and not isinstance(value, bool):
        raise ProtocolError("set_bypass value must be a boolean")
    if msg["type"] == "set_enhancer" and not isinstance(value, str):
        raise ProtocolError("set_enhancer value must be an enhancer id string")
    if msg["type"] == "set_buffer_ms":
        if not isinstance(value, dict) or not {"input_ms", "output_ms"} <= set(value):
            raise ProtocolError("set_buffer_ms value needs input_ms and output_ms")
        clamped = {}
        for k in ("input_ms", "output_ms"):
            v = value[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ProtocolError(f"{k} must be a number")
            clamped[k] = min(max(v, BUFFER_MS_MIN), BUFFER_MS_MAX)  # int survives unclamped
        msg["value"] = clamped
    return {"type": msg["type"], "value": msg.get("value")}


def encode_telemetry(msg_type: str, payload: dict) -> bytes:
    if msg_type not in TELEMETRY_TYPES:
        raise ProtocolError(f"unknown telemetry type {msg_type!r}")
    return canonical_json({"type": msg_type, "payload": payload})


def parse_telemetry(raw: bytes | str) -> dict:
    try:
        msg = json.loads(raw)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from exc
    if not isinstance(msg, dict) or msg.get("type") not in TELEMETRY_TYPES:
        raise ProtocolError(f"unknown telemetry message: {raw!r:.80}")
    if not isinstance(msg.get("payload"), dict):
        raise ProtocolError("telemetry payload must be an object")
    return {"type": msg["type"], "payload": msg["payload"]}


def encode_spectrogram_column(column_index: int, source: int, values: np.ndarray) -> bytes:
    """Binary frame: SPC1 | u32 index | u8 source | u16 n_bins | f32 values."""
    values = np.asarray(values, dtype="<f4")
    return _SPC_HEADER.pack(SPC_MAGIC, column_index & 0xFFFFFFFF, source, values.shape[0]) + values.tobytes()


def parse_spectrogram_column(frame: bytes) -> tuple[int, int, np.ndarray]:
    """Strict parse; rejects any frame whose length is not 11 + 4*n_bins."""
    if len(frame) < _SPC_HEADER.size:
        raise ProtocolError("spectrogram frame shorter than its header")
    magic, column_index, source, n_bins = _SPC_HEADER.unpack_from(frame, 0)
    if magic != SPC_MAGIC:
        raise ProtocolError(f"bad spectrogram magic {magic!r}")
    if source not in (0, 1):
        raise ProtocolError(f"bad spectrogram source byte {source}")
    if len(frame) != _SPC_HEADER.size + 4 * n_bins:
        raise ProtocolError(
            f"bad spectrogram frame length {len(frame)} for n_bins {n_bins}"
        )
    values = np.frombuffer(frame, dtype="<f4", offset=_SPC_HEADER.size)
    return column_index, source, values


class SpectrogramFeed:
    """Turns engine output frames into encoded spectrogram columns.

    Runs outside the real-time audio contexts; the engine's tap is drained
    here and excess columns are dropped (never queued unboundedly).
    """

    def __init__(self, engine: StreamEngine, max_pending: int = 256):
        self.engine = engine
        self._analyzer = StreamingLogSpectrogram(SPEC_WIN, SPEC_HOP)
        self._column_index = 0
        self._pending: list[bytes] = []
        self._max_pending = max_pending
        self.dropped = 0

    @property
    def n_bins(self) -> int:
        return self._analyzer.n_bins

    def poll(self) -> list[bytes]:
        """Drain the engine tap; returns newly encoded binary frames."""
        for frame, bypassed in self.engine.drain_tap():
            source = 0 if bypassed else 1
            for column in self._analyzer.feed(frame):
                if len(self._pending) >= self._max_pending:
                    self.dropped += 1
                    continue
                self._pending.append(
                    encode_spectrogram_column(self._column_index, source, column)
                )
                self._column_index += 1
        out, self._pending = self._pending, []
        return out


@dataclass
class ServiceConfig:
    engine: EngineConfig
    port: int = DEFAULT_PORT
    loop_wav: str | None = None  # loopback source; falls back to the device
    use_device: bool = True  # set False to run source-less (tests drive the engine)
    ui_dir: str | None = None


class ThroatlineService:
    """aiohttp app exposing `/ws` (control + telemetry + spectrogram) and
    static UI assets at `/`."""

    def __init__(self, cfg: ServiceConfig, engine: StreamEngine | None = None):
        self.cfg = cfg
        self.engine = engine or StreamEngine(cfg.engine)
        self.feed = SpectrogramFeed(self.engine)
        self.controller: web.WebSocketResponse | None = None
        self.watchers: set[web.WebSocketResponse] = set()
        self._source_thread: threading.Thread | None = None
        self._stop = threading.Event()

    # -- status/telemetry ----------------------------------------------------
    def status_payload(self, busy_for: web.WebSocketResponse | None = None) -> dict:
        eng = self.engine
        return {
            "bypass": eng.target_bypass,
            "enhancer": eng.target_enhancer,
            "enhancers": [
                {"id": d.id, "display_name": d.display_name,
                 "algorithmic_delay_frames": d.algorithmic_delay_frames}
                for d in eng.descriptors()
            ],
            "buffer_ms": {"input_ms": eng.cfg.input_buffer_ms,
                          "output_ms": eng.cfg.output_buffer_ms},
            "frames_processed": eng.frames_processed,
            "underruns": eng.underruns,
            "overruns": eng.overruns,
            "errors": eng.enhancer_errors,
            "spectrogram_drops": eng.spectrogram_drops + self.feed.dropped,
            "busy": busy_for is not None and busy_for is not self.controller,
        }

    def latency_payload(self) -> dict:
        rep = self.engine.latency_report()
        return {
            "frame_ms": rep.frame_ms,
            "inference_ms": rep.inference_ms,
            "input_buffer_ms": rep.input_buffer_ms,
            "output_buffer_ms": rep.output_buffer_ms,
            "end_to_end_ms": rep.end_to_end_ms,
            "measured_end_to_end_ms": rep.measured_end_to_end_ms,
        }

    def apply_control(self, msg: dict) -> None:
        if msg["type"] == "set_bypass":
            self.engine.set_bypass(msg["value"])
        elif msg["type"] == "set_enhancer":
            self.engine.set_enhancer(msg["value"])
        elif msg["type"] == "set_buffer_ms":
            self.engine.set_buffer_ms(msg["value"]["input_ms"], msg["value"]["output_ms"])
        # get_status: the status reply below is the whole effect

    # -- websocket -----------------------------------------------------------
    async def handle_ws(self, request: web.Request) -> web.WebSocketResponse:
        ws = web.WebSocketResponse(heartbeat=30.0)
        await ws.prepare(request)
        if self.controller is None:
            self.controller = ws
        self.watchers.add(ws)
        await ws.send_bytes(encode_telemetry("status", self.status_payload(busy_for=ws)))
        try:
            async for msg in ws:
                if msg.type != WSMsgType.TEXT:
                    continue
                try:
                    control = parse_control(msg.data)
                except ProtocolError as exc:
                    await ws.send_bytes(encode_telemetry("error", {"message": str(exc)}))
                    continue
                if ws is not self.controller and control["type"] != "get_status":
                    await ws.send_bytes(encode_telemetry(
                        "error", {"message": "read-only connection: another controller is active"}))
                    continue
                try:
                    self.apply_control(control)
                except ControlError as exc:
                    await ws.send_bytes(encode_telemetry("error", {"message": str(exc)}))
                    continue
                await ws.send_bytes(encode_telemetry("status", self.status_payload(busy_for=ws)))
        finally:
            self.watchers.discard(ws)
            if self.controller is ws:
                self.controller = None
        return ws

    async def telemetry_loop(self, app: web.Application) -> None:
        last_status: bytes | None = None
        interval = 1.0 / TELEMETRY_HZ
        try:
            while True:
                await asyncio.sleep(interval)
                if not self.watchers:
                    continue
                frames = [encode_telemetry("latency", self.latency_payload())]
                status = encode_telemetry("status", self.status_payload())
                if status != last_status:
                    frames.append(status)
                    last_status = status
                frames.extend(self.feed.poll())
                for ws in list(self.watchers):
                    for frame in frames:
                        try:
                            await ws.send_bytes(frame)
                        except ConnectionError:
                            self.watchers.discard(ws)
                            break
        except asyncio.CancelledError:
            pass

    # -- lifecycle -----------------------------------------------------------
    def _start_loopback_source(self) -> None:
        buffer = wav_read(self.cfg.loop_wav)
        if buffer.sample_rate != self.engine.cfg.sample_rate:
            raise ControlError(
                f"loopback file rate {buffer.sample_rate} != engine rate "
                f"{self.engine.cfg.sample_rate}"
            )

        def pump():
            while not self._stop.is_set():
                run_loopback_realtime(self.engine, buffer)

        self._source_thread = threading.Thread(target=pump, daemon=True, name="loopback")
        self._source_thread.start()

    def _start_device_source(self) -> None:
        """Live capture/playback through sounddevice; the device must run at
        the engine rate or the service refuses to start."""
        try:
            import sounddevice as sd
        except ImportError as exc:
            raise ControlError(
                "no --loop file given and sounddevice is not installed; "
                "install throatline[live] for device streaming"
            ) from exc
        engine = self.engine
        rate = engine.cfg.sample_rate
        engine.start()

        def callback(indata, outdata, frames, time_info, status):
            if status:
                log.warning("device status: %s", status)
            engine.push_input(indata[:, 0])
            engine.pull_output(frames, out=outdata[:, 0])

        def pump():
            blocksize = max(int(engine.cfg.input_buffer_ms / 1000 * rate), 128)
            try:
                with sd.Stream(samplerate=rate, channels=1, dtype="float32",
                               blocksize=blocksize, callback=callback):
                    while not self._stop.is_set():
                        engine.process_step()
                        self._stop.wait(0.005)
            except sd.PortAudioError as exc:
                log.error("device must run at %d Hz: %s", rate, exc)

        # probe the device synchronously so startup fails loudly
        try:
            sd.check_input_settings(samplerate=rate, channels=1)
            sd.check_output_settings(samplerate=rate, channels=1)
        except sd.PortAudioError as exc:
            raise ControlError(f"device must run at {rate} Hz: {exc}") from exc
        self._source_thread = threading.Thread(target=pump, daemon=True, name="device")
        self._source_thread.start()

    def build_app(self) -> web.Application:
        app = web.Application()
        app.router.add_get("/ws", self.handle_ws)
        ui_dir = self.cfg.ui_dir or _default_ui_dir()
        if ui_dir and Path(ui_dir).is_dir():
            app.router.add_get("/", _index_handler(Path(ui_dir)))
            app.router.add_static("/", ui_dir)
        else:
            app.router.add_get("/", _placeholder_handler)

        async def on_start(app):
            if self.cfg.loop_wav:
                self._start_loopback_source()
            elif self.cfg.use_device:
                self._start_device_source()
            app["telemetry"] = asyncio.create_task(self.telemetry_loop(app))

        async def on_stop(app):
            self._stop.set()
            app["telemetry"].cancel()

        app.on_startup.append(on_start)
        app.on_cleanup.append(on_stop)
        return app

    def run(self) -> None:
        web.run_app(self.build_app(), port=self.cfg.port)


def _default_ui_dir() -> str | None:
    for candidate in (Path("frontend/dist"), Path(__file__).resolve().parents[2] / "frontend" / "dist"):
        if candidate.is_dir():
            return str(candidate)
    return None


def _index_handler(ui_dir: Path):
    async def index(request: web.Request) -> web.FileResponse:
        return web.FileResponse(ui_dir / "index.html")

    return index


async def _placeholder_handler(request: web.Request) -> web.Response:
    return web.Response(
        text="<html><body><h1>throatline</h1>"
        "<p>UI assets not built. Run <code>npm install && npm run build</code> "
        "in <code>frontend/</code>, then restart.</p></body></html>",
        content_type="text/html",
    )
