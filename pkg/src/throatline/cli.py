"""Command-line entry points for every pipeline stage.

Subcommands: simulate, train-pretrain, train-finetune, enhance, eval, serve,
live.  Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

log = logging.getLogger("throatline")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("THROATLINE_LOG", "info").lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="throatline",
        description="Throat-microphone speech enhancement: simulate, train, stream, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="degrade a clean corpus into paired training data")
    sim.add_argument("--in", dest="in_path", required=True, help="clean corpus directory")
    sim.add_argument("--out", dest="out_path", required=True, help="output pair directory")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--cutoff-hz", type=float, default=None)
    sim.add_argument("--noise-snr-db", type=float, default=None)
    sim.add_argument("--config", default=None, help="JSON file of ChannelConfig overrides")
    sim.add_argument("--synth-seconds", type=float, default=None,
                     help="synthesize this many seconds of speech-like audio into the corpus dir first")

    pre = sub.add_parser("train-pretrain", help="reconstruction-pretrain the codec on clean WAVs")
    pre.add_argument("--in", dest="in_path", required=True, help="clean corpus directory")
    pre.add_argument("--out", dest="out_path", required=True, help="codec model output path")
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--epochs", type=int, default=None)
    pre.add_argument("--config", default=None, help="JSON file of CodecConfig overrides")

    fin = sub.add_parser("train-finetune", help="fine-tune the encoder on paired data")
    fin.add_argument("--model", required=True, help="pretrained codec model (TLC1)")
    fin.add_argument("--pairs", required=True, help="pair manifest CSV")
    fin.add_argument("--out", dest="out_path", required=True, help="enhancer output path")
    fin.add_argument("--seed", type=int, default=0)
    fin.add_argument("--epochs", type=int, default=None)
    fin.add_argument("--config", default=None)

    enh = sub.add_parser("enhance", help="offline file enhancement")
    enh.add_argument("--model", default=None, help="codec or enhancer model path")
    enh.add_argument("--in", dest="in_path", required=True)
    enh.add_argument("--out", dest="out_path", required=True)
    enh.add_argument("--bypass", action="store_true", help="identity path (frame-trimmed)")

    ev = sub.add_parser("eval", help="evaluate pairs, write CSV/text report and figures")
    ev.add_argument("--pairs", required=True)
    ev.add_argument("--report", required=True, help="report CSV path")
    ev.add_argument("--model", default=None, help="optional enhancer for enhanced columns")
    ev.add_argument("--no-figures", action="store_true")

    srv = sub.add_parser("serve", help="websocket service with static UI")
    srv.add_argument("--port", type=int, default=8787)
    srv.add_argument("--loop", default=None, help="loopback WAV streamed in real time")
    srv.add_argument("--model", default=None, help="codec enhancer registered at startup")
    srv.add_argument("--bypass", action="store_true")
    srv.add_argument("--config", default=None, help="JSON file of EngineConfig overrides")

    liv = sub.add_parser("live", help="device streaming without the UI (needs sounddevice)")
    liv.add_argument("--model", default=None)
    liv.add_argument("--bypass", action="store_true")
    liv.add_argument("--config", default=None)
    return parser


def _load_overrides(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config overrides must be a JSON object")
    return data


def _dataclass_from(cls, overrides: dict, **direct):
    valid = {f.name for f in fields(cls)}
    unknown = set(overrides) - valid
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    merged = {**overrides, **{k: v for k, v in direct.items() if v is not None}}
    if "phys_noise_band_hz" in merged and isinstance(merged["phys_noise_band_hz"], list):
        merged["phys_noise_band_hz"] = tuple(merged["phys_noise_band_hz"])
    return cls(**merged)


def _cmd_simulate(args) -> int:
    from .synth import generate_corpus
    from .throatsim import ChannelConfig, make_pairs

    corpus = Path(args.in_path)
    if args.synth_seconds:
        corpus.mkdir(parents=True, exist_ok=True)
        if not any(corpus.glob("*.wav")):
            generate_corpus(corpus, args.synth_seconds, seed=args.seed)
            log.info("synthesized %.0f s of speech-like audio into %s", args.synth_seconds, corpus)
    cfg = _dataclass_from(
        ChannelConfig,
        _load_overrides(args.config),
        seed=args.seed,
        cutoff_hz=args.cutoff_hz,
        phys_noise_snr_db=args.noise_snr_db,
    )
    manifest = make_pairs(corpus, args.out_path, cfg)
    print(manifest)
    return 0


def _read_clean_frames(corpus_dir: str, frame_len: int) -> np.ndarray:
    from .audio import frame_split, wav_read

    frames = []
    for path in sorted(Path(corpus_dir).glob("*.wav")):
        split, _ = frame_split(wav_read(path), frame_len)
        frames.extend(f.samples for f in split)
    if not frames:
        raise FileNotFoundError(f"no usable frames in {corpus_dir}")
    return np.stack(frames)


def _cmd_train_pretrain(args) -> int:
    from .codec import CodecConfig, pretrain, save_model

    cfg = _dataclass_from(CodecConfig, _load_overrides(args.config),
                          seed=args.seed, epochs=args.epochs)
    frames = _read_clean_frames(args.in_path, cfg.frame_len)
    log.info("pretraining on %d frames", frames.shape[0])
    model = pretrain(cfg, frames)
    save_model(model, args.out_path)
    from .report import render_loss_curve

    render_loss_curve(model.loss_curve, Path(args.out_path).with_suffix(".loss.png"),
                      "reconstruction pretraining")
    log.info("loss %0.4f -> %0.4f; model written to %s",
             model.loss_curve[0], model.loss_curve[-1], args.out_path)
    return 0


def _cmd_train_finetune(args) -> int:
    from .audio import frame_split, wav_read
    from .codec import CodecConfig, finetune_encoder, load_model, save_model
    from .throatsim import read_manifest

    base = load_model(args.model)
    cfg = _dataclass_from(CodecConfig, _load_overrides(args.config),
                          seed=args.seed, epochs=args.epochs)
    degraded, clean = [], []
    for row in read_manifest(args.pairs):
        c, _ = frame_split(wav_read(row["clean"]), base.config.frame_len)
        d, _ = frame_split(wav_read(row["degraded"]), base.config.frame_len)
        n = min(len(c), len(d))
        clean.extend(f.samples for f in c[:n])
        degraded.extend(f.samples for f in d[:n])
    enh = finetune_encoder(base, (np.stack(degraded), np.stack(clean)), cfg)
    save_model(enh, args.out_path)
    from .report import render_loss_curve

    render_loss_curve(enh.loss_curve, Path(args.out_path).with_suffix(".loss.png"),
                      "embedding-regression fine-tuning")
    log.info("L1 %0.4f -> %0.4f; enhancer written to %s",
             enh.loss_curve[0], enh.loss_curve[-1], args.out_path)
    return 0


def _make_offline_enhancer(model_path: str | None, rate: int):
    from .engine import CodecEnhancer, PassthroughEnhancer

    if model_path is None:
        return PassthroughEnhancer()
    from .codec import load_model

    return CodecEnhancer(load_model(model_path), f"codec:{model_path}")


def _cmd_enhance(args) -> int:
    from .audio import wav_read, wav_write
    from .engine import offline_enhance

    buffer = wav_read(args.in_path)
    enhancer = _make_offline_enhancer(None if args.bypass else args.model, buffer.sample_rate)
    out = offline_enhance(buffer, enhancer, bypass=args.bypass)
    wav_write(out, args.out_path, "float32")
    log.info("wrote %s (%d samples)", args.out_path, len(out))
    return 0


def _cmd_eval(args) -> int:
    from .audio import wav_read
    from .engine import offline_enhance
    from .metrics import evaluate_corpus
    from .throatsim import read_manifest

    enhance = None
    if args.model:
        enhancer = _make_offline_enhancer(args.model, 24000)
        enhance = lambda buf: offline_enhance(buf, enhancer)
    report_path = Path(args.report)
    report = evaluate_corpus(args.pairs, enhance=enhance, report_csv=report_path)
    print(report.to_text())
    if not args.no_figures:
        from .report import render_spectrogram_figure, render_summary_figure

        render_summary_figure(report, report_path.with_name(report_path.stem + "_summary.png"))
        rows = read_manifest(args.pairs)
        if rows:
            first = sorted(rows, key=lambda r: r["clean"])[0]
            clean = wav_read(first["clean"])
            degraded = wav_read(first["degraded"])
            enhanced = enhance(degraded) if enhance else None
            render_spectrogram_figure(
                clean, degraded, enhanced,
                report_path.with_name(report_path.stem + "_spectrograms.png"),
            )
    return 0


def _engine_config_from(args, bypass: bool):
    from .engine import EngineConfig

    overrides = _load_overrides(getattr(args, "config", None))
    cfg = _dataclass_from(EngineConfig, overrides)
    if bypass:
        cfg = replace(cfg, bypass=True)
    return cfg


def _cmd_serve(args) -> int:
    from .engine import StreamEngine
    from .service import ServiceConfig, ThroatlineService

    engine_cfg = _engine_config_from(args, args.bypass)
    if args.model:
        engine_cfg = replace(engine_cfg, active_enhancer=f"codec:{args.model}")
    engine = StreamEngine(engine_cfg)
    service = ThroatlineService(
        ServiceConfig(engine=engine_cfg, port=args.port, loop_wav=args.loop), engine=engine
    )
    log.info("serving on http://localhost:%d (ws at /ws)", args.port)
    service.run()
    return 0


def _cmd_live(args) -> int:
    try:
        import sounddevice as sd
    except ImportError:
        log.error("live mode needs the sounddevice package (pip install throatline[live])")
        return 2
    from .engine import StreamEngine

    cfg = _engine_config_from(args, args.bypass)
    if args.model:
        cfg = replace(cfg, active_enhancer=f"codec:{args.model}")
    engine = StreamEngine(cfg)
    engine.start()
    rate = cfg.sample_rate

    def callback(indata, outdata, frames, time_info, status):
        if status:
            log.warning("device status: %s", status)
        engine.push_input(indata[:, 0])
        engine.pull_output(frames, out=outdata[:, 0])

    import threading

    stop = threading.Event()

    def worker():
        while not stop.is_set():
            engine.process_step()
            stop.wait(0.005)

    threading.Thread(target=worker, daemon=True).start()
    blocksize = max(int(cfg.input_buffer_ms / 1000 * rate), 128)
    try:
        with sd.Stream(samplerate=rate, channels=1, dtype="float32",
                       blocksize=blocksize, callback=callback):
            log.info("live at %d Hz; Ctrl-C to stop", rate)
            threading.Event().wait()
    except KeyboardInterrupt:
        pass
    except sd.PortAudioError as exc:
        log.error("device must run at %d Hz: %s", rate, exc)
        return 2
    finally:
        stop.set()
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train-pretrain": _cmd_train_pretrain,
    "train-finetune": _cmd_train_finetune,
    "enhance": _cmd_enhance,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
    "live": _cmd_live,
}


def cli_dispatch(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
