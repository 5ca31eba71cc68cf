"""Throat-microphone speech enhancement demo toolkit."""

from .audio import Frame, RingBuffer, SampleBuffer, frame_split, resample, wav_read, wav_write
from .codec import (
    CodecConfig,
    CodecModel,
    EnhancerModel,
    TokenFrame,
    decode,
    dequantize,
    encode,
    enhance_frame,
    finetune_encoder,
    load_model,
    pretrain,
    quantize,
    save_model,
)
from .engine import EngineConfig, LatencyReport, StreamEngine, predicted_latency
from .metrics import MetricReport, evaluate_corpus, lsd, si_sdr, stoi
from .throatsim import ChannelConfig, make_pairs, simulate_channel

__version__ = "0.1.0"

__all__ = [
    "ChannelConfig",
    "CodecConfig",
    "CodecModel",
    "EngineConfig",
    "EnhancerModel",
    "Frame",
    "LatencyReport",
    "MetricReport",
    "RingBuffer",
    "SampleBuffer",
    "StreamEngine",
    "TokenFrame",
    "decode",
    "dequantize",
    "encode",
    "enhance_frame",
    "evaluate_corpus",
    "finetune_encoder",
    "frame_split",
    "load_model",
    "lsd",
    "make_pairs",
    "predicted_latency",
    "pretrain",
    "quantize",
    "resample",
    "save_model",
    "si_sdr",
    "simulate_channel",
    "stoi",
    "wav_read",
    "wav_write",
]
