"""Trainable per-frame audio codec and its two-stage enhancement recipe.

Stage one pretrains a small encoder / residual-VQ / decoder stack to
reconstruct clean speech frames through the token bottleneck.  Stage two
freezes everything and fine-tunes a duplicate encoder so embeddings of
degraded frames regress (L1) onto the frozen encoder's clean-frame
embeddings.  Enhancement then runs degraded frames through the fine-tuned
encoder and the frozen quantizer + decoder.

All forward math is float32 over float32 parameters and is deterministic;
training keeps float64 master weights, written back to float32 at the end.
Gradients are hand-derived and validated against central finite differences
in the test suite.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import Frame
from .dsp import mel_filterbank, next_pow2

MAGIC_CODEC = b"TLC1"
MAGIC_ENHANCER = b"TLE1"
FORMAT_VERSION = 1

_MEL_BANDS = 64
_MEL_WEIGHT = 1.0
_MEL_EPS = 1e-2
_EMA_EPS = 1e-5

# encoder/decoder parameter names in serialization order
_ENC_KEYS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2")
_DEC_KEYS = ("dec_w1", "dec_b1", "dec_w2", "dec_b2")
_PARAM_KEYS = _ENC_KEYS + _DEC_KEYS


class ModelFormatError(ValueError):
    """Raised for bad magic, version, or truncated model files."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class CodecConfig:
    frame_len: int = 1920
    embed_dim: int = 64
    hidden_dim: int = 256
    num_quantizers: int = 4
    codebook_size: int = 256
    seed: int = 0
    learn_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 100
    ema_decay: float = 0.99

    def __post_init__(self) -> None:
        for name in ("frame_len", "embed_dim", "hidden_dim", "num_quantizers", "codebook_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")


@dataclass(frozen=True)
class TokenFrame:
    """Discrete latent token indices for one frame, one per quantizer level."""

    indices: tuple[int, ...]


@dataclass
class CodecModel:
    config: CodecConfig
    enc_w1: np.ndarray  # (hidden, frame_len)
    enc_b1: np.ndarray  # (hidden,)
    enc_w2: np.ndarray  # (embed, hidden)
    enc_b2: np.ndarray  # (embed,)
    dec_w1: np.ndarray  # (hidden, embed)
    dec_b1: np.ndarray  # (hidden,)
    dec_w2: np.ndarray  # (frame_len, hidden)
    dec_b2: np.ndarray  # (frame_len,)
    codebooks: np.ndarray  # (Q, K, embed)
    version: int = FORMAT_VERSION
    loss_curve: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        for key in (*_PARAM_KEYS, "codebooks"):
            arr = getattr(self, key)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in {key}")
            setattr(self, key, np.ascontiguousarray(arr, dtype=np.float32))

    def param_tensors(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in _PARAM_KEYS] + [self.codebooks]


@dataclass
class EnhancerModel:
    """Fine-tuned encoder riding on a frozen base codec."""

    base: CodecModel
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    version: int = FORMAT_VERSION
    loss_curve: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        for key in _ENC_KEYS:
            arr = getattr(self, key)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in {key}")
            setattr(self, key, np.ascontiguousarray(arr, dtype=np.float32))


# ---------------------------------------------------------------------------
# forward operations (pure, float32)


def _as_frame_array(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.samples
    return np.asarray(frame, dtype=np.float32).reshape(-1)


def encode(model: CodecModel | EnhancerModel, frame) -> np.ndarray:
    """Frame samples -> embedding (pre-quantization)."""
    x = _as_frame_array(frame)
    frame_len = model.base.config.frame_len if isinstance(model, EnhancerModel) else model.config.frame_len
    if x.shape[0] != frame_len:
        raise ValueError(f"expected frame of {frame_len} samples, got {x.shape[0]}")
    h = np.tanh(model.enc_w1 @ x + model.enc_b1)
    return model.enc_w2 @ h + model.enc_b2


def quantize(model: CodecModel, embedding: np.ndarray) -> tuple[TokenFrame, np.ndarray]:
    """Residual VQ: each level grabs the nearest codebook vector to the
    running residual (Euclidean, ties to the lowest index)."""
    e = np.asarray(embedding, dtype=np.float32).reshape(-1)
    if e.shape[0] != model.config.embed_dim:
        raise ValueError(f"expected embedding of dim {model.config.embed_dim}, got {e.shape[0]}")
    residual = e.copy()
    quantized = np.zeros_like(e)
    indices = []
    for q in range(model.config.num_quantizers):
        book = model.codebooks[q]
        d2 = np.sum((book - residual) ** 2, axis=1)
        k = int(np.argmin(d2))
        indices.append(k)
        quantized += book[k]
        residual -= book[k]
    return TokenFrame(tuple(indices)), quantized


def dequantize(model: CodecModel, tokens: TokenFrame) -> np.ndarray:
    """Sum of the selected codebook vectors."""
    if len(tokens.indices) != model.config.num_quantizers:
        raise ValueError("token count does not match num_quantizers")
    out = np.zeros(model.config.embed_dim, dtype=np.float32)
    for q, k in enumerate(tokens.indices):
        if not 0 <= k < model.config.codebook_size:
            raise IndexError(f"token index {k} out of range [0, {model.config.codebook_size})")
        out += model.codebooks[q, k]
    return out


def decode(model: CodecModel, embedding: np.ndarray) -> np.ndarray:
    """Embedding -> frame samples (unclamped; the engine clamps)."""
    e = np.asarray(embedding, dtype=np.float32).reshape(-1)
    if e.shape[0] != model.config.embed_dim:
        raise ValueError(f"expected embedding of dim {model.config.embed_dim}, got {e.shape[0]}")
    g = np.tanh(model.dec_w1 @ e + model.dec_b1)
    return model.dec_w2 @ g + model.dec_b2


def enhance_frame(enh: EnhancerModel | CodecModel, frame) -> np.ndarray:
    """Degraded frame -> enhanced frame through tokens; no state, no updates."""
    if isinstance(enh, EnhancerModel):
        embedding = encode(enh, frame)
        base = enh.base
    else:
        embedding = encode(enh, frame)
        base = enh
    _, quantized = quantize(base, embedding)
    return decode(base, quantized)


# ---------------------------------------------------------------------------
# training machinery (float64)


class _MelKit:
    """Log-mel analysis of a batch of frames, with the adjoint for backprop."""

    def __init__(self, frame_len: int, rate: int = 24000, n_mel: int = _MEL_BANDS):
        self.fft_len = next_pow2(frame_len)
        self.frame_len = frame_len
        # rectangular analysis window: every sample, including frame edges,
        # carries equal weight in the spectral term
        self.window = np.ones(frame_len)
        self.norm = (frame_len / 2.0) ** 2
        self.mel = mel_filterbank(self.fft_len // 2 + 1, rate, n_mel).weights

    def logmel(self, frames: np.ndarray):
        w = frames * self.window
        spec = np.fft.rfft(w, self.fft_len, axis=1)
        power = (spec.real**2 + spec.imag**2) / self.norm
        bands = power @ self.mel.T + _MEL_EPS
        return np.log(bands), (spec, bands)

    def grad_frames(self, d_logmel: np.ndarray, cache) -> np.ndarray:
        spec, bands = cache
        d_power = (d_logmel / bands) @ self.mel / self.norm
        g = d_power * spec
        # adjoint of |rfft|^2 for real input: N*irfft(u*F) + G0 + (-1)^n G_{N/2}
        grad = self.fft_len * np.fft.irfft(g, self.fft_len, axis=1)
        grad += g[:, :1].real
        grad[:, 0::2] += g[:, -1:].real
        grad[:, 1::2] -= g[:, -1:].real
        return grad[:, : self.frame_len] * self.window


def _init_params(cfg: CodecConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    def glorot(rows, cols):
        s = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-s, s, size=(rows, cols))

    return {
        "enc_w1": glorot(cfg.hidden_dim, cfg.frame_len),
        "enc_b1": np.zeros(cfg.hidden_dim),
        "enc_w2": glorot(cfg.embed_dim, cfg.hidden_dim),
        "enc_b2": np.zeros(cfg.embed_dim),
        "dec_w1": glorot(cfg.hidden_dim, cfg.embed_dim),
        "dec_b1": np.zeros(cfg.hidden_dim),
        "dec_w2": glorot(cfg.frame_len, cfg.hidden_dim),
        "dec_b2": np.zeros(cfg.frame_len),
    }


def _encode_batch(params: dict[str, np.ndarray], x: np.ndarray):
    h = np.tanh(x @ params["enc_w1"].T + params["enc_b1"])
    return h @ params["enc_w2"].T + params["enc_b2"], h


def _decode_batch(params: dict[str, np.ndarray], e: np.ndarray):
    g = np.tanh(e @ params["dec_w1"].T + params["dec_b1"])
    return g @ params["dec_w2"].T + params["dec_b2"], g


def _rvq_batch(codebooks: np.ndarray, embeddings: np.ndarray):
    """Assign a batch through all levels.

    Returns (indices (B, Q), quantized (B, D), level_inputs list of (B, D)).
    """
    residual = embeddings.copy()
    quantized = np.zeros_like(embeddings)
    q_levels = codebooks.shape[0]
    indices = np.empty((embeddings.shape[0], q_levels), dtype=np.int64)
    level_inputs = []
    for q in range(q_levels):
        level_inputs.append(residual.copy())
        book = codebooks[q]
        d2 = (
            np.sum(residual**2, axis=1, keepdims=True)
            - 2.0 * residual @ book.T
            + np.sum(book**2, axis=1)
        )
        idx = np.argmin(d2, axis=1)
        indices[:, q] = idx
        chosen = book[idx]
        quantized += chosen
        residual = residual - chosen
    return indices, quantized, level_inputs


def reconstruction_loss_and_grads(
    params: dict[str, np.ndarray],
    frames: np.ndarray,
    mel_kit: _MelKit,
    quantized: np.ndarray | None = None,
):
    """Pretraining loss (mean-abs time error + mean-square log-mel error).

    When ``quantized`` is given the decoder consumes it and the gradient
    passes straight through to the encoder embeddings; otherwise the
    quantizer is bypassed entirely.
    """
    x = frames
    batch, frame_len = x.shape
    embeddings, h = _encode_batch(params, x)
    dec_in = embeddings if quantized is None else quantized
    y, g = _decode_batch(params, dec_in)

    diff = y - x
    loss_time = np.abs(diff).mean()
    lm_y, cache_y = mel_kit.logmel(y)
    lm_x, _ = mel_kit.logmel(x)
    mel_diff = lm_y - lm_x
    loss_mel = np.mean(mel_diff**2)
    loss = loss_time + _MEL_WEIGHT * loss_mel

    d_y = np.sign(diff) / diff.size
    d_y += _MEL_WEIGHT * mel_kit.grad_frames(2.0 * mel_diff / mel_diff.size, cache_y)

    grads = {}
    grads["dec_w2"] = d_y.T @ g
    grads["dec_b2"] = d_y.sum(axis=0)
    d_g = (d_y @ params["dec_w2"]) * (1.0 - g**2)
    grads["dec_w1"] = d_g.T @ dec_in
    grads["dec_b1"] = d_g.sum(axis=0)
    d_e = d_g @ params["dec_w1"]  # straight-through across the quantizer
    grads["enc_w2"] = d_e.T @ h
    grads["enc_b2"] = d_e.sum(axis=0)
    d_h = (d_e @ params["enc_w2"]) * (1.0 - h**2)
    grads["enc_w1"] = d_h.T @ x
    grads["enc_b1"] = d_h.sum(axis=0)
    return loss, grads


def embedding_l1_loss_and_grads(
    enc_params: dict[str, np.ndarray],
    degraded_frames: np.ndarray,
    reference_embeddings: np.ndarray,
):
    """Fine-tuning objective: mean-abs distance to frozen reference embeddings."""
    embeddings, h = _encode_batch(enc_params, degraded_frames)
    diff = embeddings - reference_embeddings
    loss = np.abs(diff).mean()
    d_e = np.sign(diff) / diff.size
    grads = {
        "enc_w2": d_e.T @ h,
        "enc_b2": d_e.sum(axis=0),
    }
    d_h = (d_e @ enc_params["enc_w2"]) * (1.0 - h**2)
    grads["enc_w1"] = d_h.T @ degraded_frames
    grads["enc_b1"] = d_h.sum(axis=0)
    return loss, grads


def _as_frames_matrix(corpus, frame_len: int) -> np.ndarray:
    if isinstance(corpus, np.ndarray) and corpus.ndim == 2:
        mat = corpus.astype(np.float64)
    else:
        rows = [_as_frame_array(f) for f in corpus]
        if not rows:
            return np.zeros((0, frame_len))
        mat = np.stack(rows).astype(np.float64)
    if mat.shape[1] != frame_len:
        raise ValueError(f"frames have length {mat.shape[1]}, expected {frame_len}")
    return mat


class _SGD:
    def __init__(self, keys, params, learn_rate, momentum):
        self.velocity = {k: np.zeros_like(params[k]) for k in keys}
        self.learn_rate = learn_rate
        self.momentum = momentum

    def step(self, params, grads):
        for k, v in self.velocity.items():
            v *= self.momentum
            v -= self.learn_rate * grads[k]
            params[k] += v


def pretrain(config: CodecConfig, clean_corpus) -> CodecModel:
    """Reconstruction pretraining of encoder, decoder, and EMA codebooks.

    Gradients flow through the straight-through estimator at the quantizer;
    codebooks follow exponential-moving-average assignment statistics with
    dead codes reseeded from batch embeddings every epoch.
    """
    frames = _as_frames_matrix(clean_corpus, config.frame_len)
    if frames.shape[0] == 0:
        raise ValueError("clean corpus is empty")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed & 0xFFFFFFFF, 1]))
    params = _init_params(config, rng)
    mel_kit = _MelKit(config.frame_len)
    q_levels, k_size, d = config.num_quantizers, config.codebook_size, config.embed_dim

    # Seed codebooks from the residual cascade of an initial embedding sample.
    # Entry 0 of every level is pinned to the zero vector (a "null code"), so
    # each level can leave its residual untouched; this makes quantization
    # error non-increasing in the number of levels for every embedding.
    sample = frames[rng.permutation(frames.shape[0])[: min(4096, frames.shape[0])]]
    emb0, _ = _encode_batch(params, sample)
    codebooks = np.empty((q_levels, k_size, d))
    residual = emb0.copy()
    for q in range(q_levels):
        pick = rng.integers(0, residual.shape[0], size=k_size)
        codebooks[q] = residual[pick]
        codebooks[q][0] = 0.0
        idx = np.argmin(
            np.sum(residual**2, axis=1, keepdims=True)
            - 2.0 * residual @ codebooks[q].T
            + np.sum(codebooks[q] ** 2, axis=1),
            axis=1,
        )
        residual = residual - codebooks[q][idx]
    ema_count = np.ones((q_levels, k_size))
    ema_sum = codebooks.copy()

    def eval_loss() -> float:
        total, count = 0.0, 0
        for lo in range(0, frames.shape[0], 256):
            batch = frames[lo : lo + 256]
            emb, _ = _encode_batch(params, batch)
            _, quant, _ = _rvq_batch(codebooks, emb)
            loss, _ = reconstruction_loss_and_grads(params, batch, mel_kit, quantized=quant)
            total += loss * batch.shape[0]
            count += batch.shape[0]
        return total / count

    curve = [eval_loss()]
    opt = _SGD(_PARAM_KEYS, params, config.learn_rate, config.momentum)
    decay = config.ema_decay

    for _ in range(config.epochs):
        order = rng.permutation(frames.shape[0])
        usage = np.zeros((q_levels, k_size), dtype=np.int64)
        stash = None
        epoch_loss, seen = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = frames[order[lo : lo + config.batch_size]]
            emb, _ = _encode_batch(params, batch)
            indices, quant, level_inputs = _rvq_batch(codebooks, emb)
            loss, grads = reconstruction_loss_and_grads(params, batch, mel_kit, quantized=quant)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {len(curve)} batch {lo // config.batch_size}"
                )
            opt.step(params, grads)
            # EMA codebook update from this batch's assignments
            for q in range(q_levels):
                counts = np.bincount(indices[:, q], minlength=k_size).astype(np.float64)
                sums = np.zeros((k_size, d))
                np.add.at(sums, indices[:, q], level_inputs[q])
                ema_count[q] = decay * ema_count[q] + (1.0 - decay) * counts
                ema_sum[q] = decay * ema_sum[q] + (1.0 - decay) * sums
                n = ema_count[q].sum()
                smoothed = (ema_count[q] + _EMA_EPS) / (n + k_size * _EMA_EPS) * n
                codebooks[q] = ema_sum[q] / smoothed[:, None]
                codebooks[q][0] = 0.0  # null code stays pinned
                usage[q] += counts.astype(np.int64)
            stash = level_inputs
            epoch_loss += loss * batch.shape[0]
            seen += batch.shape[0]
        # reseed codes unused for the whole epoch from stashed batch embeddings
        for q in range(q_levels):
            dead = np.flatnonzero(usage[q][1:] == 0) + 1  # never reseed the null code
            if dead.size and stash is not None:
                rows = stash[q][rng.integers(0, stash[q].shape[0], size=dead.size)]
                codebooks[q][dead] = rows
                ema_count[q][dead] = 1.0
                ema_sum[q][dead] = rows
        curve.append(epoch_loss / seen)

    return CodecModel(
        config=config,
        **{k: params[k].astype(np.float32) for k in _PARAM_KEYS},
        codebooks=codebooks.astype(np.float32),
        loss_curve=[float(v) for v in curve],
    )


def finetune_encoder(base: CodecModel, pairs, config: CodecConfig | None = None) -> EnhancerModel:
    """Fine-tune a duplicate encoder on (degraded, clean) frame pairs.

    Only the duplicate's parameters move; the base encoder, codebooks, and
    decoder stay untouched.  The L1 objective compares pre-quantization
    embeddings against the frozen encoder's clean-frame embeddings.
    """
    cfg = replace(config or base.config, frame_len=base.config.frame_len,
                  embed_dim=base.config.embed_dim, hidden_dim=base.config.hidden_dim)
    degraded, clean = _pairs_to_matrices(pairs, cfg.frame_len)
    if degraded.shape[0] == 0:
        raise ValueError("no training pairs given")
    base_params = {k: getattr(base, k).astype(np.float64) for k in _ENC_KEYS}
    reference, _ = _encode_batch(base_params, clean)

    params = {k: base_params[k].copy() for k in _ENC_KEYS}  # same checkpoint
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 2]))
    opt = _SGD(_ENC_KEYS, params, cfg.learn_rate, cfg.momentum)
    first, _ = embedding_l1_loss_and_grads(params, degraded, reference)
    curve = [first]
    for _ in range(cfg.epochs):
        order = rng.permutation(degraded.shape[0])
        epoch_loss, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            rows = order[lo : lo + cfg.batch_size]
            loss, grads = embedding_l1_loss_and_grads(params, degraded[rows], reference[rows])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {len(curve)}")
            opt.step(params, grads)
            epoch_loss += loss * len(rows)
            seen += len(rows)
        curve.append(epoch_loss / seen)

    return EnhancerModel(
        base=base,
        **{k: params[k].astype(np.float32) for k in _ENC_KEYS},
        loss_curve=[float(v) for v in curve],
    )


def _pairs_to_matrices(pairs, frame_len: int):
    if isinstance(pairs, tuple) and len(pairs) == 2:
        degraded = _as_frames_matrix(pairs[0], frame_len)
        clean = _as_frames_matrix(pairs[1], frame_len)
    else:
        items = list(pairs)
        degraded = _as_frames_matrix([p[0] for p in items], frame_len)
        clean = _as_frames_matrix([p[1] for p in items], frame_len)
    if degraded.shape != clean.shape:
        raise ValueError(
            f"misaligned pairs: degraded {degraded.shape} vs clean {clean.shape}"
        )
    return degraded, clean


# ---------------------------------------------------------------------------
# serialization


def _pack_config(cfg: CodecConfig) -> bytes:
    return struct.pack(
        "<8I3f",
        cfg.frame_len,
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.num_quantizers,
        cfg.codebook_size,
        cfg.seed & 0xFFFFFFFF,
        cfg.batch_size,
        cfg.epochs,
        cfg.learn_rate,
        cfg.momentum,
        cfg.ema_decay,
    )


def _unpack_config(blob: bytes) -> CodecConfig:
    vals = struct.unpack("<8I3f", blob)
    return CodecConfig(
        frame_len=vals[0],
        embed_dim=vals[1],
        hidden_dim=vals[2],
        num_quantizers=vals[3],
        codebook_size=vals[4],
        seed=vals[5],
        batch_size=vals[6],
        epochs=vals[7],
        learn_rate=float(vals[8]),
        momentum=float(vals[9]),
        ema_decay=float(vals[10]),
    )


_CONFIG_BYTES = struct.calcsize("<8I3f")


def codec_bytes(model: CodecModel) -> bytes:
    parts = [MAGIC_CODEC, struct.pack("<I", model.version), _pack_config(model.config)]
    parts += [t.astype("<f4").tobytes() for t in model.param_tensors()]
    return b"".join(parts)


def model_hash(model: CodecModel) -> bytes:
    return hashlib.sha256(codec_bytes(model)).digest()


def save_model(model: CodecModel | EnhancerModel, path: str | Path) -> None:
    """Write TLC1 (codec) or TLE1 (fine-tuned encoder + base hash) files."""
    path = Path(path)
    if isinstance(model, CodecModel):
        path.write_bytes(codec_bytes(model))
        return
    parts = [MAGIC_ENHANCER, struct.pack("<I", model.version), model_hash(model.base)]
    parts += [getattr(model, k).astype("<f4").tobytes() for k in _ENC_KEYS]
    path.write_bytes(b"".join(parts))


def _tensor_shapes(cfg: CodecConfig) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("enc_w1", (cfg.hidden_dim, cfg.frame_len)),
        ("enc_b1", (cfg.hidden_dim,)),
        ("enc_w2", (cfg.embed_dim, cfg.hidden_dim)),
        ("enc_b2", (cfg.embed_dim,)),
        ("dec_w1", (cfg.hidden_dim, cfg.embed_dim)),
        ("dec_b1", (cfg.hidden_dim,)),
        ("dec_w2", (cfg.frame_len, cfg.hidden_dim)),
        ("dec_b2", (cfg.frame_len,)),
        ("codebooks", (cfg.num_quantizers, cfg.codebook_size, cfg.embed_dim)),
    ]


def load_model(path: str | Path, base: CodecModel | None = None) -> CodecModel | EnhancerModel:
    """Load a TLC1 codec, or a TLE1 enhancer given (or found beside) its base.

    A TLE1 file stores only the base model's SHA-256; when ``base`` is not
    supplied the loader scans the file's directory for a TLC1 file with a
    matching hash.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ModelFormatError(f"{path}: truncated model file")
    magic = raw[:4]
    (version,) = struct.unpack_from("<I", raw, 4)
    if magic == MAGIC_CODEC:
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported version {version}")
        cfg = _unpack_config(raw[8 : 8 + _CONFIG_BYTES])
        tensors = {}
        offset = 8 + _CONFIG_BYTES
        for name, shape in _tensor_shapes(cfg):
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(raw):
                raise ModelFormatError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
            offset = end
        if offset != len(raw):
            raise ModelFormatError(f"{path}: {len(raw) - offset} trailing bytes")
        return CodecModel(config=cfg, version=version, **tensors)
    if magic == MAGIC_ENHANCER:
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported version {version}")
        want_hash = raw[8:40]
        if base is None:
            base = _find_base_by_hash(path.parent, want_hash)
        elif model_hash(base) != want_hash:
            raise ModelFormatError(f"{path}: base model hash mismatch")
        cfg = base.config
        tensors = {}
        offset = 40
        for name, shape in _tensor_shapes(cfg)[:4]:
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(raw):
                raise ModelFormatError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
            offset = end
        if offset != len(raw):
            raise ModelFormatError(f"{path}: {len(raw) - offset} trailing bytes")
        return EnhancerModel(base=base, version=version, **tensors)
    raise ModelFormatError(f"{path}: bad magic {magic!r}")


def _find_base_by_hash(directory: Path, want_hash: bytes) -> CodecModel:
    for candidate in sorted(directory.glob("*")):
        if not candidate.is_file():
            continue
        try:
            with open(candidate, "rb") as fh:
                if fh.read(4) != MAGIC_CODEC:
                    continue
        except OSError:
            continue
        model = load_model(candidate)
        if model_hash(model) == want_hash:
            return model
    raise ModelFormatError(
        f"no TLC1 base model matching the enhancer's hash found in {directory}"
    )
