import numpy as np
import pytest

from throatline.codec import (
    CodecConfig,
    CodecModel,
    EnhancerModel,
    ModelFormatError,
    TokenFrame,
    _MelKit,
    _init_params,
    _rvq_batch,
    _PARAM_KEYS,
    _ENC_KEYS,
    decode,
    dequantize,
    embedding_l1_loss_and_grads,
    encode,
    enhance_frame,
    finetune_encoder,
    load_model,
    model_hash,
    pretrain,
    quantize,
    reconstruction_loss_and_grads,
    save_model,
)

SMALL = CodecConfig(
    frame_len=768, embed_dim=8, hidden_dim=24, num_quantizers=3, codebook_size=16,
    seed=11, epochs=8, learn_rate=0.05, batch_size=16,
)


def small_model(seed=11, zero=False) -> CodecModel:
    rng = np.random.default_rng(seed)
    params = _init_params(SMALL, rng)
    if zero:
        params = {k: np.zeros_like(v) for k, v in params.items()}
    codebooks = (
        np.zeros((SMALL.num_quantizers, SMALL.codebook_size, SMALL.embed_dim))
        if zero
        else rng.normal(0, 0.5, (SMALL.num_quantizers, SMALL.codebook_size, SMALL.embed_dim))
    )
    codebooks[:, 0, :] = 0.0  # trained models pin a null code per level
    return CodecModel(config=SMALL, **{k: v.astype(np.float32) for k, v in params.items()},
                      codebooks=codebooks.astype(np.float32))


class TestForwardOps:
    def test_zero_weights_zero_frame_zero_embedding(self):
        m = small_model(zero=True)
        e = encode(m, np.zeros(SMALL.frame_len, np.float32))
        assert not e.any()

    def test_encode_deterministic(self):
        m = small_model()
        x = np.random.default_rng(0).uniform(-1, 1, SMALL.frame_len).astype(np.float32)
        assert np.array_equal(encode(m, x), encode(m, x))

    def test_encode_finite_for_random_frames(self):
        m = small_model()
        rng = np.random.default_rng(1)
        for _ in range(100):
            e = encode(m, rng.uniform(-1, 1, SMALL.frame_len).astype(np.float32))
            assert np.isfinite(e).all()

    def test_encode_shape_error(self):
        with pytest.raises(ValueError):
            encode(small_model(), np.zeros(100, np.float32))

    def test_quantize_exact_codebook_entry(self):
        m = small_model()
        cfg_q1 = CodecConfig(frame_len=SMALL.frame_len, embed_dim=SMALL.embed_dim,
                             hidden_dim=SMALL.hidden_dim, num_quantizers=1,
                             codebook_size=SMALL.codebook_size)
        m1 = CodecModel(config=cfg_q1, **{k: getattr(m, k) for k in _PARAM_KEYS},
                        codebooks=m.codebooks[:1])
        target = m1.codebooks[0, 7].copy()
        tokens, quantized = quantize(m1, target)
        assert tokens.indices == (7,)
        assert np.allclose(quantized, target, atol=1e-6)

    def test_rvq_error_monotone_in_levels(self):
        m = small_model()
        rng = np.random.default_rng(2)
        embeddings = rng.normal(0, 0.6, (1000, SMALL.embed_dim))
        books = m.codebooks.astype(np.float64)
        _, q1, _ = _rvq_batch(books[:1], embeddings)
        _, q3, _ = _rvq_batch(books, embeddings)
        err1 = np.linalg.norm(embeddings - q1, axis=1)
        err3 = np.linalg.norm(embeddings - q3, axis=1)
        assert np.all(err3 <= err1 + 1e-12)

    def test_dequantize_matches_quantize_output(self):
        m = small_model()
        e = np.random.default_rng(3).normal(0, 0.5, SMALL.embed_dim).astype(np.float32)
        tokens, quantized = quantize(m, e)
        assert np.array_equal(dequantize(m, tokens), quantized)

    def test_dequantize_zero_codebooks(self):
        m = small_model(zero=True)
        out = dequantize(m, TokenFrame((0, 0, 0)))
        assert not out.any()

    def test_dequantize_direct_sum(self):
        m = small_model()
        tokens = TokenFrame((2, 5, 9))
        expect = m.codebooks[0, 2] + m.codebooks[1, 5] + m.codebooks[2, 9]
        assert np.allclose(dequantize(m, tokens), expect, atol=1e-7)

    def test_dequantize_range_error(self):
        with pytest.raises(IndexError):
            dequantize(small_model(), TokenFrame((0, 0, 99)))

    def test_token_validity_fuzz(self):
        m = small_model()
        rng = np.random.default_rng(4)
        for _ in range(300):
            tokens, _ = quantize(m, rng.normal(0, 2.0, SMALL.embed_dim))
            assert all(0 <= k < SMALL.codebook_size for k in tokens.indices)
            assert len(tokens.indices) == SMALL.num_quantizers

    def test_decode_zero(self):
        m = small_model(zero=True)
        assert not decode(m, np.zeros(SMALL.embed_dim, np.float32)).any()

    def test_decode_final_layer_affine(self):
        # finite-difference Jacobian of the hidden->output map equals dec_w2,
        # and the zero-hidden offset equals dec_b2
        m = small_model()
        w2 = m.dec_w2.astype(np.float64)
        b2 = m.dec_b2.astype(np.float64)

        def from_hidden(g):
            return w2 @ g + b2

        g0 = np.random.default_rng(5).normal(0, 0.4, SMALL.hidden_dim)
        h = 1e-6
        for j in [0, 7, 23]:
            dg = np.zeros(SMALL.hidden_dim)
            dg[j] = h
            fd = (from_hidden(g0 + dg) - from_hidden(g0 - dg)) / (2 * h)
            assert np.allclose(fd, w2[:, j], atol=1e-6)
        assert np.allclose(from_hidden(np.zeros(SMALL.hidden_dim)), b2)

    def test_enhance_frame_deterministic_and_framewise(self):
        m = small_model()
        x = np.random.default_rng(6).uniform(-1, 1, SMALL.frame_len).astype(np.float32)
        y1, y2 = enhance_frame(m, x), enhance_frame(m, x)
        assert np.array_equal(y1, y2)
        assert y1.shape == (SMALL.frame_len,)


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_reconstruction_gradients_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        params = _init_params(SMALL, rng)
        mel = _MelKit(SMALL.frame_len)
        x = rng.normal(0, 0.1, (4, SMALL.frame_len))
        _, grads = reconstruction_loss_and_grads(params, x, mel)
        h = 1e-6
        for key, grad in grads.items():
            flat = params[key].reshape(-1)
            gflat = grad.reshape(-1)
            idx = rng.choice(flat.size, size=min(12, flat.size), replace=False)
            fd = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                up, _ = reconstruction_loss_and_grads(params, x, mel)
                flat[i] = orig - h
                dn, _ = reconstruction_loss_and_grads(params, x, mel)
                flat[i] = orig
                fd[j] = (up - dn) / (2 * h)
            rel = np.linalg.norm(gflat[idx] - fd) / (np.linalg.norm(gflat[idx]) + 1e-30)
            assert rel < 1e-4, f"{key}: rel err {rel}"

    def test_l1_gradients_match_fd(self):
        rng = np.random.default_rng(9)
        params = _init_params(SMALL, rng)
        x_deg = rng.normal(0, 0.1, (4, SMALL.frame_len))
        ref = rng.normal(0, 0.4, (4, SMALL.embed_dim))
        _, grads = embedding_l1_loss_and_grads(params, x_deg, ref)
        h = 1e-6
        for key in _ENC_KEYS:
            flat = params[key].reshape(-1)
            gflat = grads[key].reshape(-1)
            idx = rng.choice(flat.size, size=min(12, flat.size), replace=False)
            fd = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                up, _ = embedding_l1_loss_and_grads(params, x_deg, ref)
                flat[i] = orig - h
                dn, _ = embedding_l1_loss_and_grads(params, x_deg, ref)
                flat[i] = orig
                fd[j] = (up - dn) / (2 * h)
            rel = np.linalg.norm(gflat[idx] - fd) / (np.linalg.norm(gflat[idx]) + 1e-30)
            assert rel < 1e-4, f"{key}: rel err {rel}"


def tiny_corpus(n=48, seed=0):
    # harmonic frames matching the small config's frame length
    rng = np.random.default_rng(seed)
    t = np.arange(SMALL.frame_len)
    rows = []
    for _ in range(n):
        c = rng.integers(4, 9)
        amp = rng.uniform(0.2, 0.6)
        rows.append(amp * np.sin(2 * np.pi * c * t / SMALL.frame_len))
    return np.asarray(rows)


class TestPretrain:
    def test_loss_decreases(self):
        model = pretrain(SMALL, tiny_corpus())
        assert model.loss_curve[-1] <= model.loss_curve[0]
        assert len(model.loss_curve) == SMALL.epochs + 1

    def test_zero_corpus_converges_fast(self):
        cfg = CodecConfig(frame_len=768, embed_dim=8, hidden_dim=24, num_quantizers=2,
                          codebook_size=8, seed=2, epochs=25, learn_rate=0.05, batch_size=16)
        model = pretrain(cfg, np.zeros((32, 768)))
        assert model.loss_curve[-1] < 1e-3

    def test_bit_reproducible_given_seed(self):
        a = pretrain(SMALL, tiny_corpus())
        b = pretrain(SMALL, tiny_corpus())
        for ta, tb in zip(a.param_tensors(), b.param_tensors()):
            assert np.array_equal(ta, tb)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            pretrain(SMALL, np.zeros((0, SMALL.frame_len)))


class TestFinetune:
    def test_identical_pairs_are_fixed_point(self):
        base = pretrain(SMALL, tiny_corpus())
        frames = tiny_corpus(24, seed=5)
        enh = finetune_encoder(base, (frames, frames), SMALL)
        assert enh.loss_curve[0] == pytest.approx(0.0, abs=1e-12)
        # zero gradient at init: parameters stay put
        for key in _ENC_KEYS:
            assert np.allclose(getattr(enh, key), getattr(base, key), atol=1e-7)

    def test_frozen_parameters_untouched(self):
        base = pretrain(SMALL, tiny_corpus())
        before = model_hash(base)
        clean = tiny_corpus(32, seed=6)
        degraded = clean * 0.5 + 0.01
        enh = finetune_encoder(base, (degraded, clean), SMALL)
        assert model_hash(base) == before
        assert enh.base is base

    def test_loss_improves_on_degraded_pairs(self):
        base = pretrain(SMALL, tiny_corpus())
        clean = tiny_corpus(40, seed=7)
        degraded = clean * 0.4  # crude band-limiting stand-in
        cfg = CodecConfig(frame_len=SMALL.frame_len, embed_dim=SMALL.embed_dim,
                          hidden_dim=SMALL.hidden_dim, num_quantizers=SMALL.num_quantizers,
                          codebook_size=SMALL.codebook_size, seed=8, epochs=30,
                          learn_rate=0.05, batch_size=16)
        enh = finetune_encoder(base, (degraded, clean), cfg)
        assert enh.loss_curve[-1] < enh.loss_curve[0]

    def test_misaligned_pairs_rejected(self):
        base = pretrain(SMALL, tiny_corpus())
        with pytest.raises(ValueError):
            finetune_encoder(base, (tiny_corpus(4), tiny_corpus(5)), SMALL)


class TestSerialization:
    def test_save_load_save_byte_identical(self, tmp_path):
        model = pretrain(SMALL, tiny_corpus())
        p1, p2 = tmp_path / "a.tlc", tmp_path / "b.tlc"
        save_model(model, p1)
        loaded = load_model(p1)
        save_model(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic_rejected(self, tmp_path):
        model = small_model()
        path = tmp_path / "m.tlc"
        save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_truncated_rejected(self, tmp_path):
        model = small_model()
        path = tmp_path / "m.tlc"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-17])
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_enhance_bitwise_stable_across_roundtrip(self, tmp_path):
        base = pretrain(SMALL, tiny_corpus())
        clean = tiny_corpus(16, seed=12)
        enh = finetune_encoder(base, (clean * 0.5, clean), SMALL)
        x = np.random.default_rng(13).uniform(-1, 1, SMALL.frame_len).astype(np.float32)
        want = enhance_frame(enh, x)
        save_model(base, tmp_path / "base.tlc")
        save_model(enh, tmp_path / "enh.tle")
        reloaded = load_model(tmp_path / "enh.tle")  # base found by hash scan
        assert isinstance(reloaded, EnhancerModel)
        assert np.array_equal(enhance_frame(reloaded, x), want)

    def test_enhancer_requires_matching_base(self, tmp_path):
        base = pretrain(SMALL, tiny_corpus())
        other = small_model(seed=99)
        clean = tiny_corpus(16, seed=12)
        enh = finetune_encoder(base, (clean, clean), SMALL)
        save_model(enh, tmp_path / "enh.tle")
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "enh.tle", base=other)
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "enh.tle")  # nothing to scan
