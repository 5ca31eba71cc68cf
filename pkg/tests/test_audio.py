import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from throatline.audio import (
    Frame,
    FormatError,
    RingBuffer,
    SampleBuffer,
    UnsupportedFormatError,
    frame_split,
    resample,
    wav_read,
    wav_write,
)


def sine(freq, seconds, rate=24000, amp=1.0):
    t = np.arange(int(seconds * rate)) / rate
    return SampleBuffer((amp * np.sin(2 * np.pi * freq * t)).astype(np.float32), rate)


class TestSampleBuffer:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            SampleBuffer(np.array([0.0, np.nan]), 24000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            SampleBuffer(np.zeros(4), 0)

    def test_coerces_to_float32(self):
        b = SampleBuffer(np.arange(4, dtype=np.float64), 8000)
        assert b.samples.dtype == np.float32
        assert b.duration_s == pytest.approx(0.0005)


class TestWavIO:
    def test_silence_identity(self, tmp_path):
        path = tmp_path / "z.wav"
        wav_write(SampleBuffer(np.zeros(24000, np.float32), 24000), path, "pcm16")
        b = wav_read(path)
        assert b.sample_rate == 24000
        assert len(b) == 24000
        assert not b.samples.any()

    def test_pcm16_scaling_is_exact(self, tmp_path):
        # raw int16 value 16384 must decode to exactly 0.5
        import struct

        payload = struct.pack("<h", 16384)
        fmt = struct.pack("<HHIIHH", 1, 1, 24000, 48000, 2, 16)
        body = b"WAVEfmt " + struct.pack("<I", len(fmt)) + fmt
        body += b"data" + struct.pack("<I", len(payload)) + payload
        path = tmp_path / "half.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        b = wav_read(path)
        assert b.samples[0] == 0.5

    def test_stereo_mean_downmix(self, tmp_path):
        import struct

        left, right = 0.2, 0.4
        payload = struct.pack("<2f", left, right)
        fmt = struct.pack("<HHIIHH", 3, 2, 24000, 192000, 8, 32)
        body = b"WAVEfmt " + struct.pack("<I", len(fmt)) + fmt
        body += b"data" + struct.pack("<I", len(payload)) + payload
        path = tmp_path / "st.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        b = wav_read(path)
        assert len(b) == 1
        assert b.samples[0] == pytest.approx(0.3, abs=1e-7)

    def test_float32_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(7)
        b = SampleBuffer(rng.uniform(-1, 1, 4800).astype(np.float32), 24000)
        path = tmp_path / "f.wav"
        wav_write(b, path, "float32")
        back = wav_read(path)
        assert back.sample_rate == 24000
        assert np.array_equal(back.samples, b.samples)

    def test_pcm16_roundtrip_within_half_lsb(self, tmp_path):
        rng = np.random.default_rng(8)
        b = SampleBuffer(rng.uniform(-0.99, 0.99, 4800).astype(np.float32), 24000)
        path = tmp_path / "p.wav"
        wav_write(b, path, "pcm16")
        back = wav_read(path)
        assert np.max(np.abs(back.samples - b.samples)) <= 1.0 / 32768

    def test_pcm16_clamps_overrange(self, tmp_path):
        b = SampleBuffer(np.array([1.5, -2.0], np.float32), 24000)
        path = tmp_path / "c.wav"
        wav_write(b, path, "pcm16")
        back = wav_read(path)
        assert back.samples[0] == pytest.approx(1.0 - 1.0 / 32768)
        assert back.samples[1] == pytest.approx(-1.0)

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"OGGS" + b"\x00" * 64)
        with pytest.raises(FormatError):
            wav_read(path)

    def test_unsupported_encoding_rejected(self, tmp_path):
        import struct

        fmt = struct.pack("<HHIIHH", 1, 1, 24000, 72000, 3, 24)  # 24-bit PCM
        body = b"WAVEfmt " + struct.pack("<I", len(fmt)) + fmt
        body += b"data" + struct.pack("<I", 3) + b"\x00\x00\x00"
        path = tmp_path / "u.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedFormatError):
            wav_read(path)


class TestResample:
    def test_dc_preserved(self):
        b = SampleBuffer(np.ones(24000, np.float32), 24000)
        r = resample(b, 10000)
        assert len(r) == 10000
        assert np.max(np.abs(r.samples - 1.0)) < 1e-3

    def test_identity_when_rates_match(self):
        b = sine(440, 0.1)
        assert resample(b, 24000) is b

    def test_sine_amplitude_within_one_percent(self):
        # oracle: least-squares fit of the ideal 1 kHz quadrature pair
        b = sine(1000, 1.0)
        r = resample(b, 10000)
        t = np.arange(len(r)) / 10000
        basis = np.stack([np.sin(2 * np.pi * 1000 * t), np.cos(2 * np.pi * 1000 * t)], axis=1)
        coef, *_ = np.linalg.lstsq(basis[200:-200], r.samples[200:-200].astype(np.float64), rcond=None)
        assert np.hypot(*coef) == pytest.approx(1.0, abs=0.01)

    def test_roundtrip_snr_on_bandlimited_content(self):
        rng = np.random.default_rng(0)
        n = 48000
        spec = np.fft.rfft(rng.standard_normal(n))
        spec[np.fft.rfftfreq(n, 1 / 24000) > 4000] = 0  # below 0.4 * min(rate)
        x = np.fft.irfft(spec, n)
        x /= np.abs(x).max() * 1.2
        b = SampleBuffer(x.astype(np.float32), 24000)
        rt = resample(resample(b, 10000), 24000)
        m = min(len(rt), len(b))
        ref = b.samples[500 : m - 500].astype(np.float64)
        err = rt.samples[500 : m - 500].astype(np.float64) - ref
        snr = 10 * np.log10(np.sum(ref**2) / np.sum(err**2))
        assert snr >= 40.0


class TestFrameSplit:
    def test_drops_trailing_remainder(self):
        b = SampleBuffer(np.zeros(4000, np.float32), 24000)
        frames, dropped = frame_split(b, 1920)
        assert len(frames) == 2
        assert dropped == 160
        assert [f.index for f in frames] == [0, 1]

    def test_exact_single_frame(self):
        b = SampleBuffer(np.arange(1920, dtype=np.float32) / 2000, 24000)
        frames, dropped = frame_split(b, 1920)
        assert len(frames) == 1 and dropped == 0
        assert frames[0].index == 0
        assert frames[0].frame_len == 1920

    def test_empty_input(self):
        frames, dropped = frame_split(SampleBuffer(np.zeros(0, np.float32), 24000), 1920)
        assert frames == [] and dropped == 0

    def test_concat_reproduces_prefix(self):
        rng = np.random.default_rng(3)
        b = SampleBuffer(rng.uniform(-1, 1, 5000).astype(np.float32), 24000)
        frames, dropped = frame_split(b, 640)
        rebuilt = np.concatenate([f.samples for f in frames])
        assert np.array_equal(rebuilt, b.samples[: len(b) - dropped])

    def test_negative_index_rejected(self):
        with pytest.raises(ValueError):
            Frame(np.zeros(4, np.float32), -1)


class TestRingBuffer:
    def test_fifo(self):
        rb = RingBuffer(8)
        assert rb.push(np.array([1, 2, 3], np.float32)) == 3
        out = rb.pull(3)
        assert np.array_equal(out, [1, 2, 3])
        assert rb.underruns == 0

    def test_underrun_zero_fill(self):
        rb = RingBuffer(8)
        out = rb.pull(2)
        assert np.array_equal(out, [0, 0])
        assert rb.underruns == 2

    def test_overflow_rejected(self):
        rb = RingBuffer(4)
        accepted = rb.push(np.arange(6, dtype=np.float32))
        assert accepted == 4
        assert rb.overruns == 2
        assert np.array_equal(rb.pull(4), [0, 1, 2, 3])

    def test_capacity_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            RingBuffer(6)

    def test_wraparound_preserves_order(self):
        rb = RingBuffer(8)
        rb.push(np.arange(6, dtype=np.float32))
        rb.pull(5)
        rb.push(np.arange(6, 12, dtype=np.float32))
        assert np.array_equal(rb.pull(7), [5, 6, 7, 8, 9, 10, 11])

    def test_pull_into_preallocated(self):
        rb = RingBuffer(16)
        rb.push(np.arange(5, dtype=np.float32))
        out = np.empty(5, np.float32)
        got = rb.pull(5, out=out)
        assert got is out
        assert np.array_equal(out, np.arange(5))

    @settings(max_examples=60, deadline=None)
    @given(
        ops=st.lists(
            st.tuples(st.sampled_from(["push", "pull"]), st.integers(0, 20)),
            min_size=1,
            max_size=60,
        )
    )
    def test_conservation_under_interleaving(self, ops):
        # pulled stream == pushed stream with zeros injected exactly where
        # counters say samples were fabricated, and overflow exactly dropped
        rb = RingBuffer(32)
        pushed, pulled = [], []
        seq = 0
        for op, n in ops:
            if op == "push":
                chunk = np.arange(seq, seq + n, dtype=np.float32)
                seq += n
                before = rb.overruns
                accepted = rb.push(chunk)
                assert accepted + (rb.overruns - before) == n
                pushed.append(chunk[:accepted])
            else:
                before = rb.underruns
                out = rb.pull(n)
                short = rb.underruns - before
                assert short <= n
                if short:
                    assert not out[n - short :].any()
                pulled.append(out[: n - short])
        pulled.append(rb.pull(rb.available()))
        assert np.array_equal(np.concatenate(pushed or [np.zeros(0)]),
                              np.concatenate(pulled or [np.zeros(0)]))


class TestRingBufferConcurrent:
    def test_two_thread_stream_integrity(self):
        # one producer thread, one consumer thread, no locks: the consumed
        # stream must be a prefix-exact copy of the produced stream
        import threading

        rb = RingBuffer(1 << 12)
        total = 200_000
        produced = np.arange(total, dtype=np.float32) / total
        consumed = np.empty(total, dtype=np.float32)
        done = threading.Event()

        def producer():
            pos = 0
            while pos < total:
                pos += rb.push(produced[pos : pos + 331])
            done.set()

        def consumer():
            pos = 0
            out = np.empty(331, dtype=np.float32)
            while pos < total:
                avail = min(rb.available(), 331, total - pos)
                if avail == 0:
                    if done.is_set() and rb.available() == 0 and pos >= total:
                        break
                    continue
                got = rb.pull(avail, out=out)
                consumed[pos : pos + avail] = got[:avail]
                pos += avail

        threads = [threading.Thread(target=producer), threading.Thread(target=consumer)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
        assert rb.underruns == 0  # consumer only pulled what was available
        assert np.array_equal(consumed, produced)
