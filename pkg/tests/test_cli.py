import json

import numpy as np
import pytest

from throatline.audio import wav_read, wav_write
from throatline.cli import cli_dispatch
from throatline.synth import speech_like


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    corpus.mkdir()
    for i in range(3):
        wav_write(speech_like(1.0, seed=60 + i), corpus / f"u{i}.wav", "float32")
    return root


class TestSimulate:
    def test_writes_manifest(self, workspace, capsys):
        code = cli_dispatch([
            "simulate", "--in", str(workspace / "corpus"), "--out", str(workspace / "pairs"),
            "--seed", "3", "--cutoff-hz", "1200", "--noise-snr-db", "25",
        ])
        assert code == 0
        manifest = workspace / "pairs" / "manifest.csv"
        assert manifest.exists()
        assert len(manifest.read_text().splitlines()) == 4  # header + 3 rows
        assert str(manifest) in capsys.readouterr().out

    def test_synth_seconds_bootstraps_corpus(self, tmp_path):
        code = cli_dispatch([
            "simulate", "--in", str(tmp_path / "synth"), "--out", str(tmp_path / "pairs"),
            "--synth-seconds", "4",
        ])
        assert code == 0
        assert len(list((tmp_path / "synth").glob("*.wav"))) >= 2

    def test_missing_corpus_is_runtime_error(self, tmp_path):
        code = cli_dispatch([
            "simulate", "--in", str(tmp_path / "nothing"), "--out", str(tmp_path / "pairs"),
        ])
        assert code == 2


class TestUsageErrors:
    def test_unknown_subcommand(self):
        assert cli_dispatch(["frobnicate"]) == 1

    def test_unknown_flag(self):
        assert cli_dispatch(["simulate", "--wat", "1"]) == 1


class TestEnhanceBypass:
    def test_bypass_output_equals_frame_trimmed_input(self, workspace):
        src = workspace / "corpus" / "u0.wav"
        out = workspace / "bypass.wav"
        assert cli_dispatch(["enhance", "--in", str(src), "--out", str(out), "--bypass"]) == 0
        a = wav_read(src)
        b = wav_read(out)
        n = len(a) // 1920 * 1920
        assert len(b) == n
        assert np.array_equal(b.samples, a.samples[:n])


class TestTrainingAndEval:
    def test_full_pipeline_exits_zero(self, workspace):
        cfg = workspace / "codec.json"
        cfg.write_text(json.dumps({
            "hidden_dim": 32, "embed_dim": 8, "num_quantizers": 2,
            "codebook_size": 16, "epochs": 4, "batch_size": 16,
        }))
        model = workspace / "base.tlc"
        enhancer = workspace / "enh.tle"
        report = workspace / "report" / "r.csv"
        assert cli_dispatch([
            "train-pretrain", "--in", str(workspace / "corpus"), "--out", str(model),
            "--config", str(cfg), "--seed", "5",
        ]) == 0
        assert model.exists()
        assert model.with_suffix(".loss.png").exists()
        assert cli_dispatch([
            "train-finetune", "--model", str(model), "--pairs",
            str(workspace / "pairs" / "manifest.csv"), "--out", str(enhancer),
            "--config", str(cfg), "--seed", "6",
        ]) == 0
        assert enhancer.exists()
        assert cli_dispatch([
            "eval", "--pairs", str(workspace / "pairs" / "manifest.csv"),
            "--report", str(report), "--model", str(enhancer),
        ]) == 0
        header = report.read_text().splitlines()[0]
        assert header == ("file,si_sdr_degraded,stoi_degraded,lsd_degraded,"
                          "si_sdr_enhanced,stoi_enhanced,lsd_enhanced")
        assert report.with_suffix(".txt").exists()
        assert report.with_name("r_summary.png").exists()
        assert report.with_name("r_spectrograms.png").exists()

    def test_enhance_with_model_roundtrip(self, workspace):
        out = workspace / "enhanced.wav"
        assert cli_dispatch([
            "enhance", "--model", str(workspace / "enh.tle"),
            "--in", str(workspace / "corpus" / "u1.wav"), "--out", str(out),
        ]) == 0
        assert wav_read(out).sample_rate == 24000


class TestLive:
    def test_missing_sounddevice_is_runtime_error(self):
        # this environment has no sounddevice; live must fail cleanly
        assert cli_dispatch(["live"]) == 2
