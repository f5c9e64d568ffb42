import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from diffenh import cli, signal

GOLDEN = Path(__file__).parent / "golden"

HELP_CASES = [
    ("help_root.txt", ["--help"]),
    ("help_train.txt", ["train", "--help"]),
    ("help_enhance.txt", ["enhance", "--help"]),
    ("help_sample.txt", ["sample", "--help"]),
    ("help_validate_sde.txt", ["validate-sde", "--help"]),
    ("help_benchmark.txt", ["benchmark", "--help"]),
]


@pytest.mark.parametrize("golden,argv", HELP_CASES, ids=[c[0] for c in HELP_CASES])
def test_help_matches_golden(golden, argv, capsys):
    assert cli.main(argv) == cli.EXIT_OK
    assert capsys.readouterr().out == (GOLDEN / golden).read_text()


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "diffenh.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert proc.stdout == (GOLDEN / "help_root.txt").read_text()


def test_no_command_is_usage_error(capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert "a command is required" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert cli.main(["validate-sde", "--no-such-flag"]) == cli.EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_validate_sde_pass_and_fail(capsys):
    assert cli.main(["validate-sde"]) == cli.EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["validate-sde", "--g-leading", "sigma_max"]) == cli.EXIT_VALIDATION
    assert "FAIL" in capsys.readouterr().out


def test_missing_checkpoint_is_io_error(tmp_path, capsys):
    rc = cli.main(
        ["sample", "--ckpt", str(tmp_path / "nope.bin"), "--output", str(tmp_path / "o.wav")]
    )
    assert rc == cli.EXIT_IO
    assert "error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def tiny_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "tiny.bin"
    rc = cli.main(
        [
            "train", "--synthetic", "gaussian", "--out", str(path),
            "--items", "2", "--bins", "8", "--frames", "16", "--patch-frames", "8",
            "--hidden", "8", "--epochs", "1", "--steps-per-epoch", "2", "--seed", "0",
        ]
    )
    assert rc == cli.EXIT_OK
    assert path.exists()
    return path


def test_train_writes_checkpoint(tiny_ckpt, capsys):
    # fixture already ran the command; a fresh run must be deterministic
    other = tiny_ckpt.parent / "again.bin"
    rc = cli.main(
        [
            "train", "--synthetic", "gaussian", "--out", str(other),
            "--items", "2", "--bins", "8", "--frames", "16", "--patch-frames", "8",
            "--hidden", "8", "--epochs", "1", "--steps-per-epoch", "2", "--seed", "0",
        ]
    )
    assert rc == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "# seed=0" in out
    assert "epoch 1: loss" in out
    assert other.read_bytes() == tiny_ckpt.read_bytes()


def test_train_without_data_source_is_usage_error(tmp_path, capsys):
    rc = cli.main(["train", "--out", str(tmp_path / "x.bin")])
    assert rc == cli.EXIT_USAGE
    assert "needs --data DIR or --synthetic" in capsys.readouterr().err


def _write_noisy(tmp_path, n=2000, rate=16000, seed=3):
    rng = np.random.default_rng(seed)
    clean = signal.Waveform(0.3 * np.sin(2 * np.pi * 440 * np.arange(n) / rate), rate)
    noisy, _ = signal.mix_at_snr(
        clean, signal.Waveform(rng.standard_normal(n), rate), 5.0, seed=seed
    )
    peak = np.max(np.abs(noisy.samples))
    noisy = signal.Waveform(noisy.samples / (2 * peak), rate)
    clean = signal.Waveform(clean.samples / (2 * peak), rate)
    noisy_path, clean_path = tmp_path / "noisy.wav", tmp_path / "clean.wav"
    signal.save_wav(noisy_path, noisy)
    signal.save_wav(clean_path, clean)
    return noisy_path, clean_path


FAST_ENHANCE = [
    "--em-iters", "1", "--reverse-steps", "4", "--batch", "1",
    "--window-len", "64", "--hop", "16",
]


def test_enhance_with_metrics_and_report(tiny_ckpt, tmp_path, capsys):
    noisy_path, clean_path = _write_noisy(tmp_path)
    out_path = tmp_path / "enhanced.wav"
    rep_path = tmp_path / "report.json"
    rc = cli.main(
        [
            "enhance", "--input", str(noisy_path), "--ckpt", str(tiny_ckpt),
            "--output", str(out_path), "--clean", str(clean_path),
            "--report", str(rep_path), "--seed", "1", *FAST_ENHANCE,
        ]
    )
    assert rc == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "# seed=1" in out
    assert "si_sdr_db=" in out and "delta_db=" in out
    assert out_path.exists()
    enhanced = signal.load_wav(out_path)
    assert len(enhanced) == len(signal.load_wav(noisy_path))
    payload = json.loads(rep_path.read_text())
    assert set(payload) == {"si_sdr_db", "input_si_sdr_db", "delta_db"}


def test_enhance_rejects_wrong_sample_rate(tiny_ckpt, tmp_path, capsys):
    wav = signal.Waveform(np.zeros(1000) + 0.1, 8000)
    path = tmp_path / "slow.wav"
    signal.save_wav(path, wav)
    rc = cli.main(
        ["enhance", "--input", str(path), "--ckpt", str(tiny_ckpt),
         "--output", str(tmp_path / "o.wav"), *FAST_ENHANCE]
    )
    assert rc == cli.EXIT_IO
    assert "16 kHz" in capsys.readouterr().err


def test_enhance_schedule_mismatch(tiny_ckpt, tmp_path, capsys):
    noisy_path, _ = _write_noisy(tmp_path)
    args = [
        "enhance", "--input", str(noisy_path), "--ckpt", str(tiny_ckpt),
        "--output", str(tmp_path / "o.wav"), "--gamma", "9.0", *FAST_ENHANCE,
    ]
    assert cli.main(args) == cli.EXIT_USAGE
    assert "schedule mismatch" in capsys.readouterr().err
    assert cli.main(args + ["--force"]) == cli.EXIT_OK


def test_sample_writes_wav_and_dump(tiny_ckpt, tmp_path, capsys):
    wav_path = tmp_path / "sample.wav"
    dump_path = tmp_path / "sample.spec"
    rc = cli.main(
        [
            "sample", "--ckpt", str(tiny_ckpt), "--output", str(wav_path),
            "--dump-spec", str(dump_path), "--frames", "8",
            "--reverse-steps", "4", "--window-len", "64", "--hop", "16",
        ]
    )
    assert rc == cli.EXIT_OK
    spec = signal.load_spectrogram(dump_path)
    assert spec.shape == (33, 8)
    assert len(signal.load_wav(wav_path)) == 7 * 16
    capsys.readouterr()


def test_sample_requires_some_output(tiny_ckpt, capsys):
    assert cli.main(["sample", "--ckpt", str(tiny_ckpt)]) == cli.EXIT_USAGE
    assert "--output and/or --dump-spec" in capsys.readouterr().err


def test_config_file_merge_explicit_flags_win(tiny_ckpt, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\n\nframes = 8\nreverse_steps = 4\nseed = 7\nwindow_len = 64\nhop = 16\n")
    dump = tmp_path / "a.spec"
    rc = cli.main(
        ["sample", "--config", str(cfg), "--ckpt", str(tiny_ckpt),
         "--dump-spec", str(dump), "--seed", "9"]
    )
    assert rc == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "# seed=9" in out  # explicit flag beats the config value
    assert signal.load_spectrogram(dump).shape == (33, 8)


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("frames 8\n")
    assert cli.main(["validate-sde", "--config", str(bad)]) == cli.EXIT_USAGE
    assert "expected key=value" in capsys.readouterr().err
    assert cli.main(["validate-sde", "--config", str(tmp_path / "gone.cfg")]) == cli.EXIT_IO
    capsys.readouterr()


def test_benchmark_synthetic_deterministic(tiny_ckpt, tmp_path, capsys):
    rep_a, rep_b = tmp_path / "a.json", tmp_path / "b.json"
    args = [
        "benchmark", "--ckpt", str(tiny_ckpt), "--synthetic",
        "--utterances", "1", "--frames", "16", "--snrs", "0",
        "--seed", "4", *FAST_ENHANCE,
    ]
    assert cli.main(args + ["--report", str(rep_a)]) == cli.EXIT_OK
    assert cli.main(args + ["--report", str(rep_b), "--jobs", "2"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "aggregate over 1:" in out
    a, b = json.loads(rep_a.read_text()), json.loads(rep_b.read_text())
    assert a == b  # thread count must not change results
    assert a["aggregate"]["count"] == 1
    assert a["files"][0]["file"] == "synthetic-000@+0dB"


def test_benchmark_requires_source(tiny_ckpt, capsys):
    assert cli.main(["benchmark", "--ckpt", str(tiny_ckpt)]) == cli.EXIT_USAGE
    assert "--synthetic or both" in capsys.readouterr().err


def test_benchmark_wav_dirs(tiny_ckpt, tmp_path, capsys):
    clean_dir, noise_dir = tmp_path / "clean", tmp_path / "noise"
    clean_dir.mkdir()
    noise_dir.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        signal.save_wav(
            clean_dir / f"c{i}.wav",
            signal.Waveform(0.2 * np.sin(2 * np.pi * (300 + 100 * i) * np.arange(1600) / 16000), 16000),
        )
    signal.save_wav(noise_dir / "n0.wav", signal.Waveform(0.2 * rng.standard_normal(1600), 16000))
    rc = cli.main(
        [
            "benchmark", "--ckpt", str(tiny_ckpt), "--clean-dir", str(clean_dir),
            "--noise-dir", str(noise_dir), "--snrs", "0,5", *FAST_ENHANCE,
        ]
    )
    assert rc == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "aggregate over 4:" in out
    assert "c0.wav@+0dB" in out and "c1.wav@+5dB" in out
