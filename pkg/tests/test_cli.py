import csv
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from cramer_attack import cli
from cramer_attack.audio import Waveform, read_wav, write_wav
from cramer_attack.metrics import REPORT_COLUMNS
from cramer_attack.victim.model import init_model
from cramer_attack.victim.vocab import Vocabulary

TINY = {
    "seed": 5,
    "output_dir": "out",
    "corpus": {"num_utterances": 10},
    "train": {"epochs": 3},
    "samples": {"split": "all", "count": 5},
    "attack": {"max_outer_iters": 3, "max_inner_iters": 3},
    "playback": {"max_rounds": 2},
}


def _write_cfg(path, **over):
    cfg = json.loads(json.dumps(TINY))
    cfg.update(over)
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = _write_cfg(d / "cfg.json")
    assert run("train", "--config", cfg) == 0
    assert run("attack", "--config", cfg) == 0
    return d, cfg


def test_train_outputs(trained):
    d, _ = trained
    log = (d / "out" / "train_log.txt").read_text().splitlines()
    epochs = [re.fullmatch(r"epoch=(\d+) loss=(\S+)", line) for line in log[:-1]]
    assert all(epochs) and [int(m.group(1)) for m in epochs] == [0, 1, 2]
    assert all(np.isfinite(float(m.group(2))) for m in epochs)
    assert log[-1].startswith("heldout_wer=")
    assert (d / "out" / "victim.bin").is_file()


def test_train_checkpoint_byte_identical(trained, tmp_path):
    d, cfg = trained
    assert run("train", "--config", cfg, "--output-dir", str(tmp_path / "again")) == 0
    assert (tmp_path / "again" / "victim.bin").read_bytes() == (d / "out" / "victim.bin").read_bytes()


def test_train_missing_corpus(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "c.json", corpus={"source": "manifest", "path": "nowhere/manifest.tsv"})
    assert run("train", "--config", cfg) != 0
    assert "nowhere/manifest.tsv" in capsys.readouterr().err


def test_attack_cardinality_and_manifest(trained):
    d, _ = trained
    adir = d / "out" / "attacks"
    records = sorted(adir.glob("*/*.json"))
    wavs = sorted(adir.glob("*/*.wav"))
    assert len(records) == 20 and len(wavs) == 20
    manifest = json.loads((adir / "manifest.json").read_text())
    produced = {str(p.relative_to(adir)) for p in records + wavs}
    assert set(manifest["files"]) == produced
    assert manifest["tool_version"] == cli.__version__
    assert "timings_s" not in manifest
    saved = json.loads((d / "out" / "config.json").read_text())
    assert manifest["config_hash"] == cli.config_hash(saved)
    rec = json.loads(records[0].read_text())
    assert rec["success"] in ("hit_target", "changed_but_missed", "failed")
    assert read_wav(adir / rec["wav"]).samples.size > 0


def test_attack_resume_skips_completed(trained):
    d, cfg = trained
    adir = d / "out" / "attacks"
    stamps = {p: p.stat().st_mtime_ns for p in adir.glob("*/*.json")}
    victim = sorted(stamps)[3]
    before = victim.read_text()
    victim.unlink()
    assert run("attack", "--config", cfg) == 0
    assert victim.read_text() == before
    for p, t in stamps.items():
        if p != victim:
            assert p.stat().st_mtime_ns == t


def test_attack_error_exit_code(trained, tmp_path):
    d, _ = trained
    cfg = _write_cfg(tmp_path / "c.json", targets=["a" * 400], modes=["cw"],
                     checkpoint=str(d / "out" / "victim.bin"))
    assert run("attack", "--config", cfg) == 1
    rec = json.loads(next((tmp_path / "out" / "attacks" / "cw").glob("*.json")).read_text())
    assert "InfeasibleAlignmentError" in rec["error"]


def test_attack_requires_checkpoint(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "c.json")
    assert run("attack", "--config", cfg) == 2
    assert "victim.bin" in capsys.readouterr().err


def test_attack_vocabulary_mismatch(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "c.json")
    (tmp_path / "out").mkdir()
    init_model(0, vocabulary=Vocabulary(("<b>", "a", "b"))).save(tmp_path / "out" / "victim.bin")
    assert run("attack", "--config", cfg) == 2
    assert "vocabulary" in capsys.readouterr().err


def test_evaluate_report_roundtrip(trained):
    d, cfg = trained
    assert run("evaluate", "--config", cfg) == 0
    rdir = d / "out" / "report"
    report = json.loads((rdir / "report.json").read_text())
    with open(rdir / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[: len(REPORT_COLUMNS)] == list(REPORT_COLUMNS)
    assert [r["mode"] for r in rows] == ["cramer", "cw"]
    for row in rows:
        agg = report[row["mode"]]["aggregate"]
        for k, v in row.items():
            want = agg[k]
            assert (v == want) if isinstance(want, str) else float(v) == float(want), k
    with open(rdir / "per_sample.csv", newline="") as fh:
        samples = list(csv.DictReader(fh))
    flat = [r for mode in report.values() for r in mode["records"]]
    assert len(samples) == len(flat) == 20
    for row, want in zip(samples, flat):
        for k, v in row.items():
            w = want[k]
            if isinstance(w, bool):
                assert v == str(w)
            elif isinstance(w, (int, float)):
                assert float(v) == float(w) or (np.isnan(float(v)) and np.isnan(w))
            else:
                assert v == w


def test_evaluate_without_attacks(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "c.json")
    assert run("evaluate", "--config", cfg) == 2
    assert "manifest.json" in capsys.readouterr().err


def test_evaluate_detects_modified_output(trained, tmp_path):
    import shutil

    d, _ = trained
    shutil.copytree(d / "out", tmp_path / "out")
    cfg = _write_cfg(tmp_path / "c.json")
    wav = next((tmp_path / "out" / "attacks" / "cw").glob("*.wav"))
    w = read_wav(wav)
    write_wav(wav, w.with_samples(w.samples * 0.5))
    assert run("evaluate", "--config", cfg) == 2


def test_config_precedence(tmp_path):
    path = _write_cfg(tmp_path / "c.json", seed=1)
    cfg = cli.load_config(path, [("seed", 2), ("attack.outer_step", 1e-3)])
    assert cfg["seed"] == 2 and cfg["attack"]["outer_step"] == 1e-3
    assert cfg["attack"]["max_outer_iters"] == 3
    with pytest.raises(cli.UsageError):
        cli.load_config(path, [("attack.nope", 1)])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sedd": 1}))
    with pytest.raises(cli.UsageError):
        cli.load_config(bad)


def test_set_flag_and_env_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    args = cli.build_parser().parse_args(["train", "--set", "train.epochs=7", "--set", "output_dir=\"x\""])
    cfg = cli.load_config(None, cli._overrides(args))
    assert cfg["train"]["epochs"] == 7
    assert cli.output_dir(cfg) == tmp_path / "root" / "x"


def test_derived_seeds_order_independent():
    seeds = {(i, k): cli.derived_seed(11, i, k) for i in range(20) for k in range(3)}
    assert len(set(seeds.values())) == len(seeds)
    assert cli.derived_seed(11, 4, 1) == seeds[(4, 1)]
    assert cli.derived_seed(12, 4, 1) != seeds[(4, 1)]


@pytest.fixture
def tone(tmp_path):
    t = np.arange(16000) / 16000.0
    path = tmp_path / "in.wav"
    write_wav(path, Waveform(0.3 * np.sin(2 * np.pi * 440 * t)))
    return path


def test_playback_identity(tone, tmp_path):
    out = tmp_path / "o.wav"
    assert run("playback", str(tone), str(out), "--rir", "unit") == 0
    np.testing.assert_array_equal(read_wav(out).samples, read_wav(tone).samples)


def test_playback_bad_descriptor(tone, tmp_path, capsys):
    assert run("playback", str(tone), str(tmp_path / "o.wav"), "--rir", "room:big") == 2
    assert "exp:rt60=" in capsys.readouterr().err
    assert not (tmp_path / "o.wav").exists()


def test_playback_seed_changes_noise_not_level(tone, tmp_path):
    x = read_wav(tone).samples
    noise = []
    for seed in (1, 2):
        out = tmp_path / f"o{seed}.wav"
        assert run("playback", str(tone), str(out), "--snr", "30", "--seed", str(seed)) == 0
        noise.append(read_wav(out).samples - x)
    assert not np.array_equal(noise[0], noise[1])
    want = np.sqrt(np.mean(x**2)) * 10 ** (-30 / 20)
    for n in noise:
        assert np.sqrt(np.mean(n**2)) == pytest.approx(want, rel=0.05)


def test_metrics_command(tone, capsys):
    assert run("metrics", str(tone), str(tone)) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["stoi"] >= 0.99 and res["llr"] <= 0.0 and res["cramer2"] == 0.0
    assert res["distortion_db"] == -np.inf


def test_entry_point_subprocess(tone, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cramer_attack.cli", "metrics", str(tone), str(tone)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "seg_snr_db" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "cramer_attack.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
