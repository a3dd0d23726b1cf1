import json
import subprocess
import sys

import pytest

from qpc.cli import main

from conftest import CONFIGS


def run(*argv):
    return main([str(a) for a in argv])


def bad_config(tmp_path, old, new):
    text = (CONFIGS / "sim1_printed.toml").read_text(encoding="utf-8")
    assert old in text
    path = tmp_path / "bad.toml"
    path.write_text(text.replace(old, new), encoding="utf-8")
    return path


def test_validate_ok(capsys):
    assert run("validate", "--config", CONFIGS / "sim1.toml") == 0
    assert "ok" in capsys.readouterr().out.lower()


def test_validate_touching_slits(tmp_path, capsys):
    # centres 2 beta apart: zero clearance is not allowed
    path = bad_config(tmp_path, '"-2960.6 nm"', '"-5638.9 nm"')
    assert run("validate", "--config", path) == 1
    assert "plane 1" in capsys.readouterr().out


def test_validate_bad_unit(tmp_path):
    assert run("validate", "--config", bad_config(tmp_path, '"196.5 nm"', '"196.5 furlong"')) == 2


def test_missing_file():
    assert run("validate", "--config", "/nonexistent/x.toml") == 2


def test_simulate_writes_rows_and_manifest(tmp_path):
    assert run("simulate", "--config", CONFIGS / "sim1.toml", "--k-max", 40, "--out", tmp_path) == 0
    lines = (tmp_path / "intensity.csv").read_text().splitlines()
    assert lines[0] == "k,x_meters,raw,normalized,rescaled" and len(lines) == 42
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["precision_digits"] == 64 and "intensity.csv" in man["outputs"]
    assert len(man["config_sha256"]) == 64


def test_simulate_single_sample(tmp_path):
    assert run("simulate", "--config", CONFIGS / "sim1.toml", "--k-min", 7, "--k-max", 7, "--out", tmp_path) == 0
    assert len((tmp_path / "intensity.csv").read_text().splitlines()) == 2


def test_simulate_empty_range(tmp_path):
    assert run("simulate", "--config", CONFIGS / "sim1.toml", "--k-min", 9, "--k-max", 3, "--out", tmp_path) == 1


def test_simulate_path_cap(tmp_path):
    argv = ("simulate", "--config", CONFIGS / "sim1.toml", "--k-max", 3, "--exotic", 2, "--path-cap", 1000)
    assert run(*argv, "--out", tmp_path) == 3


def test_simulate_is_reproducible(tmp_path):
    outs = []
    for name, workers in (("a", 1), ("b", 2)):
        argv = ("simulate", "--config", CONFIGS / "sim1.toml", "--k-max", 30, "--noise-snr", 5, "--seed", 11,
                "--workers", workers, "--out", tmp_path / name)
        assert run(*argv) == 0
        outs.append([(tmp_path / name / f).read_bytes() for f in ("intensity.csv", "intensity_noisy.csv")])
    assert outs[0] == outs[1]


def test_precision_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("QPC_PRECISION_DIGITS", "40")
    assert run("simulate", "--config", CONFIGS / "sim1.toml", "--k-max", 2, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["precision_digits"] == 40


def test_analyze_sim1(tmp_path):
    assert run("simulate", "--config", CONFIGS / "sim1.toml", "--out", tmp_path) == 0
    argv = ("analyze", "--intensity", tmp_path / "intensity.csv", "--m-max", 400, "--config", CONFIGS / "sim1.toml",
            "--k-tilde", 173, "--out", tmp_path)
    assert run(*argv) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["top_candidate"] == 173
    assert report["hypothesis"]["lattice_ok"] and report["theorem1"]["conclusion_asserted"]
    assert (tmp_path / "r_curve.csv").read_text().startswith("M,R,degenerate")


def test_analyze_flat_input(tmp_path):
    rows = ["k,x_meters,raw,normalized,rescaled"] + [f"{k},{k}e-6,1,1,1" for k in range(60)]
    (tmp_path / "flat.csv").write_text("\n".join(rows) + "\n")
    assert run("analyze", "--intensity", tmp_path / "flat.csv", "--m-max", 50, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["degenerate"] and report["top_candidate"] is None


def test_sda_from_b_file(tmp_path):
    (tmp_path / "b.txt").write_text("# n, b\n0, 0.25\n1, 0.5\n2, -0.75\n")
    assert run("sda", "--b-file", tmp_path / "b.txt", "--k-pre", 12, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "sda.json").read_text())
    assert doc["best_M"] == 4 and doc["best_eps_mean"] == 0


def test_sda_from_config(tmp_path):
    assert run("sda", "--config", CONFIGS / "sim1.toml", "--k-pre", 500, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "sda.json").read_text())
    assert doc["best_M"] == 173 and doc["paths"] == 25


def test_crb(tmp_path):
    argv = ("crb", "--config", CONFIGS / "sim1.toml", "--k-tilde", 173, "--snr", 0, 10, "--m-max", 40, "--out", tmp_path)
    assert run(*argv) == 0
    rows = (tmp_path / "crb_curve.csv").read_text().splitlines()[1:]
    by_snr = {}
    for row in rows:
        snr, M, value = row.split(",")[:3]
        by_snr.setdefault(float(snr), []).append(float(value))
    for a, b in zip(by_snr[0.0], by_snr[10.0]):
        assert b == pytest.approx(a / 10, rel=1e-12)


def test_crb_rejects_wrong_period(tmp_path):
    argv = ("crb", "--config", CONFIGS / "sim1.toml", "--k-tilde", 172, "--m-max", 20, "--out", tmp_path)
    assert run(*argv) == 1


def test_oracle_check(tmp_path):
    argv = ("oracle-check", "--config", CONFIGS / "sim1.toml", "--paths", 2, "--points", 3, "--out", tmp_path)
    assert run(*argv) == 0
    doc = json.loads((tmp_path / "oracle_check.json").read_text())
    assert doc["agree"] and len(doc["points"]) == 6


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "qpc.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("qpc ")
