"""Config round-trips, archive integrity, and the command-line surface:
exit codes, file formats, worker-count invariance, and replays."""

import contextlib
import io
import json
import math
import os
from pathlib import Path

import pytest

from heavypoints import cli
from heavypoints.archive import (
    ArchiveWriter,
    RunArchive,
    csv_cell,
    seed_report_name,
)
from heavypoints.config import ConfigError, ExperimentConfig, parse_config
from heavypoints.errors import OutOfDomain  # noqa: F401  (re-export sanity)


def run_cli(argv, env=None):
    buf = io.StringIO()
    saved = {}
    env = env or {}
    for k, v in env.items():
        saved[k] = os.environ.get(k)
        os.environ[k] = v
    try:
        with contextlib.redirect_stdout(buf):
            rc = cli.main(argv)
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v
    return rc, buf.getvalue()


def read_bytes_map(root):
    root = Path(root)
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


# ---------------------------------------------------------------------------
# config text format
# ---------------------------------------------------------------------------


def test_config_roundtrip_all_fields():
    cfg = ExperimentConfig(model="simple", dim=4, steps=123456,
                           horizon_factor=2.5, seeds=7, seed=99,
                           green_tol=1e-7, delta=0.1, radius=3.0, eps=0.2,
                           site="1,1,0,0", kmax=12, jmax=33, c=1.5,
                           outdir="runs/out")
    again = parse_config(cfg.to_text())
    assert again == cfg


def test_config_text_shape():
    text = ExperimentConfig().to_text()
    lines = text.strip().splitlines()
    assert lines[0].replace(" ", "") == "version=1"
    keys = [ln.split("=")[0].strip() for ln in lines[1:] if "=" in ln]
    assert keys.index("model") < keys.index("dim") < keys.index("steps")


@pytest.mark.parametrize("find,replace", [
    ("version=1", "version=2"),
    ("dim=3", "dim=3.5"),
    ("steps=1000000", "steps=1e6x"),
])
def test_config_rejects_bad_values(find, replace):
    base = ExperimentConfig().to_text()
    text = base.replace(find, replace, 1)
    assert text != base
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError):
        parse_config(ExperimentConfig().to_text() + "bogus_key=1\n")


def test_config_rejects_duplicates():
    text = ExperimentConfig().to_text() + "dim = 4\n"
    with pytest.raises(ConfigError):
        parse_config(text)


# ---------------------------------------------------------------------------
# archive primitives
# ---------------------------------------------------------------------------


def test_csv_cell_formats():
    assert csv_cell(None) == ""
    assert csv_cell(True) == "1" and csv_cell(False) == "0"
    assert csv_cell(12345) == "12345"
    assert csv_cell(0.25) == "0.25"
    assert csv_cell(1.23456789e-5) == "1.23457e-05"
    assert csv_cell(math.nan) == "nan"
    assert csv_cell(math.inf) == "inf"
    assert csv_cell("plain") == "plain"
    with pytest.raises(ValueError):
        csv_cell("a,b")


def test_archive_writer_roundtrip(tmp_path):
    out = tmp_path / "arch"
    w = ArchiveWriter(out, config_text="version = 1\n")
    w.add_seed_report(0, {"seed": 0, "value": 1.5})
    w.add_seed_report(1, {"seed": 1, "value": 2.5})
    w.add_aggregate("stats.csv", b"seed,value\n0,1.5\n1,2.5\n")
    w.finalize(complete=True)

    arch = RunArchive(out)
    assert arch.complete
    assert arch.check_hashes() == []
    assert arch.config_text() == "version = 1\n"
    reports = arch.seed_reports()
    assert [s for s, _ in reports] == [0, 1]
    assert reports[1][1]["value"] == 2.5
    assert arch.file_bytes("stats.csv").startswith(b"seed,value")


def test_archive_writer_rejects_collisions(tmp_path):
    w = ArchiveWriter(tmp_path / "a", config_text="x")
    w.add_seed_report(0, {})
    with pytest.raises(ValueError):
        w.add_seed_report(0, {})
    with pytest.raises(ValueError):
        w.add_aggregate("manifest.json", b"")


def test_archive_detects_tampering(tmp_path):
    out = tmp_path / "arch"
    w = ArchiveWriter(out, config_text="version = 1\n")
    w.add_seed_report(0, {"v": 1})
    w.finalize(complete=True)
    target = out / seed_report_name(0)
    target.write_bytes(target.read_bytes().replace(b"1", b"2"))
    assert RunArchive(out).check_hashes() == [seed_report_name(0)]


# ---------------------------------------------------------------------------
# CLI: formats and exit codes
# ---------------------------------------------------------------------------


def test_constants_csv_stdout():
    rc, out = run_cli(["constants", "--dim", "3", "--range", "2",
                       "--green-tol", "1e-6"])
    assert rc == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("# model=simple-symmetric dim=3 radius=2")
    assert lines[1].startswith("# G0=1.51639 gamma=0.659463 lambda=0.928306")
    assert lines[2] == "x1,x2,x3,G,gamma_x,q_x,s_x,m_x"
    assert len(lines) == 3 + 33  # euclidean 2-ball of Z^3


def test_constants_json_file(tmp_path):
    dest = tmp_path / "c.json"
    rc, _ = run_cli(["constants", "--dim", "3", "--range", "1",
                     "--green-tol", "1e-6", "--out", str(dest)])
    assert rc == 0
    doc = json.loads(dest.read_text())
    assert doc["dim"] == 3
    assert doc["gamma"] == pytest.approx(0.6594627, abs=1e-5)
    assert doc["c_d"] == pytest.approx(1.0 / (2 * math.pi) * 3 ** 1.5,
                                       rel=1e-9)
    assert len(doc["sites"]) == 7


def test_green_subcommand_json():
    rc, out = run_cli(["green", "--dim", "3", "--range", "2",
                       "--green-tol", "1e-6"])
    assert rc == 0
    doc = json.loads(out)
    entries = {tuple(e["x"]): e for e in doc["entries"]}
    assert entries[(0, 0, 0)]["value"] == pytest.approx(1.516386, abs=1e-5)
    assert all(e["abs_error"] <= 1e-6 for e in entries.values())


def test_usage_errors_exit_2(tmp_path):
    rc, _ = run_cli(["constants", "--dim", "2"])
    assert rc == 2
    rc, _ = run_cli(["simulate", "--model", str(tmp_path / "missing.law"),
                     "--steps", "10", "--out", str(tmp_path / "x")])
    assert rc == 2
    rc, _ = run_cli([])
    assert rc == 2
    with pytest.raises(SystemExit) as exc:
        run_cli(["frobnicate"])
    assert exc.value.code == 2


def test_simulate_archive_layout(tmp_path):
    out = tmp_path / "run"
    rc, _ = run_cli(["simulate", "--dim", "3", "--steps", "2000",
                     "--seeds", "2", "--seed", "9", "--out", str(out)])
    assert rc == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.txt", "manifest.json", "seed-000000.json",
                     "seed-000001.json", "summary.csv"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["complete"] is True
    assert set(man["files"]) == set(names) - {"manifest.json"}

    rep = json.loads((out / "seed-000000.json").read_text())
    for key in ("command", "dim", "dist_id", "seed", "base_seed", "n",
                "horizon", "xi_origin", "xi_origin_horizon", "max_xi",
                "argmax", "eta", "top_sites", "end"):
        assert key in rep
    assert rep["n"] == 2000 and rep["horizon"] == 20000

    lines = (out / "summary.csv").read_text().strip().splitlines()
    assert lines[0] == "seed,n,horizon,xi_origin,max_xi,n_argmax,argmax,eta"
    assert len(lines) == 3


def test_simulate_zero_seeds_header_only(tmp_path):
    out = tmp_path / "empty"
    rc, _ = run_cli(["simulate", "--dim", "3", "--steps", "100",
                     "--seeds", "0", "--out", str(out)])
    assert rc == 0
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines == ["seed,n,horizon,xi_origin,max_xi,n_argmax,argmax,eta"]


def test_heavy_scan_header_and_workers_identity(tmp_path):
    argv = ["heavy-scan", "--dim", "3", "--steps", "5000", "--seeds", "3",
            "--seed", "4", "--green-tol", "1e-6"]
    a, b = tmp_path / "w1", tmp_path / "w2"
    rc, _ = run_cli(argv + ["--out", str(a)], env={"HEAVYPOINTS_WORKERS": "1"})
    assert rc == 0
    rc, _ = run_cli(argv + ["--out", str(b)], env={"HEAVYPOINTS_WORKERS": "2"})
    assert rc == 0
    am, bm = read_bytes_map(a), read_bytes_map(b)
    assert am == bm
    head = (a / "heavy.csv").read_text().splitlines()[0]
    assert head == "seed,k_n,|A_n|,|B_n|,sup_dev,mean_dev,R_median"


def test_simulate_rerun_from_config_is_identical(tmp_path):
    first = tmp_path / "first"
    rc, _ = run_cli(["simulate", "--dim", "3", "--steps", "3000",
                     "--seeds", "2", "--seed", "21", "--out", str(first)])
    assert rc == 0
    second = tmp_path / "second"
    rc, _ = run_cli(["simulate", "--config", str(first / "config.txt"),
                     "--out", str(second)])
    assert rc == 0
    assert read_bytes_map(first) == read_bytes_map(second)


def test_jointlaw_archive_and_values(tmp_path, dc3):
    out = tmp_path / "jl"
    rc, _ = run_cli(["jointlaw", "--dim", "3", "--x", "1,0,0",
                     "--kmax", "8", "--jmax", "12", "--green-tol", "1e-6",
                     "--out", str(out)])
    assert rc == 0
    lines = (out / "pmf.csv").read_text().strip().splitlines()
    assert lines[0] == "k,j,probability"
    cells = {}
    for ln in lines[1:]:
        k, j, p = ln.split(",")
        cells[(int(k), int(j))] = float(p)
    e1 = dc3.site((1, 0, 0))
    atom = 1.0 - e1.q_x - e1.s_x
    assert cells[(0, 0)] == pytest.approx(atom, rel=1e-4)  # csv keeps 6 digits
    assert cells[(0, 1)] == pytest.approx(e1.s_x * atom, rel=1e-4)
    assert len(cells) == 9 * 13


def test_estimate_subcommand(tmp_path):
    dest = tmp_path / "est.json"
    rc, _ = run_cli(["estimate", "--dim", "3", "--x", "1,0,0",
                     "--replicas", "2000", "--steps", "2000", "--seed", "3",
                     "--green-tol", "1e-6", "--out", str(dest)])
    assert rc == 0
    doc = json.loads(dest.read_text())
    assert doc["empirical"]["q"] + doc["empirical"]["s"] + \
        doc["empirical"]["never"] == pytest.approx(1.0, abs=1e-12)
    assert abs(doc["z_scores"]["q"]) < 4.0
    assert doc["exact"]["q"] == pytest.approx(0.2540305, abs=1e-5)


def test_thm13_subcommand(tmp_path):
    out = tmp_path / "scan"
    rc, _ = run_cli(["thm13", "--dim", "3", "--steps", "20000", "--seeds",
                     "2", "--seed", "2024", "--c", "1.0", "--eps", "0.1",
                     "--green-tol", "1e-6", "--out", str(out)])
    assert rc == 0
    lines = (out / "thm13.csv").read_text().strip().splitlines()
    assert lines[0] == "seed,hits,j_min,j_max"
    assert len(lines) == 3


def test_coverage_subcommand(tmp_path):
    out = tmp_path / "cov"
    rc, _ = run_cli(["coverage", "--dim", "3", "--steps", "20000",
                     "--seeds", "2", "--seed", "12", "--green-tol", "1e-6",
                     "--out", str(out)])
    assert rc == 0
    lines = (out / "coverage.csv").read_text().strip().splitlines()
    assert lines[0] == "seed,center,R,R_sq,origin_only"


def test_verify_replay_and_tamper(tmp_path):
    out = tmp_path / "run"
    rc, _ = run_cli(["simulate", "--dim", "3", "--steps", "2000",
                     "--seeds", "2", "--seed", "9", "--out", str(out)])
    assert rc == 0
    rc, text = run_cli(["verify", "--archive", str(out)])
    assert rc == 0
    assert "PASS" in text and "FAIL" not in text

    victim = out / "summary.csv"
    victim.write_bytes(victim.read_bytes().replace(b"2000", b"2001", 1))
    rc, text = run_cli(["verify", "--archive", str(out)])
    assert rc == 1
    assert "FAIL" in text


def test_bench_subcommand():
    rc, out = run_cli(["bench", "--steps", "20000"])
    assert rc == 0
    assert "steps/s" in out
