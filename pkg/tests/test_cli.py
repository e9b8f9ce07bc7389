"""Tests for the command-line harness: config parsing, artifacts, exit codes."""

import numpy as np
import pytest

from coopdyn.cli import Lcg, main, parse_config

GAME_CFG = """
# two-player run
b = 3
c = 1
eps11 = 0.2
eps12 = 0.1
eps21 = 0.3
eps22 = 0.4
p0 = 0.5
q0 = 0.5
k_max = 500
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_manifest(out_dir):
    entries = {}
    for line in (out_dir / "manifest.txt").read_text().splitlines():
        name, count = line.rsplit(" ", 1)
        entries[name] = int(count)
    return entries


# ---------------------------------------------------------------------------
# config parsing


def test_parse_minimal_game_config():
    config, issues = parse_config(GAME_CFG, "game")
    assert issues == []
    assert config.params["b"] == 3.0
    assert config.params["k_max"] == 500
    assert config.params["tol"] == 1e-10  # default applied


def test_parse_reports_all_errors_not_just_first():
    text = "b = 1\nc = 3\neps11 = 1.5\neps12 = 0.1\np0 = 0.5\nq0 = 0.5\nk_max = 10\nbogus = 1\n"
    _, issues = parse_config(text, "game")
    kinds = {(i.kind, i.key) for i in issues}
    assert ("UnknownKey", "bogus") in kinds
    assert ("BadValue", "eps11") in kinds
    assert ("MissingKey", "eps21") in kinds
    assert ("MissingKey", "eps22") in kinds
    assert len(issues) == 4


def test_parse_rejects_b_not_above_c():
    text = GAME_CFG.replace("b = 3", "b = 1").replace("c = 1", "c = 3")
    _, issues = parse_config(text, "game")
    assert [i.kind for i in issues] == ["BadValue"]
    assert issues[0].key == "b" and "b > c" in issues[0].message


def test_parse_rejects_nonfinite_duplicate_and_malformed():
    text = "b = inf\nb = 3\nthis is not a pair\nk_max = 2.5\n"
    _, issues = parse_config(text, "game")
    by_kind = {}
    for issue in issues:
        by_kind.setdefault(issue.kind, []).append(issue)
    bad = {i.key: i for i in by_kind["BadValue"]}
    assert "finite" in bad["b"].message
    assert any("duplicate" in i.message for i in by_kind["BadValue"])
    assert any("key = value" in i.message for i in by_kind["BadValue"])
    assert "integer" in bad["k_max"].message
    assert {i.key for i in by_kind["MissingKey"]} == {
        "c", "eps11", "eps12", "eps21", "eps22", "p0", "q0"
    }


def test_parse_line_numbers_point_at_offenders():
    text = "b = 3\nc = 1\neps11 = 2.0\n"
    _, issues = parse_config(text, "game")
    eps_issue = next(i for i in issues if i.key == "eps11")
    assert eps_issue.line == 3
    missing = next(i for i in issues if i.kind == "MissingKey")
    assert missing.line == 0


def test_parse_nplayer_lists_and_length_check():
    good = "p0 = 0.1, 0.5, 0.9\neps1 = 0.2,0.2,0.2\neps2 = 0.1,0.1,0.1\nk_max = 10\n"
    config, issues = parse_config(good, "nplayer")
    assert issues == []
    assert config.params["p0"] == (0.1, 0.5, 0.9)
    bad = "p0 = 0.1, 0.5\neps1 = 0.2\neps2 = 0.1,0.1\nk_max = 10\n"
    _, issues = parse_config(bad, "nplayer")
    assert issues and issues[0].key == "eps1" and "length" in issues[0].message


def test_parse_comments_and_blank_lines_ignored():
    text = "\n# comment only\nb = 3  # trailing\nc = 1\n"
    _, issues = parse_config(text, "classify-game")
    assert {i.key for i in issues} == {"eps11", "eps12", "eps21", "eps22"}


# ---------------------------------------------------------------------------
# sweep generator


def test_lcg_matches_documented_recurrence():
    mask = (1 << 64) - 1
    state = 7
    rng = Lcg(7)
    for _ in range(5):
        state = (state * 6364136223846793005 + 1442695040888963407) & mask
        expected = (state >> 32) / 2**32
        drawn = rng.next_unit()
        assert drawn == expected
        assert 0.0 <= drawn < 1.0


def test_lcg_streams_differ_by_seed():
    a = [Lcg(1).next_unit() for _ in range(3)]
    b = [Lcg(2).next_unit() for _ in range(3)]
    assert a != b


# ---------------------------------------------------------------------------
# subcommands


def test_game_at_fixed_point_writes_two_rows(tmp_path):
    cfg = write(tmp_path, GAME_CFG.replace("p0 = 0.5", "p0 = 1").replace("q0 = 0.5", "q0 = 1"))
    out = tmp_path / "out"
    assert main(["game", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "k,p,q,E_A,E_B,E_avg"
    assert len(lines) == 3
    assert lines[1] == "0,1.0,1.0,2.0,2.0,2.0"
    assert read_manifest(out) == {"trajectory.csv": 2}


def test_game_nonconvergence_exits_two_but_writes_artifacts(tmp_path, capsys):
    cfg = write(tmp_path, GAME_CFG.replace("k_max = 500", "k_max = 3"))
    out = tmp_path / "out"
    assert main(["game", "--config", str(cfg), "--out", str(out)]) == 2
    assert "NonConvergence" in capsys.readouterr().err
    assert len((out / "trajectory.csv").read_text().splitlines()) == 5


def test_config_errors_exit_one_and_list_everything(tmp_path, capsys):
    cfg = write(tmp_path, "b = 1\nc = 3\nbogus = 1\n")
    assert main(["game", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "UnknownKey" in err and "MissingKey" in err
    assert not (tmp_path / "o").exists()


def test_missing_config_file_exits_one(tmp_path, capsys):
    assert main(["game", "--config", str(tmp_path / "nope.cfg")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_usage_errors_map_to_config_exit_code(capsys):
    assert main(["game"]) == 1  # missing --config
    assert main(["not-a-subcommand"]) == 1
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    capsys.readouterr()


def test_nplayer_trajectory(tmp_path):
    cfg = write(tmp_path, "p0 = 0.2,0.5,0.8\neps1 = 0.3,0.3,0.3\neps2 = 0.2,0.2,0.2\nk_max = 4000\n")
    out = tmp_path / "out"
    assert main(["nplayer", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "k,p1,p2,p3"
    final = [float(v) for v in lines[-1].split(",")[1:]]
    assert all(0.0 <= v <= 1.0 for v in final)


def test_sweep_serial_and_parallel_agree(tmp_path, monkeypatch):
    cfg = write(
        tmp_path,
        "b = 2\nc = 1\neps11 = 0.3\neps12 = 0.2\neps21 = 0.4\neps22 = 0.1\n"
        "n_points = 6\nk_max = 100000\ntol = 1e-10\n",
    )
    monkeypatch.delenv("COOPDYN_THREADS", raising=False)
    assert main(["game-sweep", "--config", str(cfg), "--out", str(tmp_path / "serial"),
                 "--seed", "9"]) == 0
    monkeypatch.setenv("COOPDYN_THREADS", "2")
    assert main(["game-sweep", "--config", str(cfg), "--out", str(tmp_path / "par"),
                 "--seed", "9"]) == 0
    serial = (tmp_path / "serial" / "sweep.csv").read_bytes()
    parallel = (tmp_path / "par" / "sweep.csv").read_bytes()
    assert serial == parallel
    lines = serial.decode().splitlines()
    assert lines[0] == "p0,q0,p_star,q_star,converged"
    assert len(lines) == 7
    # e > 0 here, so every point must land on full cooperation
    for line in lines[1:]:
        parts = line.split(",")
        assert parts[4] == "true"
        assert abs(float(parts[2]) - 1.0) < 1e-6 and abs(float(parts[3]) - 1.0) < 1e-6


def test_sweep_seed_changes_points(tmp_path, monkeypatch):
    monkeypatch.delenv("COOPDYN_THREADS", raising=False)
    cfg = write(
        tmp_path,
        "b = 2\nc = 1\neps11 = 0.3\neps12 = 0.2\neps21 = 0.4\neps22 = 0.1\n"
        "n_points = 3\nk_max = 50000\n",
    )
    main(["game-sweep", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["game-sweep", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    main(["game-sweep", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "1"])
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    b = (tmp_path / "b" / "sweep.csv").read_bytes()
    c = (tmp_path / "c" / "sweep.csv").read_bytes()
    assert a != b and a == c


PDE_CFG = """
t_end = 2
snapshot_every = 1
initial_radius = 0.075
resolution_x = 20
resolution_y = 20
resolution_theta = 10
"""


def test_pde3d_run_artifacts(tmp_path):
    cfg = write(tmp_path, PDE_CFG)
    out = tmp_path / "out"
    assert main(["pde3d", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = read_manifest(out)
    snapshots = sorted(name for name in manifest if name.startswith("snapshot_"))
    assert snapshots == ["snapshot_0000.csv", "snapshot_0001.csv", "snapshot_0002.csv"]
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "t,rho,mean_x,mean_y,mean_theta,var_x,var_y,var_theta,n_modes"
    assert len(summary) == 4
    snap = (out / "snapshot_0000.csv").read_text().splitlines()
    assert snap[0] == "t,x,y,theta,n"
    # one row per unmasked cell, all at the same emission time
    assert manifest["snapshot_0000.csv"] == len(snap) - 1
    assert {line.split(",")[0] for line in snap[1:]} == {"0.0"}
    first_row = snap[1].split(",")
    assert float(first_row[1]) == 0.025 and float(first_row[2]) == 0.025


def test_pde3d_rejects_default_bump_on_default_grid(tmp_path, capsys):
    cfg = write(tmp_path, "t_end = 1\n")
    assert main(["pde3d", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "EmptySupport" in capsys.readouterr().err


def test_pde3d_forced_dt_above_bound_names_cfl(tmp_path, capsys):
    cfg = write(tmp_path, PDE_CFG + "dt = 5.0\n")
    assert main(["pde3d", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "CflViolation" in capsys.readouterr().err


def test_pde3d_byte_identical_reruns(tmp_path):
    cfg = write(tmp_path, PDE_CFG)
    for name in ("one", "two"):
        assert main(["pde3d", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for artifact in ("snapshot_0001.csv", "summary.csv", "manifest.txt"):
        assert (tmp_path / "one" / artifact).read_bytes() == (tmp_path / "two" / artifact).read_bytes()


COOP_CFG = """
rA2 = -1
rA1 = 1
rA0 = -0.5
rB2 = -1
rB1 = 1
rB0 = -0.5
t_end = 1
snapshot_every = 0.5
n_cells = 100
"""


def test_coop_zero_horizon_single_snapshot(tmp_path):
    cfg = write(tmp_path, COOP_CFG.replace("t_end = 1", "t_end = 0"))
    out = tmp_path / "out"
    assert main(["coop", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = read_manifest(out)
    assert manifest["snapshot_0000.csv"] == 100
    assert "snapshot_0001.csv" not in manifest
    assert manifest["series.csv"] == 1


def test_coop_run_artifacts(tmp_path):
    cfg = write(tmp_path, COOP_CFG)
    out = tmp_path / "out"
    assert main(["coop", "--config", str(cfg), "--out", str(out)]) == 0
    series = (out / "series.csv").read_text().splitlines()
    assert series[0] == "t,rho_A,rho_B,ptilde_A,ptilde_B,E_A,E_B"
    snap = (out / "snapshot_0001.csv").read_text().splitlines()
    assert snap[0] == "t,p,n_A,n_B"
    fate = (out / "fate.txt").read_text()
    assert "A.verdict = Extinction" in fate
    assert "halted = none" in fate
    manifest = read_manifest(out)
    assert {"snapshot_0000.csv", "snapshot_0001.csv", "snapshot_0002.csv"} <= set(manifest)


def test_classify_game_prints_regime(tmp_path, capsys):
    cfg = write(tmp_path, "b = 3\nc = 1\neps11 = 0.1\neps12 = 0.4\neps21 = 0.2\neps22 = 0.3\n")
    out = tmp_path / "out"
    assert main(["classify", "--config", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "regime = CollapseStable" in text
    assert "fp0.stable = true" in text
    assert (out / "report.txt").read_text().splitlines()[0] == "model = game"


def test_classify_coop_reports_fate(tmp_path, capsys):
    cfg = write(
        tmp_path,
        "rA2 = -1\nrA1 = 1\nrA0 = -0.5\nrB2 = -1\nrB1 = 1\nrB0 = -0.5\n"
        "gammaA = 1\ngammaB = 1\nb = 2.25\nc = 0.25\n",
    )
    out = tmp_path / "out"
    assert main(["classify", "--config", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "model = coop" in text
    assert "A.verdict = BlowUp" in text
    assert "A.interval = 0.0..1.0" in text


def test_classify_coop_with_advection_exits_two(tmp_path, capsys):
    cfg = write(tmp_path, "rA0 = -0.1\nepsA = 0.5\n")
    assert main(["classify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "RequiresNoAdvection" in capsys.readouterr().err


def test_game_trajectory_reaches_collapse(tmp_path):
    text = GAME_CFG.replace("eps11 = 0.2", "eps11 = 0.1").replace("eps21 = 0.3", "eps21 = 0.2") \
                   .replace("eps12 = 0.1", "eps12 = 0.4").replace("eps22 = 0.4", "eps22 = 0.3") \
                   .replace("k_max = 500", "k_max = 5000")
    cfg = write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["game", "--config", str(cfg), "--out", str(out)]) == 0
    last = (out / "trajectory.csv").read_text().splitlines()[-1].split(",")
    assert float(last[1]) < 1e-8 and float(last[2]) < 1e-8
