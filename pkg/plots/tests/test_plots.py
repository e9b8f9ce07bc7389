"""Tests for the CSV-to-figure scripts.

The end-to-end tests drive the simulation CLI as a subprocess and render
from its artifacts; everything else works on hand-written CSVs against the
documented schemas.
"""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import plot
from plot import PlotJob, SchemaMismatch

SWEEP_CFG = """b = 2
c = 1
eps11 = 0.2
eps12 = 0.4
eps21 = 0.2
eps22 = 0.1
n_points = 40
k_max = 200000
tol = 1e-12
"""

PDE_CFG = """t_end = 2
snapshot_every = 1
initial_radius = 0.075
resolution_x = 20
resolution_y = 20
resolution_theta = 10
"""

COOP_CFG = """rA2 = -1
rA1 = 1
rA0 = -0.5
rB2 = -1
rB1 = 1
rB0 = -0.5
t_end = 2
snapshot_every = 1
n_cells = 100
"""


def run_cli(subcommand, config_text, out_dir):
    config = out_dir.parent / f"{subcommand}.cfg"
    config.write_text(config_text)
    subprocess.run(
        [sys.executable, "-m", "coopdyn.cli", subcommand,
         "--config", str(config), "--out", str(out_dir), "--seed", "7"],
        check=True,
    )
    return config


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    """One run of each CLI subcommand whose CSVs the plots consume."""
    root = tmp_path_factory.mktemp("runs")
    sweep_cfg = run_cli("game-sweep", SWEEP_CFG, root / "sweep")
    run_cli("pde3d", PDE_CFG, root / "pde3d")
    run_cli("coop", COOP_CFG, root / "coop")
    return {
        "sweep_csv": root / "sweep" / "sweep.csv",
        "sweep_cfg": sweep_cfg,
        "snapshots": sorted((root / "pde3d").glob("snapshot_*.csv")),
        "series_csv": root / "coop" / "series.csv",
    }


def jobs_for(artifacts, out_dir, tag):
    return [
        PlotJob("pde3d-snapshots",
                tuple(str(p) for p in artifacts["snapshots"]),
                str(out_dir / f"snapshots-{tag}.png")),
        PlotJob("game-sweep", (str(artifacts["sweep_csv"]),),
                str(out_dir / f"sweep-{tag}.png"),
                config=str(artifacts["sweep_cfg"])),
        PlotJob("coop-series", (str(artifacts["series_csv"]),),
                str(out_dir / f"series-{tag}.png")),
    ]


def test_all_kinds_render_byte_identically(artifacts, tmp_path):
    for first, second in zip(jobs_for(artifacts, tmp_path, "a"),
                             jobs_for(artifacts, tmp_path, "b")):
        plot.render(first)
        plot.render(second)
        image = Path(first.output).read_bytes()
        assert len(image) > 1000
        assert image == Path(second.output).read_bytes(), first.kind


def test_sweep_limits_sit_on_the_overlay_curve(artifacts):
    table = plot.read_table(artifacts["sweep_csv"], plot.SWEEP_COLUMNS)
    assert table["converged"].all()
    eps11, eps12 = plot.load_overlay_params(artifacts["sweep_cfg"])
    # about one line width in data units on the 5-inch axes
    assert plot.curve_deviation(
        table["p_star"], table["q_star"], eps11, eps12
    ) <= 0.005
    assert plot.curve_deviation(table["p0"], table["q0"], eps11, eps12) > 0.05


def test_first_snapshot_peaks_at_the_seeded_bump(artifacts):
    table = plot.read_table(artifacts["snapshots"][0], plot.SNAPSHOT_COLUMNS)
    xs, ys, grid = plot.xy_marginal(table)
    i, j = np.unravel_index(np.nanargmax(grid), grid.shape)
    cell = xs[1] - xs[0]
    assert abs(xs[i] - 0.25) <= cell
    assert abs(ys[j] - 0.25) <= cell
    assert np.isnan(grid[-1, -1])  # corner inside the excluded disk


def test_mean_trait_is_the_weighted_average():
    weights = np.array([1.0, 3.0])
    values = np.array([0.2, 0.6])
    assert plot.mean_trait(weights, values) == pytest.approx(0.5)
    assert np.isnan(plot.mean_trait(np.zeros(2), values))


def test_curve_overlay_endpoints():
    p = np.array([0.0, 1.0])
    assert plot.fixed_point_curve(p, 0.2, 0.4) == pytest.approx([0.0, 1.0])
    assert plot.curve_deviation(np.array([]), np.array([]), 0.2, 0.4) == 0.0


def test_header_only_csvs_render_empty_axes(tmp_path):
    snapshot = tmp_path / "snapshot_0000.csv"
    snapshot.write_text("t,x,y,theta,n\n")
    sweep = tmp_path / "sweep.csv"
    sweep.write_text("p0,q0,p_star,q_star,converged\n")
    series = tmp_path / "series.csv"
    series.write_text("t,rho_A,rho_B,ptilde_A,ptilde_B,E_A,E_B\n")
    config = tmp_path / "run.cfg"
    config.write_text("eps11 = 0.2\neps12 = 0.4\n")

    plot.render(PlotJob("pde3d-snapshots", (str(snapshot),), str(tmp_path / "a.png")))
    plot.render(PlotJob("game-sweep", (str(sweep),), str(tmp_path / "b.png"),
                        config=str(config)))
    plot.render(PlotJob("coop-series", (str(series),), str(tmp_path / "c.png")))
    for name in ("a.png", "b.png", "c.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_schema_mismatch_lists_offending_columns(tmp_path):
    bad = tmp_path / "sweep.csv"
    bad.write_text("p0,q0,pstar,q_star,converged,extra\n")
    with pytest.raises(SchemaMismatch) as err:
        plot.read_table(bad, plot.SWEEP_COLUMNS)
    assert err.value.missing == ("p_star",)
    assert set(err.value.unexpected) == {"pstar", "extra"}
    assert "p_star" in str(err.value) and "extra" in str(err.value)


def test_read_table_accepts_reordered_columns(tmp_path):
    csv_path = tmp_path / "series.csv"
    csv_path.write_text(
        "rho_A,t,rho_B,ptilde_A,ptilde_B,E_A,E_B\n2.0,0.5,1.0,0.4,0.6,0.8,0.2\n"
    )
    table = plot.read_table(csv_path, plot.SERIES_COLUMNS)
    assert table["t"][0] == 0.5
    assert table["rho_A"][0] == 2.0


def test_command_line_entry(artifacts, tmp_path):
    out = tmp_path / "cli.png"
    code = plot.main([
        "game-sweep", "--in", str(artifacts["sweep_csv"]),
        "--out", str(out), "--config", str(artifacts["sweep_cfg"]),
        "--xlim", "0,1", "--ylim", "0,1",
    ])
    assert code == 0 and out.is_file()

    # overlay without a config is an error, reported not raised
    assert plot.main([
        "game-sweep", "--in", str(artifacts["sweep_csv"]),
        "--out", str(tmp_path / "no.png"),
    ]) == 1
    assert plot.main([
        "coop-series", "--in", str(tmp_path / "missing.csv"),
        "--out", str(tmp_path / "no.png"),
    ]) == 1
    with pytest.raises(SystemExit):
        plot.main(["no-such-kind", "--in", "x.csv", "--out", "y.png"])
