#!/usr/bin/env python3
"""Render figures from the simulation CLI's CSV artifacts.

Three kinds:

  pde3d-snapshots   one xy heatmap per snapshot CSV (density integrated
                    over the plasticity axis) plus a mean-plasticity trace
  game-sweep        initial points and limit points of a reciprocity sweep,
                    with the interior fixed-point curve overlaid from the
                    run config's eps values
  coop-series       population masses (log scale) and mean cooperation
                    probabilities over time

The script only reads the CSVs (and, for the overlay, the flat key=value
run config); it never imports the simulation package.  Figures use a fixed
size, dpi and metadata so reruns are byte-identical.
"""

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150
PNG_METADATA = {"Software": "coopdyn plots"}

SNAPSHOT_COLUMNS = ("t", "x", "y", "theta", "n")
SWEEP_COLUMNS = ("p0", "q0", "p_star", "q_star", "converged")
SERIES_COLUMNS = ("t", "rho_A", "rho_B", "ptilde_A", "ptilde_B", "E_A", "E_B")


class SchemaMismatch(Exception):
    """CSV header does not match the expected schema."""

    def __init__(self, path, missing, unexpected):
        self.path = str(path)
        self.missing = tuple(missing)
        self.unexpected = tuple(unexpected)
        parts = []
        if self.missing:
            parts.append("missing columns: " + ", ".join(self.missing))
        if self.unexpected:
            parts.append("unexpected columns: " + ", ".join(self.unexpected))
        super().__init__(f"{self.path}: " + "; ".join(parts))


def read_table(path, columns):
    """Header-checked CSV read; returns {column: float array} plus raw strings.

    Column order in the file is free.  A header-only file yields empty
    arrays, which every renderer accepts (empty axes are a valid plot).
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    header = rows[0] if rows else []
    missing = [c for c in columns if c not in header]
    unexpected = [c for c in header if c not in columns]
    if missing or unexpected:
        raise SchemaMismatch(path, missing, unexpected)
    table = {}
    for name in columns:
        cells = [row[header.index(name)] for row in rows[1:]]
        if name == "converged":
            table[name] = np.array([cell == "true" for cell in cells], dtype=bool)
        else:
            table[name] = np.array([float(cell) for cell in cells])
    return table


def _spacing(values):
    return values[1] - values[0] if len(values) > 1 else 1.0


def xy_marginal(table):
    """Integrate n over theta per (x, y) cell.

    Returns (x_centers, y_centers, grid) with grid[i, j] the marginal at
    (x_centers[i], y_centers[j]); cells absent from the CSV (the excluded
    region) are NaN.
    """
    x_centers = np.unique(table["x"])
    y_centers = np.unique(table["y"])
    d_theta = _spacing(np.unique(table["theta"]))
    grid = np.full((len(x_centers), len(y_centers)), np.nan)
    ix = np.searchsorted(x_centers, table["x"])
    iy = np.searchsorted(y_centers, table["y"])
    grid[ix, iy] = 0.0
    np.add.at(grid, (ix, iy), table["n"] * d_theta)
    return x_centers, y_centers, grid


def mean_trait(weights, values):
    """Density-weighted average; NaN when the total weight vanishes."""
    total = weights.sum()
    if total <= 0.0:
        return float("nan")
    return float((weights * values).sum() / total)


def fixed_point_curve(p, eps11, eps12):
    """Interior fixed-point locus q(p) of the balanced reciprocity map."""
    p = np.asarray(p, dtype=float)
    return eps12 * p / (eps11 + (eps12 - eps11) * p)


def curve_deviation(p, q, eps11, eps12):
    """Largest vertical distance of the points (p, q) from the overlay curve."""
    if len(p) == 0:
        return 0.0
    return float(np.abs(np.asarray(q) - fixed_point_curve(p, eps11, eps12)).max())


def load_overlay_params(path):
    """Pull eps11 and eps12 out of a flat key=value run config."""
    found = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        if key.strip() in ("eps11", "eps12"):
            found[key.strip()] = float(value.strip())
    absent = [k for k in ("eps11", "eps12") if k not in found]
    if absent:
        raise ValueError(f"{path}: config lacks {', '.join(absent)}")
    return found["eps11"], found["eps12"]


@dataclass(frozen=True)
class PlotJob:
    kind: str
    inputs: tuple
    output: str
    config: str | None = None
    xlim: tuple | None = None
    ylim: tuple | None = None


def _apply_limits(job, *axes):
    for ax in axes:
        if job.xlim is not None:
            ax.set_xlim(*job.xlim)
        if job.ylim is not None:
            ax.set_ylim(*job.ylim)


def _extent(centers):
    half = _spacing(centers) / 2.0
    return centers[0] - half, centers[-1] + half


def render_snapshots(job):
    tables = [read_table(path, SNAPSHOT_COLUMNS) for path in job.inputs]
    n_panels = len(tables)
    fig = plt.figure(figsize=(3.0 * n_panels + 1.0, 4.6))
    grid_spec = fig.add_gridspec(
        2, n_panels, height_ratios=(3.0, 1.2), hspace=0.35, wspace=0.3
    )
    cmap = plt.get_cmap("viridis").with_extremes(bad="0.85")

    marginals = []
    for table in tables:
        if len(table["t"]):
            marginals.append(xy_marginal(table))
        else:
            marginals.append((np.array([]), np.array([]), np.empty((0, 0))))
    peak = max((np.nanmax(g) for _, _, g in marginals if g.size), default=1.0)

    heat_axes = []
    image = None
    for panel, (table, (xs, ys, grid)) in enumerate(zip(tables, marginals)):
        ax = fig.add_subplot(grid_spec[0, panel])
        heat_axes.append(ax)
        if grid.size:
            image = ax.imshow(
                grid.T,
                origin="lower",
                extent=_extent(xs) + _extent(ys),
                vmin=0.0,
                vmax=peak,
                cmap=cmap,
                aspect="equal",
            )
            ax.set_title(f"t = {table['t'][0]:g}")
        else:
            ax.set_title(Path(job.inputs[panel]).stem)
        ax.set_xlabel("x")
        if panel == 0:
            ax.set_ylabel("y")
    if image is not None:
        fig.colorbar(image, ax=heat_axes, fraction=0.03, pad=0.02)

    trace_ax = fig.add_subplot(grid_spec[1, :])
    times = np.array([t["t"][0] if len(t["t"]) else np.nan for t in tables])
    means = np.array([mean_trait(t["n"], t["theta"]) for t in tables])
    keep = np.isfinite(times) & np.isfinite(means)
    trace_ax.plot(times[keep], means[keep], "o-", color="tab:red")
    trace_ax.set_xlabel("t")
    trace_ax.set_ylabel("mean plasticity")
    trace_ax.grid(True, alpha=0.3)

    _apply_limits(job, *heat_axes)
    return fig


def render_sweep(job):
    if len(job.inputs) != 1:
        raise ValueError("game-sweep takes exactly one CSV")
    if job.config is None:
        raise ValueError("game-sweep needs --config for the curve overlay")
    table = read_table(job.inputs[0], SWEEP_COLUMNS)
    eps11, eps12 = load_overlay_params(job.config)

    fig, ax = plt.subplots(figsize=(5.2, 5.0))
    p_line = np.linspace(0.0, 1.0, 401)
    ax.plot(
        p_line,
        fixed_point_curve(p_line, eps11, eps12),
        color="0.3",
        linewidth=1.5,
        label="fixed-point curve",
        zorder=1,
    )
    ax.scatter(
        table["p0"], table["q0"],
        facecolors="none", edgecolors="tab:blue", s=22, label="initial", zorder=2,
    )
    ok = table["converged"]
    ax.scatter(
        table["p_star"][ok], table["q_star"][ok],
        color="tab:orange", s=26, label="limit", zorder=3,
    )
    if (~ok).any():
        ax.scatter(
            table["p_star"][~ok], table["q_star"][~ok],
            color="tab:red", marker="x", s=30, label="not converged", zorder=3,
        )
    ax.set_xlabel("p")
    ax.set_ylabel("q")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="upper left", frameon=False)
    _apply_limits(job, ax)
    return fig


def render_series(job):
    if len(job.inputs) != 1:
        raise ValueError("coop-series takes exactly one CSV")
    table = read_table(job.inputs[0], SERIES_COLUMNS)

    fig, (mass_ax, trait_ax) = plt.subplots(1, 2, figsize=(8.4, 3.6))
    for column, style in (("rho_A", "-"), ("rho_B", "--")):
        mass_ax.plot(table["t"], table[column], style, label=column)
    if len(table["t"]) and (table["rho_A"] > 0).all() and (table["rho_B"] > 0).all():
        mass_ax.set_yscale("log")
    mass_ax.set_xlabel("t")
    mass_ax.set_ylabel("mass")
    mass_ax.legend(frameon=False)
    mass_ax.grid(True, alpha=0.3)

    for column, style in (("ptilde_A", "-"), ("ptilde_B", "--")):
        trait_ax.plot(table["t"], table[column], style, label=column)
    trait_ax.set_xlabel("t")
    trait_ax.set_ylabel("mean cooperation probability")
    trait_ax.legend(frameon=False)
    trait_ax.grid(True, alpha=0.3)

    fig.tight_layout()
    _apply_limits(job, mass_ax, trait_ax)
    return fig


RENDERERS = {
    "pde3d-snapshots": render_snapshots,
    "game-sweep": render_sweep,
    "coop-series": render_series,
}


def render(job):
    """Render one job and write its image; returns the output path."""
    for path in job.inputs:
        if not Path(path).is_file():
            raise FileNotFoundError(f"input CSV not found: {path}")
    fig = RENDERERS[job.kind](job)
    fig.savefig(job.output, dpi=DPI, metadata=PNG_METADATA)
    plt.close(fig)
    return job.output


def _pair(text):
    lo, _, hi = text.partition(",")
    return float(lo), float(hi)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plot.py", description="Render figures from simulation CSV artifacts."
    )
    parser.add_argument("kind", choices=sorted(RENDERERS))
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV", help="input CSV file(s)")
    parser.add_argument("--out", required=True, help="output PNG path")
    parser.add_argument("--config", help="run config (game-sweep curve overlay)")
    parser.add_argument("--xlim", type=_pair, metavar="LO,HI")
    parser.add_argument("--ylim", type=_pair, metavar="LO,HI")
    args = parser.parse_args(argv)
    job = PlotJob(
        kind=args.kind,
        inputs=tuple(args.inputs),
        output=args.out,
        config=args.config,
        xlim=args.xlim,
        ylim=args.ylim,
    )
    try:
        render(job)
    except (SchemaMismatch, OSError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
