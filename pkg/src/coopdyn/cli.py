"""Command-line harness: flat key=value configs in, CSV artifacts out.

Each subcommand reads one config file, runs the matching model and writes
its artifacts plus a ``manifest.txt`` (sorted ``<filename> <row-count>``
lines, data rows only) into the output directory.  Exit codes: 0 success,
1 config problems (all of them reported, not just the first), 2 errors
reported by the model (CFL violation, empty initial support, failed
convergence, classification preconditions).

Outputs are byte-identical across reruns of the same config and seed:
floats are written with ``repr`` (shortest round-trip form), row order is
fixed, and randomized sweep points come from the documented LCG, never
from the global RNG.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import coop_structured, game_dynamics, phenotype3d
from .errors import CoopdynError
from .game_dynamics import GameParams, GameState
from .numerics import MaskedGrid3


# ---------------------------------------------------------------------------
# config parsing


@dataclass(frozen=True)
class ConfigIssue:
    kind: str  # MissingKey | BadValue | UnknownKey
    key: str
    line: int  # 0 when the issue is not tied to a config line
    message: str

    def __str__(self) -> str:
        where = f" (line {self.line})" if self.line else ""
        return f"{self.kind}: {self.key}{where}: {self.message}"


@dataclass(frozen=True)
class RunConfig:
    model: str
    params: dict


@dataclass(frozen=True)
class _Field:
    parse: Callable[[str], object]
    required: bool = False
    default: object = None
    check: Callable[[object], str | None] = None


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("must be a finite real")
    return value


def _parse_int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ValueError("must be an integer") from None


def _parse_float_list(text: str) -> tuple[float, ...]:
    items = [part.strip() for part in text.split(",")]
    if not all(items):
        raise ValueError("must be a comma-separated list of reals")
    return tuple(_parse_float(part) for part in items)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text

    return parse


def _positive(value) -> str | None:
    return None if value > 0 else "must be positive"


def _nonnegative(value) -> str | None:
    return None if value >= 0 else "must be >= 0"


def _open_unit(value) -> str | None:
    return None if 0.0 < value < 1.0 else "requires 0 < value < 1"


def _unit_closed(value) -> str | None:
    return None if 0.0 <= value <= 1.0 else "must lie in [0, 1]"


def _each(check) -> Callable[[tuple], str | None]:
    def run(values: tuple) -> str | None:
        for v in values:
            problem = check(v)
            if problem:
                return problem
        return None

    return run


def _min_cells(value) -> str | None:
    return None if value >= 2 else "needs at least 2 cells"


_EPS_FIELDS = {
    name: _Field(_parse_float, required=True, check=_open_unit)
    for name in ("eps11", "eps12", "eps21", "eps22")
}

_PAYOFF_FIELDS = {
    "b": _Field(_parse_float, required=True, check=_positive),
    "c": _Field(_parse_float, required=True, check=_positive),
}

_COOP_MODEL_FIELDS = {
    **{key: _Field(_parse_float, default=0.0)
       for key in ("rA2", "rA1", "rA0", "rB2", "rB1", "rB0")},
    "gammaA": _Field(_parse_float, default=0.0, check=_nonnegative),
    "gammaB": _Field(_parse_float, default=0.0, check=_nonnegative),
    "epsA": _Field(_parse_float, default=0.0, check=_nonnegative),
    "epsB": _Field(_parse_float, default=0.0, check=_nonnegative),
    "b": _Field(_parse_float, default=2.0, check=_positive),
    "c": _Field(_parse_float, default=1.0, check=_positive),
    "n0A": _Field(_parse_float, default=1.0, check=_positive),
    "n0B": _Field(_parse_float, default=1.0, check=_positive),
}

_SCHEMAS: dict[str, dict[str, _Field]] = {
    "game": {
        **_PAYOFF_FIELDS,
        **_EPS_FIELDS,
        "p0": _Field(_parse_float, required=True, check=_unit_closed),
        "q0": _Field(_parse_float, required=True, check=_unit_closed),
        "k_max": _Field(_parse_int, required=True, check=_positive),
        "tol": _Field(_parse_float, default=1e-10, check=_positive),
    },
    "game-sweep": {
        **_PAYOFF_FIELDS,
        **_EPS_FIELDS,
        "n_points": _Field(_parse_int, required=True, check=_positive),
        "k_max": _Field(_parse_int, required=True, check=_positive),
        "tol": _Field(_parse_float, default=1e-10, check=_positive),
    },
    "nplayer": {
        "p0": _Field(_parse_float_list, required=True, check=_each(_unit_closed)),
        "eps1": _Field(_parse_float_list, required=True, check=_each(_open_unit)),
        "eps2": _Field(_parse_float_list, required=True, check=_each(_open_unit)),
        "k_max": _Field(_parse_int, required=True, check=_positive),
        "tol": _Field(_parse_float, default=1e-10, check=_positive),
    },
    "pde3d": {
        "t_end": _Field(_parse_float, required=True, check=_nonnegative),
        "snapshot_every": _Field(_parse_float, check=_positive),
        "advection": _Field(_choice("plain", "theta", "off"), default="plain"),
        "diffusion": _Field(_choice("default", "off"), default="default"),
        "reaction": _Field(_choice("default", "off"), default="default"),
        "resolution_x": _Field(_parse_int, default=40, check=_min_cells),
        "resolution_y": _Field(_parse_int, default=40, check=_min_cells),
        "resolution_theta": _Field(_parse_int, default=20, check=_min_cells),
        "initial_radius": _Field(_parse_float, default=0.025, check=_positive),
        "initial_mass": _Field(_parse_float, default=1.0, check=_positive),
        "dt": _Field(_parse_float, check=_positive),
        "dt_max": _Field(_parse_float, check=_positive),
    },
    "coop": {
        **_COOP_MODEL_FIELDS,
        "t_end": _Field(_parse_float, required=True, check=_nonnegative),
        "snapshot_every": _Field(_parse_float, check=_positive),
        "n_cells": _Field(_parse_int, default=400, check=_min_cells),
        "dt_max": _Field(_parse_float, default=0.05, check=_positive),
    },
    "classify-game": {
        **_PAYOFF_FIELDS,
        **_EPS_FIELDS,
        "balance_tol": _Field(_parse_float, default=1e-12, check=_positive),
    },
    "classify-coop": {
        **_COOP_MODEL_FIELDS,
        "scan_points": _Field(_parse_int, default=4001, check=_min_cells),
    },
}


def _check_b_over_c(params: dict) -> tuple[str, str] | None:
    if not params["b"] > params["c"]:
        return "b", f"requires b > c, got b={params['b']:g}, c={params['c']:g}"
    return None


def _check_player_lists(params: dict) -> tuple[str, str] | None:
    n = len(params["p0"])
    if n < 2:
        return "p0", "needs at least 2 players"
    for key in ("eps1", "eps2"):
        if len(params[key]) != n:
            return key, f"length {len(params[key])} does not match p0 (length {n})"
    return None


_CROSS_CHECKS: dict[str, tuple] = {
    "game": (_check_b_over_c,),
    "game-sweep": (_check_b_over_c,),
    "nplayer": (_check_player_lists,),
    "coop": (_check_b_over_c,),
    "classify-game": (_check_b_over_c,),
    "classify-coop": (_check_b_over_c,),
}


def _raw_entries(text: str):
    """Yield (lineno, key, value) for key=value lines; malformed lines get key None."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep or not key.strip():
            yield lineno, None, body
            continue
        yield lineno, key.strip(), value.strip()


def parse_config(text: str, model: str) -> tuple[RunConfig, list[ConfigIssue]]:
    """Parse a flat key=value config against one model's schema.

    Returns the typed config and a list of every issue found; the config
    is only usable when the list is empty.
    """
    schema = _SCHEMAS[model]
    issues: list[ConfigIssue] = []
    seen: dict[str, tuple[str, int]] = {}
    for lineno, key, value in _raw_entries(text):
        if key is None:
            issues.append(ConfigIssue("BadValue", value, lineno, "expected `key = value`"))
        elif key not in schema:
            issues.append(ConfigIssue("UnknownKey", key, lineno, "not a key of this model"))
        elif key in seen:
            issues.append(ConfigIssue("BadValue", key, lineno, "duplicate key"))
        else:
            seen[key] = (value, lineno)

    params: dict = {}
    for key, field in schema.items():
        if key not in seen:
            if field.required:
                issues.append(ConfigIssue("MissingKey", key, 0, "required key absent"))
            else:
                params[key] = field.default
            continue
        value, lineno = seen[key]
        try:
            parsed = field.parse(value)
        except ValueError as exc:
            issues.append(ConfigIssue("BadValue", key, lineno, str(exc)))
            continue
        problem = field.check(parsed) if field.check else None
        if problem:
            issues.append(ConfigIssue("BadValue", key, lineno, problem))
            continue
        params[key] = parsed
    if not issues:
        for cross in _CROSS_CHECKS.get(model, ()):
            found = cross(params)
            if found:
                issues.append(ConfigIssue("BadValue", found[0], 0, found[1]))
    return RunConfig(model, params), issues


# ---------------------------------------------------------------------------
# deterministic sweep points


class Lcg:
    """64-bit linear congruential generator for reproducible sweep points.

    state' = (6364136223846793005*state + 1442695040888963407) mod 2^64;
    each draw returns the high 32 bits scaled to [0, 1).  Fixed here, not
    delegated to a library RNG, so identical seeds give identical sweeps
    in any reimplementation.
    """

    MULTIPLIER = 6364136223846793005
    INCREMENT = 1442695040888963407
    _MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self._MASK

    def next_unit(self) -> float:
        self.state = (self.state * self.MULTIPLIER + self.INCREMENT) & self._MASK
        return (self.state >> 32) / 4294967296.0


# ---------------------------------------------------------------------------
# artifact writing


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, header: list[str], rows) -> int:
    count = 0
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
            count += 1
    return count


def _write_lines(path: Path, lines: list[str]) -> int:
    with open(path, "w", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    return len(lines)


def _write_manifest(out_dir: Path, counts: dict[str, int]) -> None:
    lines = [f"{name} {counts[name]}" for name in sorted(counts)]
    _write_lines(out_dir / "manifest.txt", lines)


# ---------------------------------------------------------------------------
# runners (each returns {filename: data-row count} and a success flag)


def _game_params(params: dict) -> GameParams:
    return GameParams(
        eps11=params["eps11"],
        eps12=params["eps12"],
        eps21=params["eps21"],
        eps22=params["eps22"],
        b=params["b"],
        c=params["c"],
    )


def _run_game(config: RunConfig, out_dir: Path, seed: int):
    p = config.params
    game = _game_params(p)
    result = game_dynamics.iterate(
        GameState(p["p0"], p["q0"]), game, p["k_max"], convergence_tol=p["tol"]
    )
    rows = []
    for k, (pk, qk) in enumerate(result.trajectory):
        e_a, e_b, e_avg = game_dynamics.expected_gains(GameState(pk, qk, k), game)
        rows.append((k, pk, qk, e_a, e_b, e_avg))
    counts = {"trajectory.csv": _write_csv(
        out_dir / "trajectory.csv", ["k", "p", "q", "E_A", "E_B", "E_avg"], rows
    )}
    if not result.converged:
        return counts, f"iteration did not converge within k_max={p['k_max']}"
    return counts, None


def _sweep_point(task) -> tuple:
    p0, q0, eps, payoff, k_max, tol = task
    game = GameParams(*eps, b=payoff[0], c=payoff[1])
    result = game_dynamics.iterate(
        GameState(p0, q0), game, k_max, convergence_tol=tol, record=False
    )
    return p0, q0, result.final.p, result.final.q, result.converged


def _thread_cap() -> int:
    raw = os.environ.get("COOPDYN_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_game_sweep(config: RunConfig, out_dir: Path, seed: int):
    p = config.params
    rng = Lcg(seed)
    eps = (p["eps11"], p["eps12"], p["eps21"], p["eps22"])
    payoff = (p["b"], p["c"])
    tasks = []
    for _ in range(p["n_points"]):
        p0 = 0.01 + 0.98 * rng.next_unit()
        q0 = 0.01 + 0.98 * rng.next_unit()
        tasks.append((p0, q0, eps, payoff, p["k_max"], p["tol"]))
    workers = _thread_cap()
    if workers > 1:
        # parallel points, single-threaded ordered merge below
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(task) for task in tasks]
    counts = {"sweep.csv": _write_csv(
        out_dir / "sweep.csv", ["p0", "q0", "p_star", "q_star", "converged"], rows
    )}
    stragglers = sum(1 for row in rows if not row[4])
    if stragglers:
        return counts, f"{stragglers} of {len(rows)} sweep points did not converge"
    return counts, None


def _run_nplayer(config: RunConfig, out_dir: Path, seed: int):
    p = config.params
    eps_pairs = np.column_stack([p["eps1"], p["eps2"]])
    result = game_dynamics.iterate_n(
        np.asarray(p["p0"]), eps_pairs, p["k_max"], convergence_tol=p["tol"]
    )
    n = len(p["p0"])
    header = ["k"] + [f"p{i + 1}" for i in range(n)]
    rows = [(k, *row) for k, row in enumerate(result.trajectory)]
    counts = {"trajectory.csv": _write_csv(out_dir / "trajectory.csv", header, rows)}
    if not result.converged:
        return counts, f"iteration did not converge within k_max={p['k_max']}"
    return counts, None


def _zero_rate(x, y, theta):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_diffusion(theta):
    z = np.zeros_like(np.asarray(theta, dtype=float))
    return z, z, z


def _zero_advection(t, x, y, theta):
    z = np.zeros_like(np.asarray(x, dtype=float))
    return z, z, z


def _pde3d_model(p: dict) -> phenotype3d.PhenotypeModel:
    advection = {
        "plain": phenotype3d.default_advection,
        "theta": phenotype3d.theta_scaled_advection,
        "off": _zero_advection,
    }[p["advection"]]
    diffusion = phenotype3d.default_diffusion if p["diffusion"] == "default" else _zero_diffusion
    if p["reaction"] == "default":
        growth, death = phenotype3d.default_growth, phenotype3d.default_death
    else:
        growth, death = _zero_rate, _zero_rate
    return phenotype3d.PhenotypeModel(
        growth_rate=growth,
        death_rate=death,
        diffusion=diffusion,
        advection=advection,
        initial_radius=p["initial_radius"],
        initial_mass=p["initial_mass"],
    )


def _pde3d_fixed_dt(model, resolution, t_end, snapshot_every, dt):
    """Forced-dt variant of phenotype3d.run; CflViolation propagates."""
    state = phenotype3d.init_density(MaskedGrid3(*resolution), model)
    targets = phenotype3d._snapshot_times(t_end, snapshot_every)
    snapshots = [state]
    next_target = 1
    slack = 1e-12 * max(1.0, t_end)
    while state.time < t_end - slack:
        previous = state
        state = phenotype3d.step(state, model, min(dt, t_end - state.time))
        while next_target < len(targets) and targets[next_target] <= state.time + slack:
            near = targets[next_target]
            pick = previous if abs(previous.time - near) < abs(state.time - near) else state
            snapshots.append(pick)
            next_target += 1
    if snapshots[-1] is not state:
        snapshots.append(state)
    return snapshots


def _run_pde3d(config: RunConfig, out_dir: Path, seed: int):
    p = config.params
    model = _pde3d_model(p)
    resolution = (p["resolution_x"], p["resolution_y"], p["resolution_theta"])
    if p["dt"] is not None:
        snapshots = _pde3d_fixed_dt(model, resolution, p["t_end"], p["snapshot_every"], p["dt"])
    else:
        snapshots = phenotype3d.run(
            model,
            resolution=resolution,
            t_end=p["t_end"],
            snapshot_every=p["snapshot_every"],
            dt_max=p["dt_max"],
        )
    counts = {}
    summary_rows = []
    for index, snap in enumerate(snapshots):
        grid = snap.field.grid
        active = grid.active
        x, y, theta = grid.center_meshes
        rows = zip(
            np.full(int(active.sum()), snap.time),
            x[active], y[active], theta[active], snap.field.values[active],
        )
        name = f"snapshot_{index:04d}.csv"
        counts[name] = _write_csv(out_dir / name, ["t", "x", "y", "theta", "n"], rows)
        rec = phenotype3d.summarize(snap)
        summary_rows.append((
            snap.time, rec.rho, rec.mean_x, rec.mean_y, rec.mean_theta,
            rec.var_x, rec.var_y, rec.var_theta, rec.n_modes,
        ))
    counts["summary.csv"] = _write_csv(
        out_dir / "summary.csv",
        ["t", "rho", "mean_x", "mean_y", "mean_theta", "var_x", "var_y", "var_theta", "n_modes"],
        summary_rows,
    )
    return counts, None


def _coop_model(p: dict) -> coop_structured.CoopModel:
    def quadratic(c2, c1, c0):
        def rate(prob):
            prob = np.asarray(prob, dtype=float)
            return c2 * prob * prob + c1 * prob + c0

        return rate

    def uniform(level):
        def density(prob):
            return np.full_like(np.asarray(prob, dtype=float), level)

        return density

    return coop_structured.CoopModel(
        r_A=quadratic(p["rA2"], p["rA1"], p["rA0"]),
        r_B=quadratic(p["rB2"], p["rB1"], p["rB0"]),
        n0_A=uniform(p["n0A"]),
        n0_B=uniform(p["n0B"]),
        gamma_A=p["gammaA"],
        gamma_B=p["gammaB"],
        eps_A=p["epsA"],
        eps_B=p["epsB"],
        b=p["b"],
        c=p["c"],
    )


def _fate_lines(report: coop_structured.FateReport) -> list[str]:
    lines = []
    for label, fate in (("A", report.pop_A), ("B", report.pop_B)):
        lines.append(f"{label}.verdict = {fate.verdict}")
        lines.append(f"{label}.fitness = {_fmt(fate.fitness)}")
        lines.append(f"{label}.p_star = {_fmt(fate.p_star)}")
        lines.append(f"{label}.r_star = {_fmt(fate.r_star)}")
        if fate.delta is not None:
            lines.append(f"{label}.delta = {_fmt(fate.delta)}")
            spans = ";".join(f"{_fmt(lo)}..{_fmt(hi)}" for lo, hi in fate.interval)
            lines.append(f"{label}.interval = {spans}")
    return lines


def _consistency_lines(consistency: dict) -> list[str]:
    lines = []
    for label in ("pop_A", "pop_B"):
        entry = consistency[label]
        for key in sorted(entry):
            value = entry[key]
            if value is None:
                text = "none"
            elif isinstance(value, str):
                text = value
            else:
                text = _fmt(value)
            lines.append(f"{label}.{key} = {text}")
    return lines


def _run_coop(config: RunConfig, out_dir: Path, seed: int):
    p = config.params
    result = coop_structured.run(
        _coop_model(p),
        t_end=p["t_end"],
        snapshot_every=p["snapshot_every"],
        n_cells=p["n_cells"],
        dt_max=p["dt_max"],
    )
    counts = {}
    for index, snap in enumerate(result.snapshots):
        centers = snap.n_A.grid.centers
        rows = zip(
            np.full(centers.shape, snap.time), centers, snap.n_A.values, snap.n_B.values
        )
        name = f"snapshot_{index:04d}.csv"
        counts[name] = _write_csv(out_dir / name, ["t", "p", "n_A", "n_B"], rows)
    counts["series.csv"] = _write_csv(
        out_dir / "series.csv",
        ["t", "rho_A", "rho_B", "ptilde_A", "ptilde_B", "E_A", "E_B"],
        result.series,
    )
    lines = [f"halted = {result.halted or 'none'}"]
    if result.fate is None:
        lines.append("fate = unavailable")
    else:
        lines.extend(_fate_lines(result.fate))
        lines.extend(_consistency_lines(result.consistency))
    counts["fate.txt"] = _write_lines(out_dir / "fate.txt", lines)
    return counts, None


def _classify_schema(text: str) -> str:
    keys = {key for _, key, _ in _raw_entries(text) if key}
    return "classify-game" if "eps11" in keys else "classify-coop"


def _run_classify(config: RunConfig, out_dir: Path, seed: int):
    p = config.params
    if config.model == "classify-game":
        report = game_dynamics.classify(_game_params(p), balance_tol=p["balance_tol"])
        lines = [
            "model = game",
            f"e = {_fmt(report.e)}",
            f"regime = {report.regime}",
        ]
        for index, fp in enumerate(report.fixed_points):
            lines.append(f"fp{index}.p = {_fmt(fp.point[0])}")
            lines.append(f"fp{index}.q = {_fmt(fp.point[1])}")
            lines.append(f"fp{index}.lambda1 = {_fmt(fp.eigenvalues[0])}")
            lines.append(f"fp{index}.lambda2 = {_fmt(fp.eigenvalues[1])}")
            lines.append(f"fp{index}.stable = {_fmt(fp.stable)}")
    else:
        report = coop_structured.classify_fate(_coop_model(p), scan_points=p["scan_points"])
        lines = ["model = coop"] + _fate_lines(report)
    sys.stdout.write("\n".join(lines) + "\n")
    counts = {"report.txt": _write_lines(out_dir / "report.txt", lines)}
    return counts, None


_RUNNERS = {
    "game": _run_game,
    "game-sweep": _run_game_sweep,
    "nplayer": _run_nplayer,
    "pde3d": _run_pde3d,
    "coop": _run_coop,
    "classify-game": _run_classify,
    "classify-coop": _run_classify,
}

_SUBCOMMANDS = ("game", "game-sweep", "nplayer", "pde3d", "coop", "classify")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopdyn",
        description="Simulations of phenotype divergence and reciprocity-driven cooperation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="flat key=value config file")
        cmd.add_argument("--out", default=".", help="output directory (created if absent)")
        cmd.add_argument("--seed", type=int, default=0, help="seed for randomized sweeps")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"BadValue: config: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1

    model = _classify_schema(text) if args.subcommand == "classify" else args.subcommand
    config, issues = parse_config(text, model)
    if issues:
        for issue in issues:
            print(str(issue), file=sys.stderr)
        return 1

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        counts, failure = _RUNNERS[model](config, out_dir, args.seed)
    except CoopdynError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _write_manifest(out_dir, counts)
    if failure:
        print(f"NonConvergence: {failure}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
