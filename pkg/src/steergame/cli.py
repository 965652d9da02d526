"""Batch command-line front end: parse a scenario, solve, write files.

Scenarios are YAML documents with explicit dimensions and three blocks
(system / boundary / weights, plus optional solver defaults); matrices can
be written as row-major nested lists or as the shorthands ``"I"``,
``"0.2*I"`` and ``"diag(a,b,...)"``. Outputs are CSV files plus a JSON
report and a generated matplotlib script that reads only the CSVs. Every
CSV starts with one ``#``-prefixed stamp line; file digests in the report
skip ``#`` lines, so identical scenario+seed runs yield identical digests.

Exit codes: 0 success (a certified-infeasible covariance target still
counts: it is reported, not raised), 1 scenario/input error, 2 solver
failure, 3 infeasible covariance target when ``--strict`` was passed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys as _sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy.linalg import expm

from . import cov_game, mean_game, model, montecarlo
from .cov_game import GainProfile

__version__ = "0.1.0"

COMMANDS = ("solve-unconstrained", "solve-constrained", "simulate", "all")


class ScenarioError(ValueError):
    """A scenario file is missing, malformed, or inconsistent."""


@dataclass
class Scenario:
    """Parsed problem instance plus solver defaults."""

    name: str
    system: model.StageSystem
    boundary: model.GaussianBoundary
    weights: model.CostWeights
    epsilon: float = cov_game.EPS_DEFAULT
    max_iter: int = cov_game.MAX_ITER_DEFAULT
    seed: int = 0
    samples: int = 100


@dataclass
class RunReport:
    """What a run checked, solved, and wrote."""

    scenario: str
    command: str
    checks: dict
    summary: dict
    outputs: dict = field(default_factory=dict)
    covariance_feasible: bool | None = None


def discretize_continuous(Ac, Bc, Cc, dt: float, alpha: float = 1.0,
                          noise_input=None):
    """Zero-order-hold discretization of the continuous two-input plant.

    Returns (A, B, C, D) with A = exp(Ac dt), B = Psi Bc, C = Psi Cc and
    D = alpha Psi E, where Psi is the integral of exp(Ac tau) over one step
    (computed through the augmented-matrix exponential) and E routes the
    white-noise channels into the states (identity when not given).
    """
    Ac = np.asarray(Ac, dtype=float)
    Bc = np.asarray(Bc, dtype=float)
    Cc = np.asarray(Cc, dtype=float)
    if dt <= 0:
        raise ScenarioError("dt must be positive")
    n = Ac.shape[0]
    if Ac.shape != (n, n):
        raise ScenarioError(f"Ac must be square, got {Ac.shape}")
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = Ac
    aug[:n, n:] = np.eye(n)
    E = expm(aug * dt)
    A = E[:n, :n]
    Psi = E[:n, n:]
    chan = np.eye(n) if noise_input is None else np.asarray(noise_input, dtype=float)
    if chan.shape[0] != n:
        raise ScenarioError(f"noise_input must have {n} rows, got {chan.shape[0]}")
    return A, Psi @ Bc, Psi @ Cc, alpha * (Psi @ chan)


_DIAG_RE = re.compile(r"^diag\((.*)\)$")
_SCALED_I_RE = re.compile(r"^([^*]+)\*\s*I$")


def _parse_matrix(spec, rows: int, cols: int, where: str) -> np.ndarray:
    """Resolve a matrix spec (nested lists, scalar, or shorthand string)."""
    if isinstance(spec, str):
        text = spec.replace(" ", "")
        try:
            # Bare numbers can reach here as strings (YAML floats without a
            # signed exponent, for instance).
            return _parse_matrix(float(text), rows, cols, where)
        except ValueError:
            pass
        if text == "I":
            if rows != cols:
                raise ScenarioError(f"{where}: identity shorthand needs a square target")
            return np.eye(rows)
        m = _SCALED_I_RE.match(text)
        if m:
            if rows != cols:
                raise ScenarioError(f"{where}: identity shorthand needs a square target")
            try:
                return float(m.group(1)) * np.eye(rows)
            except ValueError:
                raise ScenarioError(f"{where}: bad scalar in {spec!r}") from None
        m = _DIAG_RE.match(text)
        if m:
            if rows != cols:
                raise ScenarioError(f"{where}: diag shorthand needs a square target")
            try:
                vals = [float(v) for v in m.group(1).split(",")]
            except ValueError:
                raise ScenarioError(f"{where}: bad entries in {spec!r}") from None
            if len(vals) != rows:
                raise ScenarioError(
                    f"{where}: diag needs {rows} entries, got {len(vals)}")
            return np.diag(vals)
        raise ScenarioError(f"{where}: unrecognized matrix shorthand {spec!r}")
    if isinstance(spec, (int, float)):
        if (rows, cols) != (1, 1):
            raise ScenarioError(f"{where}: scalar given but target is {rows}x{cols}")
        return np.array([[float(spec)]])
    try:
        arr = np.asarray(spec, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: not a numeric matrix") from None
    if arr.shape != (rows, cols):
        raise ScenarioError(f"{where}: shape {arr.shape}, expected {(rows, cols)}")
    return arr


def _parse_vector(spec, size: int, where: str) -> np.ndarray:
    try:
        arr = np.asarray(spec, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: not a numeric vector") from None
    if arr.size != size:
        raise ScenarioError(f"{where}: length {arr.size}, expected {size}")
    return arr


def _is_matrix_literal(spec) -> bool:
    return (isinstance(spec, list) and spec
            and all(isinstance(row, list) for row in spec))


def _parse_stage_specs(spec, count: int, rows: int, cols: int, where: str) -> list:
    """One matrix spec applied to all stages, or a list of per-stage specs."""
    if isinstance(spec, list) and not _is_matrix_literal(spec):
        if len(spec) != count:
            raise ScenarioError(f"{where}: needs {count} per-stage entries, got {len(spec)}")
        return [_parse_matrix(s, rows, cols, f"{where}[{k}]") for k, s in enumerate(spec)]
    M = _parse_matrix(spec, rows, cols, where)
    return [M.copy() for _ in range(count)]


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ScenarioError(f"{where}.{key} is required")
    return section[key]


def _int_field(section: dict, key: str, where: str, default=None, minimum=None) -> int:
    if key not in section:
        if default is None:
            raise ScenarioError(f"{where}.{key} is required")
        return default
    val = section[key]
    if not isinstance(val, int) or isinstance(val, bool):
        raise ScenarioError(f"{where}.{key} must be an integer")
    if minimum is not None and val < minimum:
        raise ScenarioError(f"{where}.{key} must be >= {minimum}")
    return val


def parse_scenario(path) -> Scenario:
    """Load and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: YAML parse error: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")

    name = doc.get("name", path.stem)
    sysd = doc.get("system")
    if not isinstance(sysd, dict):
        raise ScenarioError("system section is required")
    n = _int_field(sysd, "n", "system", minimum=1)
    m = _int_field(sysd, "m", "system", minimum=1)
    l = _int_field(sysd, "l", "system", minimum=1)
    r = _int_field(sysd, "r", "system", minimum=1)
    N = _int_field(sysd, "N", "system", minimum=1)
    mode = sysd.get("mode", "lti")

    if mode == "lti":
        A = _parse_matrix(_require(sysd, "A", "system"), n, n, "system.A")
        B = _parse_matrix(_require(sysd, "B", "system"), n, m, "system.B")
        C = _parse_matrix(_require(sysd, "C", "system"), n, l, "system.C")
        D = _parse_matrix(_require(sysd, "D", "system"), n, r, "system.D")
        stage_sys = model.StageSystem.from_lti(A, B, C, D, N)
    elif mode == "ltv":
        stage_sys = model.StageSystem(
            A=_parse_stage_specs(_require(sysd, "A", "system"), N, n, n, "system.A"),
            B=_parse_stage_specs(_require(sysd, "B", "system"), N, n, m, "system.B"),
            C=_parse_stage_specs(_require(sysd, "C", "system"), N, n, l, "system.C"),
            D=_parse_stage_specs(_require(sysd, "D", "system"), N, n, r, "system.D"),
        )
    elif mode == "continuous":
        Ac = _parse_matrix(_require(sysd, "Ac", "system"), n, n, "system.Ac")
        Bc = _parse_matrix(_require(sysd, "Bc", "system"), n, m, "system.Bc")
        Cc = _parse_matrix(_require(sysd, "Cc", "system"), n, l, "system.Cc")
        dt = sysd.get("dt")
        if not isinstance(dt, (int, float)) or dt <= 0:
            raise ScenarioError("system.dt must be a positive number")
        alpha = sysd.get("alpha")
        if not isinstance(alpha, (int, float)):
            raise ScenarioError("system.alpha is required for continuous mode")
        chan = sysd.get("noise_input")
        if chan is not None:
            chan = _parse_matrix(chan, n, r, "system.noise_input")
        elif r != n:
            raise ScenarioError("system.noise_input is required when r != n")
        A, B, C, D = discretize_continuous(Ac, Bc, Cc, float(dt), float(alpha), chan)
        stage_sys = model.StageSystem.from_lti(A, B, C, D, N)
    else:
        raise ScenarioError(f"system.mode must be lti, ltv, or continuous, got {mode!r}")

    bd = doc.get("boundary")
    if not isinstance(bd, dict):
        raise ScenarioError("boundary section is required")
    try:
        boundary = model.GaussianBoundary(
            mu0=_parse_vector(_require(bd, "mu0", "boundary"), n, "boundary.mu0"),
            Sigma0=_parse_matrix(_require(bd, "Sigma0", "boundary"), n, n, "boundary.Sigma0"),
            muN=_parse_vector(_require(bd, "muN", "boundary"), n, "boundary.muN"),
            SigmaN=_parse_matrix(_require(bd, "SigmaN", "boundary"), n, n, "boundary.SigmaN"),
        )
    except (ValueError, model.DimensionError) as exc:
        raise ScenarioError(f"boundary: {exc}") from None

    wd = doc.get("weights")
    if not isinstance(wd, dict):
        raise ScenarioError("weights section is required")
    Qspec = _require(wd, "Q", "weights")
    Q_list = (_parse_stage_specs(Qspec, len(Qspec), n, n, "weights.Q")
              if isinstance(Qspec, list) and not _is_matrix_literal(Qspec)
              else _parse_stage_specs(Qspec, N, n, n, "weights.Q"))
    if len(Q_list) not in (N, N + 1):
        raise ScenarioError(f"weights.Q needs {N} or {N + 1} stages, got {len(Q_list)}")
    try:
        weights = model.CostWeights(
            Q=Q_list,
            R=_parse_stage_specs(_require(wd, "R", "weights"), N, m, m, "weights.R"),
            S=_parse_stage_specs(_require(wd, "S", "weights"), N, l, l, "weights.S"),
        )
    except (ValueError, model.DimensionError) as exc:
        raise ScenarioError(f"weights: {exc}") from None

    sv = doc.get("solver", {})
    if not isinstance(sv, dict):
        raise ScenarioError("solver section must be a mapping")
    epsilon = sv.get("epsilon", cov_game.EPS_DEFAULT)
    if not isinstance(epsilon, (int, float)) or epsilon <= 0:
        raise ScenarioError("solver.epsilon must be a positive number")
    return Scenario(
        name=str(name),
        system=stage_sys,
        boundary=boundary,
        weights=weights,
        epsilon=float(epsilon),
        max_iter=_int_field(sv, "max_iter", "solver", default=cov_game.MAX_ITER_DEFAULT,
                            minimum=1),
        seed=_int_field(sv, "seed", "solver", default=0, minimum=0),
        samples=_int_field(sv, "samples", "solver", default=100, minimum=1),
    )


def bundled_scenarios() -> dict[str, Path]:
    """Scenario fixtures shipped inside the package."""
    base = resources.files("steergame") / "scenarios"
    return {p.name[:-5]: Path(str(p)) for p in base.iterdir() if p.name.endswith(".yaml")}


def resolve_scenario(arg: str) -> Path:
    """Accept either a filesystem path or a bundled scenario name."""
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if arg in bundled:
        return bundled[arg]
    raise ScenarioError(
        f"scenario {arg!r} is neither a file nor a bundled name "
        f"(bundled: {', '.join(sorted(bundled))})"
    )


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(outdir: Path, fname: str, columns: list[str], rows) -> Path:
    path = outdir / fname
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    lines = [f"# steergame {__version__} generated {stamp}"]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _digest(path: Path) -> str:
    """sha256 over content lines, skipping '#'-prefixed stamp/comment lines."""
    h = hashlib.sha256()
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            continue
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def _mean_rows(traj: model.MeanTrajectory):
    return [[k] + list(traj.states[k]) for k in range(traj.states.shape[0])]


def _input_rows(sys: model.StageSystem, Ubar, Vbar):
    U = np.asarray(Ubar).reshape(sys.N, sys.m)
    V = np.asarray(Vbar).reshape(sys.N, sys.l)
    return [[k] + list(U[k]) + list(V[k]) for k in range(sys.N)]


def _cov_rows(covs: np.ndarray):
    return [[k] + list(covs[k].ravel()) for k in range(covs.shape[0])]


def _state_cols(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def _cov_cols(n: int) -> list[str]:
    return [f"cov_{i + 1}_{j + 1}" for i in range(n) for j in range(n)]


def run(scenario: Scenario, command: str, outdir, samples: int | None = None,
        seed: int | None = None, epsilon: float | None = None,
        max_iter: int | None = None) -> RunReport:
    """Execute one CLI command: checks, solves, and file emission."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    samples = scenario.samples if samples is None else samples
    seed = scenario.seed if seed is None else seed
    epsilon = scenario.epsilon if epsilon is None else epsilon
    max_iter = scenario.max_iter if max_iter is None else max_iter

    sys_l = model.lift(scenario.system)
    w = scenario.weights
    b = scenario.boundary
    Sigma_s = model.noise_state_cov(sys_l, b.Sigma0)

    concave, concave_eig = mean_game.check_mean_concavity(sys_l, w)
    curv = cov_game.check_cov_curvature(sys_l, w, Sigma_s)
    relc = mean_game.relative_controllability(sys_l, w)
    rank_ok = mean_game.check_rank_condition(sys_l, w, b.mu0, b.muN)
    checks = {
        "mean_concavity": bool(concave),
        "mean_concavity_min_eig": concave_eig,
        "rank_G": int(relc.rank),
        "rank_G_full": bool(relc.rank == sys_l.n),
        "rank_condition": bool(rank_ok),
        "cov_curvature": {
            "convex_in_K": curv.convex_in_K,
            "concave_in_L": curv.concave_in_L,
            "sigma_s_singular": curv.sigma_s_singular,
            "structured_convex_in_K": curv.structured_convex_in_K,
            "structured_concave_in_L": curv.structured_concave_in_L,
        },
        "ccsg_feasible": None,
    }

    n = sys_l.n
    summary: dict = {}
    written: list[Path] = []
    report = RunReport(scenario=scenario.name, command=command, checks=checks,
                       summary=summary)

    do_unconstrained = command in ("solve-unconstrained", "all")
    do_constrained = command in ("solve-constrained", "simulate", "all")

    if do_unconstrained:
        saddle = mean_game.solve_umsg(sys_l, w, b.mu0)
        traj_u = model.mean_trajectory(sys_l, b.mu0, saddle.Ubar, saddle.Vbar)
        station = cov_game.solve_ucsg_stationary(sys_l, w, Sigma_s)
        covs_u = cov_game.covariance_trajectory(sys_l, station.K, station.L, Sigma_s)
        summary["mean_saddle"] = {
            "value": saddle.value,
            "grad_norm_u": saddle.grad_norms[0],
            "grad_norm_v": saddle.grad_norms[1],
            "terminal_mean": list(traj_u.states[-1]),
        }
        summary["deviation_stationary"] = {
            "value": station.value,
            "kkt_residual": station.kkt_residual,
        }
        written.append(_write_csv(outdir, "mean_unconstrained.csv",
                                  ["step"] + _state_cols(n), _mean_rows(traj_u)))
        written.append(_write_csv(
            outdir, "inputs_unconstrained.csv",
            ["step"] + [f"u{i + 1}" for i in range(sys_l.m)]
            + [f"v{i + 1}" for i in range(sys_l.l)],
            _input_rows(scenario.system, saddle.Ubar, saddle.Vbar)))
        written.append(_write_csv(outdir, "cov_unconstrained.csv",
                                  ["step"] + _cov_cols(n), _cov_rows(covs_u)))

    gains = None
    mean_c = None
    mean_inputs = None
    if do_constrained:
        cmsg = None
        try:
            cmsg = mean_game.solve_cmsg_upper(sys_l, w, b)
        except mean_game.RankConditionError as exc:
            # The terminal-mean pin is unreachable; that is a reported
            # verdict (rank_condition above), not a run abort. The
            # covariance game is independent and still runs.
            summary["constrained_mean"] = {"error": str(exc)}
        if cmsg is not None:
            mean_inputs = (cmsg.Ubar_c, cmsg.Vbar_c)
            mean_c = model.mean_trajectory(sys_l, b.mu0, cmsg.Ubar_c, cmsg.Vbar_c)
            terminal_err = float(np.linalg.norm(mean_c.states[-1] - b.muN))
            summary["constrained_mean"] = {
                "terminal_error": terminal_err,
                "multiplier_norm": float(np.linalg.norm(cmsg.multiplier)),
                "warnings": list(cmsg.warnings),
            }
            written.append(_write_csv(outdir, "mean_constrained.csv",
                                      ["step"] + _state_cols(n), _mean_rows(mean_c)))
            written.append(_write_csv(
                outdir, "inputs_constrained.csv",
                ["step"] + [f"u{i + 1}" for i in range(sys_l.m)]
                + [f"v{i + 1}" for i in range(sys_l.l)],
                _input_rows(scenario.system, cmsg.Ubar_c, cmsg.Vbar_c)))
        trace = cov_game.jacobi_solve(sys_l, w, b, eps=epsilon, max_iter=max_iter,
                                      Sigma_s=Sigma_s)
        checks["ccsg_feasible"] = bool(trace.feasible)
        report.covariance_feasible = bool(trace.feasible)
        if trace.fallback is not None:
            gains = (trace.fallback.K, trace.fallback.L)
            summary["covariance_iteration"] = {
                "feasible": False,
                "min_constraint_norm": trace.constraint_norm,
                "fallback_value": trace.fallback.value,
            }
        else:
            gains = (trace.K, trace.L)
            summary["covariance_iteration"] = {
                "feasible": bool(trace.feasible),
                "converged": bool(trace.converged),
                "iterations": trace.iterations,
                "constraint_norm": trace.constraint_norm,
                "value": trace.iterates[-1][2],
                "final_eps_k": trace.eps_k[-1] if trace.eps_k else None,
                "final_eps_l": trace.eps_l[-1] if trace.eps_l else None,
            }
        covs_c = cov_game.covariance_trajectory(sys_l, gains[0], gains[1], Sigma_s)
        written.append(_write_csv(outdir, "cov_constrained.csv",
                                  ["step"] + _cov_cols(n), _cov_rows(covs_c)))
        conv_rows = [[i, trace.eps_k[i], trace.eps_l[i], trace.iterates[i + 1][2]]
                     for i in range(len(trace.eps_k))]
        written.append(_write_csv(outdir, "jacobi_convergence.csv",
                                  ["iteration", "eps_k", "eps_l", "J_sigma"], conv_rows))

    if command in ("simulate", "all"):
        if mean_inputs is None:
            # No reachable terminal-mean pin: simulate around the
            # unconstrained mean saddle instead.
            saddle_sim = mean_game.solve_umsg(sys_l, w, b.mu0)
            mean_inputs = (saddle_sim.Ubar, saddle_sim.Vbar)
            summary.setdefault("simulation_note",
                               "mean inputs from the unconstrained saddle")
        mean_c = model.mean_trajectory(sys_l, b.mu0, mean_inputs[0], mean_inputs[1])
        batch = montecarlo.rollout(scenario.system, b, mean_inputs[0], mean_inputs[1],
                                   gains[0], gains[1], samples=samples, seed=seed)
        moments = montecarlo.empirical_moments(batch, w)
        covs_c = cov_game.covariance_trajectory(sys_l, gains[0], gains[1], Sigma_s)
        mean_dev = np.abs(moments.mean - mean_c.states)
        mean_ratio = float(np.max(mean_dev / np.maximum(moments.stderr_mean, 1e-300)))
        cov_dev = np.abs(moments.cov - covs_c)
        cov_ratio = float(np.max(cov_dev / np.maximum(moments.stderr_cov, 1e-300)))
        summary["simulation"] = {
            "samples": samples,
            "seed": seed,
            "cost_estimate": moments.cost_estimate,
            "cost_stderr": moments.cost_stderr,
            "max_mean_error_in_stderr": mean_ratio,
            "max_cov_error_in_stderr": cov_ratio,
        }
        traj_rows = []
        keep = min(samples, 200)
        for s in range(keep):
            for k in range(sys_l.N + 1):
                traj_rows.append([s, k] + list(batch.states[s, k]))
        written.append(_write_csv(outdir, "trajectories.csv",
                                  ["sample", "step"] + _state_cols(n), traj_rows))
        mom_rows = []
        for k in range(sys_l.N + 1):
            mom_rows.append([k] + list(moments.mean[k]) + list(moments.cov[k].ravel())
                            + list(moments.stderr_mean[k])
                            + list(moments.stderr_cov[k].ravel()))
        written.append(_write_csv(
            outdir, "moments.csv",
            ["step"] + [f"mean_{i + 1}" for i in range(n)] + _cov_cols(n)
            + [f"stderr_mean_{i + 1}" for i in range(n)]
            + [f"stderr_{c}" for c in _cov_cols(n)],
            mom_rows))
        if n >= 2:  # ellipses need a 2-D marginal
            ell_rows = []
            for label, mu, cov in (
                ("initial", b.mu0, b.Sigma0),
                ("target", b.muN, b.SigmaN),
                ("terminal", mean_c.states[-1], covs_c[-1]),
            ):
                pts = montecarlo.ellipse_points(mu, cov, dims=(0, 1), nsigma=3.0)
                for idx, (x, y) in enumerate(pts):
                    ell_rows.append([label, idx, x, y])
            path = outdir / "ellipses.csv"
            stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
            lines = [f"# steergame {__version__} generated {stamp}",
                     "label,point,x,y"]
            for row in ell_rows:
                lines.append(f"{row[0]},{row[1]},{_fmt(row[2])},{_fmt(row[3])}")
            path.write_text("\n".join(lines) + "\n")
            written.append(path)

    plot_path = outdir / "plot_results.py"
    plot_path.write_text(_PLOT_SCRIPT)
    written.append(plot_path)

    report.outputs = {p.name: _digest(p) for p in written}
    report_payload = {
        "scenario": report.scenario,
        "command": report.command,
        "generated": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "checks": report.checks,
        "summary": report.summary,
        "covariance_feasible": report.covariance_feasible,
        "outputs": report.outputs,
    }
    (outdir / "report.json").write_text(json.dumps(report_payload, indent=2) + "\n")
    return report


_PLOT_SCRIPT = '''#!/usr/bin/env python3
# Generated by steergame; reads only the CSV files sitting next to it.
"""Plot steering results: mean paths, covariance ellipses, convergence."""

import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(fname):
    path = os.path.join(HERE, fname)
    if not os.path.exists(path):
        return None, None
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    return header, [row for row in reader]


def main():
    made = []
    header, rows = load("mean_constrained.csv")
    if rows:
        fig, ax = plt.subplots(figsize=(6, 5))
        th, trows = load("trajectories.csv")
        if trows:
            by_sample = {}
            for row in trows:
                by_sample.setdefault(row[0], []).append((float(row[2]), float(row[3])))
            for pts in by_sample.values():
                ax.plot(*zip(*pts), color="0.8", lw=0.5, zorder=1)
        eh, erows = load("ellipses.csv")
        if erows:
            by_label = {}
            for row in erows:
                by_label.setdefault(row[0], []).append((float(row[2]), float(row[3])))
            colors = {"initial": "tab:blue", "target": "tab:red", "terminal": "tab:green"}
            for label, pts in by_label.items():
                ax.plot(*zip(*pts), color=colors.get(label, "k"), label=label + " 3-sigma")
        xs = [float(r[1]) for r in rows]
        ys = [float(r[2]) for r in rows]
        ax.plot(xs, ys, "k.-", lw=1.5, zorder=3, label="planned mean")
        hu, urows = load("mean_unconstrained.csv")
        if urows:
            ax.plot([float(r[1]) for r in urows], [float(r[2]) for r in urows],
                    "b--", lw=1.0, zorder=2, label="unconstrained mean")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.legend(fontsize=8)
        ax.set_title("state plane")
        fig.tight_layout()
        out = os.path.join(HERE, "plane.png")
        fig.savefig(out, dpi=150)
        made.append(out)

    header, rows = load("jacobi_convergence.csv")
    if rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        its = [int(r[0]) for r in rows]
        ax.semilogy(its, [max(float(r[1]), 1e-300) for r in rows], "o-", label="eps_K")
        ax.semilogy(its, [max(float(r[2]), 1e-300) for r in rows], "s-", label="eps_L")
        ax.set_xlabel("iteration")
        ax.set_ylabel("gain update (Frobenius)")
        ax.legend()
        ax.set_title("best-response convergence")
        fig.tight_layout()
        out = os.path.join(HERE, "convergence.png")
        fig.savefig(out, dpi=150)
        made.append(out)

    header, rows = load("cov_constrained.csv")
    if rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        steps = [int(r[0]) for r in rows]
        ncols = len(rows[0]) - 1
        n = int(round(ncols ** 0.5))
        traces = [sum(float(r[1 + i * n + i]) for i in range(n)) for r in rows]
        ax.plot(steps, traces, "o-")
        ax.set_xlabel("step")
        ax.set_ylabel("trace of covariance")
        ax.set_title("covariance trace")
        fig.tight_layout()
        out = os.path.join(HERE, "cov_trace.png")
        fig.savefig(out, dpi=150)
        made.append(out)

    print("wrote: " + ", ".join(made) if made else "no CSV inputs found")
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="steergame",
        description="Steer a Gaussian through a two-player LQ game and "
                    "write CSV results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, help_text in (
        ("solve-unconstrained", "mean saddle and deviation stationary point, no terminal pin"),
        ("solve-constrained", "terminal-pinned mean and covariance iteration"),
        ("simulate", "solve-constrained plus Monte Carlo rollouts"),
        ("all", "everything above"),
    ):
        p = sub.add_parser(cmd, help=help_text)
        p.add_argument("--scenario", required=True,
                       help="scenario file path or bundled name")
        p.add_argument("--outdir", required=True, help="output directory")
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--strict", action="store_true",
                       help="exit 3 when the covariance target is infeasible")
    args = parser.parse_args(argv)

    try:
        scenario = parse_scenario(resolve_scenario(args.scenario))
    except ScenarioError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1

    try:
        report = run(scenario, args.command, args.outdir, samples=args.samples,
                     seed=args.seed, epsilon=args.epsilon, max_iter=args.max_iter)
    except (mean_game.MeanConcavityError, mean_game.RankConditionError,
            cov_game.CovCurvatureError) as exc:
        print(f"solver error: {exc}", file=_sys.stderr)
        return 2
    except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        print(f"solver error: {exc}", file=_sys.stderr)
        return 2

    infeasible = False
    if report.covariance_feasible is False:
        infeasible = True
        print(f"covariance target infeasible for scenario {scenario.name}; "
              "fallback gains reported")
    if args.command != "solve-unconstrained" and not report.checks["rank_condition"]:
        infeasible = True
        print(f"terminal mean target unreachable for scenario {scenario.name}")
    if infeasible and args.strict:
        return 3
    return 0


if __name__ == "__main__":
    _sys.exit(main())
