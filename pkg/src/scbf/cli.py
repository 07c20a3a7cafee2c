"""Command-line entry point: ``scbf <command> [--config FILE] [--out DIR]``.

Each command writes a JSON report (schema version, resolved config and a
verdict block) and, where there is tabular data, CSV files.  Exit status is
0 on pass, 1 when a check fails, 2 for configuration errors and 3 when the
integrator blows up.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from .config import SCHEMA_VERSION, ConfigError, RunConfig, load_config
from .control import dpp_residual, estimate_value
from .dynamics import (
    CSV_COLUMNS,
    continuous_dependence_check,
    energy_monitor,
    ensemble_energy_check,
    simulate_trajectory,
    write_trajectory_csv,
)
from .errors import IntegrationBlowupError, SCBFError, StepSizeError
from .noise import CovarianceSpec, path_stream, sample_increments, validate_hypothesis_trQ1
from .operators import (
    C_coeffs,
    absorption_C,
    absorption_C_gateaux,
    b_estimate_report,
    b_stokes_estimate_report,
    bilinear_B,
    check_monotonicity_C,
    lr_power,
    torus_equality_terms,
)
from .spectral_core import (
    VelocityField,
    agmon_check,
    embedding_ratio,
    random_field,
    save_snapshot,
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3
# Stream tag shared by `simulate` and `value`, so path p sees the same noise in both.
PATH_TAG = "path"


class Check:
    """Running maximum of a violation measure against a tolerance."""

    def __init__(self, tol: float | None):
        self.tol = tol
        self.worst = 0.0

    def add(self, value: float) -> None:
        self.worst = max(self.worst, float(value))

    def as_dict(self) -> dict:
        out = {"max_violation": self.worst, "tolerance": self.tol}
        out["passed"] = True if self.tol is None else bool(self.worst <= self.tol)
        return out


def _rel(a: float, b: float) -> float:
    s = max(abs(a), abs(b))
    return abs(a - b) / s if s > 0 else 0.0


# -- operator suite -----------------------------------------------------------


def operator_suite(cfg: RunConfig) -> dict:
    """Seeded ensemble of identity, inequality and derivative checks on the configured grid."""
    grid = cfg.spectral_grid()
    params = cfg.physical_params()
    r = params.r
    rng = np.random.default_rng(cfg.seeds.master_seed)
    checks = {
        "skew_B_uvv": Check(1e-9),
        "antisym_B_uvw": Check(1e-9),
        "C_pairing": Check(1e-8),
        "C_monotonicity": Check(1e-9),
        "B_difference_estimate": Check(1e-9),
        "B_stokes_estimate": Check(1e-9),
        "torus_equality": Check(1e-6),
        "gateaux_fd": Check(1e-5),
        "agmon_ratio": Check(None),
        "embedding_ratio": Check(None),
    }
    width = grid.n * 5 / 64
    mean = np.zeros(grid.dim)
    mean[0] = 3.0
    for _ in range(cfg.verify.n_samples):
        u, v, w = (random_field(grid, rng, h_norm=float(rng.uniform(0.5, 2.0))) for _ in range(3))
        buv = bilinear_B(u, v)
        sc = float(np.sqrt(grid.norm2(buv.coeffs)) * v.h_norm())
        checks["skew_B_uvv"].add(abs(buv.inner(v)) / sc if sc else 0.0)
        checks["antisym_B_uvw"].add(_rel(buv.inner(w), -bilinear_B(u, w).inner(v)))
        cu = float(grid.inner(C_coeffs(grid, u.coeffs, r), u.coeffs))
        checks["C_pairing"].add(_rel(cu, float(lr_power(grid, u.coeffs, r))))
        checks["C_monotonicity"].add(max(0.0, -check_monotonicity_C(u, v, params, w).min_relative_slack))
        checks["B_difference_estimate"].add(max(0.0, -b_estimate_report(u, v, params).relative_slack))
        checks["B_stokes_estimate"].add(max(0.0, -b_stokes_estimate_report(u, params).relative_slack))
        smooth = random_field(grid, rng, width=width) + VelocityField.constant(grid, mean)
        checks["torus_equality"].add(torus_equality_terms(smooth, params).residual)
        h = 1e-5
        d = v * (1.0 / v.h_norm())
        fd = (absorption_C(smooth + d * h, params) - absorption_C(smooth - d * h, params)) * (0.5 / h)
        ex = absorption_C_gateaux(smooth, d, params)
        checks["gateaux_fd"].add((fd - ex).h_norm() / ex.h_norm())
        checks["agmon_ratio"].add(agmon_check(u))
        checks["embedding_ratio"].add(embedding_ratio(u, r, 2.0 if grid.dim == 2 else 1.5))
    out = {k: c.as_dict() for k, c in checks.items()}
    return {"passed": all(c["passed"] for c in out.values()), "checks": out}


# -- commands -------------------------------------------------------------------


def cmd_verify_operators(cfg: RunConfig, out: Path) -> dict:
    return operator_suite(cfg)


def _forcing_field(cfg: RunConfig):
    if cfg.simulate.forcing < 0:
        return None, 0.0
    grid = cfg.spectral_grid()
    a = cfg.control_set(grid).coeffs(cfg.simulate.forcing)
    f = VelocityField(grid, cfg.cost_spec().forcing(0.0, a, grid), check=False)
    return f, math.sqrt(f.h_norm() ** 2 + float(grid.norm2(f.coeffs, grid.stokes_eigenvalues)))


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    """Per-path norm CSVs plus an aggregate moments CSV (mean and max over paths)."""
    grid = cfg.spectral_grid()
    tcfg = cfg.trajectory_config()
    y0 = cfg.initial_field(grid)
    forcing, _ = _forcing_field(cfg)
    records, error = [], None
    for p in range(cfg.simulate.n_paths):
        stream = path_stream(cfg.seeds.master_seed, p, PATH_TAG)
        try:
            rec = simulate_trajectory(y0, tcfg, forcing, stream, path_seed=p)
        except (IntegrationBlowupError, StepSizeError) as exc:
            error = {"path": p, "time": exc.time, "message": str(exc)}
            break
        records.append(rec)
        if "csv" in cfg.output.formats:
            write_trajectory_csv(out / f"path_{p:04d}.csv", rec)
        if "snapshot" in cfg.output.formats:
            save_snapshot(out / f"final_{p:04d}.scbf", rec.final_state)
    if records and "csv" in cfg.output.formats:
        cols = CSV_COLUMNS[1:]
        data = np.array([[[getattr(n, c) for c in cols] for n in rec.norm_series] for rec in records])
        _write_csv(
            out / "moments.csv",
            ["time"] + [f"{s}_{c}" for c in cols for s in ("mean", "max")],
            [
                [t] + [v for j in range(len(cols)) for v in (data[:, i, j].mean(), data[:, i, j].max())]
                for i, t in enumerate(records[0].times)
            ],
        )
    verdict = {"passed": error is None, "paths_completed": len(records)}
    if error is not None:
        verdict["error"] = error
    return verdict


def cmd_energy_report(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.spectral_grid()
    y0 = cfg.initial_field(grid)
    det_cfg = cfg.trajectory_config()
    quiet = det_cfg.replace(cov=CovarianceSpec(det_cfg.cov.decay_s, 0.0))
    det = simulate_trajectory(y0, quiet, None, None, track_energy=True)
    rep = energy_monitor(det, det_cfg.params)
    forcing, bound = _forcing_field(cfg)
    ens = ensemble_energy_check(y0, cfg.trajectory_config(), cfg.energy.n_paths, cfg.seeds.master_seed,
                                forcing, bound)
    if "csv" in cfg.output.formats:
        _write_csv(out / "energy.csv", ["time", "lhs_mean", "lhs_se", "rhs"],
                   zip(ens.times, ens.lhs, ens.lhs_se, ens.rhs))
    idres = max(rep.max_identity_residual, ens.max_identity_residual)
    return {
        "passed": bool(rep.monotone_decay and ens.holds and idres <= 1e-10),
        "deterministic_monotone_decay": rep.monotone_decay,
        "ensemble_inequality_holds": ens.holds,
        "ensemble_margin_in_se": ens.margin_in_se,
        "energy_constant": ens.constant,
        "max_identity_residual": idres,
        "drift_mean": ens.drift_mean,
        "drift_se": ens.drift_se,
    }


def _child_seed(master: int, i: int) -> int:
    return int(np.random.SeedSequence([master, i]).generate_state(1)[0])


def cmd_ctsdep(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.spectral_grid()
    tcfg = cfg.trajectory_config()
    y0a = cfg.initial_field(grid)
    forcing, _ = _forcing_field(cfg)
    rows, worst, rho = [], 0.0, 0.0
    for i in range(cfg.ctsdep.n_seeds):
        seed = _child_seed(cfg.seeds.master_seed, i)
        y0b = y0a + random_field(grid, np.random.default_rng(seed), h_norm=cfg.ctsdep.perturbation)
        rep = continuous_dependence_check(y0a, y0b, tcfg, forcing, seed)
        rho = rep.varrho
        worst = max(worst, rep.max_ratio)
        rows.extend((i, t, d, b) for t, d, b in zip(rep.times, rep.diff2, rep.bound))
    if "csv" in cfg.output.formats:
        _write_csv(out / "ctsdep.csv", ["seed_index", "time", "diff2", "bound"], rows)
    return {"passed": worst <= 1.0, "max_ratio": worst, "varrho": rho}


def _value_setup(cfg: RunConfig):
    grid = cfg.spectral_grid()
    ctrl = cfg.control_set(grid)
    sclass = cfg.strategy_class(len(ctrl))
    return grid, ctrl, sclass


def cmd_value(cfg: RunConfig, out: Path) -> dict:
    grid, ctrl, sclass = _value_setup(cfg)
    est = estimate_value(cfg.time.t0, cfg.initial_field(grid), ctrl, cfg.cost_spec(), cfg.trajectory_config(),
                         cfg.value.n_paths, sclass, cfg.seeds.master_seed, tag=PATH_TAG)
    if "csv" in cfg.output.formats:
        _write_csv(out / "strategies.csv", ["index", "choices", "mean", "std_error"],
                   [(i, " ".join(map(str, cs)), m, s)
                    for i, (cs, m, s) in enumerate(zip(sclass.choices, est.strategy_means, est.strategy_std_errors))])
    return {
        "passed": bool(np.isfinite(est.mean)),
        "value": est.mean,
        "std_error": est.std_error,
        "n_paths": est.n_paths,
        "best_strategy": list(sclass.choices[est.best_strategy_index]),
    }


def cmd_dpp(cfg: RunConfig, out: Path) -> dict:
    grid, ctrl, sclass = _value_setup(cfg)
    rep = dpp_residual(cfg.time.t0, cfg.initial_field(grid), cfg.dpp.eta, ctrl, cfg.cost_spec(),
                       cfg.trajectory_config(), (cfg.dpp.outer_paths, cfg.dpp.inner_paths), sclass,
                       cfg.seeds.master_seed)
    return {
        "passed": rep.within,
        "lhs": rep.lhs,
        "rhs": rep.rhs,
        "lhs_se": rep.lhs_se,
        "rhs_se": rep.rhs_se,
        "residual": rep.residual,
        "combined_se": rep.combined_se,
        "eta": rep.eta,
        "inner_argmin_agreement": rep.inner_argmin_agreement,
        "inner_bias_direction": rep.inner_bias_direction,
    }


def cmd_validate_noise(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.spectral_grid()
    cov = cfg.covariance()
    rep = validate_hypothesis_trQ1(cov, grid)
    verdict = {
        "trace_q": rep.trace_q,
        "trace_q1": rep.trace_q1,
        "continuum_convergent": rep.continuum_convergent,
    }
    ok = rep.passed
    if cov.sigma > 0:
        dt = cfg.time.dt
        n = cfg.verify.n_samples * 500
        rng = path_stream(cfg.seeds.master_seed, 0, "noise-check")
        e_h = e_g = 0.0
        for start in range(0, n, 1000):
            dw = sample_increments(grid, cov, dt, rng, min(1000, n - start))
            e_h += float(np.sum(grid.norm2(dw)))
            e_g += float(np.sum(grid.norm2(dw, grid.stokes_eigenvalues)))
        ratio_h = e_h / n / (rep.trace_q * dt)
        ratio_g = e_g / n / (rep.trace_q1 * dt)
        verdict.update(n_increments=n, ratio_trace_q=ratio_h, ratio_trace_q1=ratio_g)
        ok = ok and abs(ratio_h - 1) <= 0.02 and abs(ratio_g - 1) <= 0.02
    verdict["passed"] = bool(ok)
    return verdict


COMMANDS: dict[str, Callable[[RunConfig, Path], dict]] = {
    "verify-operators": cmd_verify_operators,
    "simulate": cmd_simulate,
    "energy-report": cmd_energy_report,
    "ctsdep": cmd_ctsdep,
    "value": cmd_value,
    "dpp": cmd_dpp,
    "validate-noise": cmd_validate_noise,
}


# -- plumbing ---------------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def write_report(out: Path, command: str, cfg: RunConfig, verdict: dict, status: int) -> Path:
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "exit_status": status,
        "config": cfg.to_dict(),
        "warnings": list(cfg.warnings),
        "verdict": verdict,
    }
    path = out / f"{command}.json"
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scbf", description="Stochastic Brinkman-Forchheimer experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="TOML configuration file (defaults if omitted)")
        p.add_argument("--out", "-o", help="output directory (overrides output.directory)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    try:
        verdict = COMMANDS[args.command](cfg, out)
        status = EXIT_PASS if verdict["passed"] else EXIT_FAIL
        if "error" in verdict:
            status = EXIT_BLOWUP
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationBlowupError, StepSizeError) as exc:
        verdict = {"passed": False, "error": {"time": exc.time, "message": str(exc)}}
        status = EXIT_BLOWUP
    except SCBFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        verdict = {"passed": False, "error": {"message": str(exc)}}
        status = EXIT_FAIL
    if "json" in cfg.output.formats:
        write_report(out, args.command, cfg, verdict, status)
    print(f"{args.command}: {'PASS' if status == EXIT_PASS else 'FAIL'} (exit {status})")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
