"""IMEX Euler-Maruyama integration and energy / stability monitors.

One step reads

    y+ = (I + dt (mu A + alpha I))^{-1} [y + dt (f - mask(B(y) + beta C(y))) + dW]

The linear part is a diagonal Fourier multiplier, so the implicit solve is
exact.  States are kept inside the two-thirds band (noise and forcing are
band-limited there and the explicit drift is masked), which makes the
discrete energy balance an exact algebraic identity:

    |y+|^2 + 2 dt (mu |grad y+|^2 + alpha |y+|^2) + dt^2 |L y+|^2
        = |y|^2 + 2 dt (f, y) - 2 dt beta |y|_{r+1}^{r+1} + 2 (y, dW) + |dt (f - N) + dW|^2

with ``L = mu A + alpha I`` and ``N`` the masked drift.

All array routines accept arbitrary leading batch axes.  Noise arrays only
have to broadcast against the state, which is how common random numbers are
shared between strategies or between the two runs of a stability check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, IntegrationBlowupError, StepSizeError
from .noise import CovarianceSpec, NoiseSource, path_stream
from .operators import QUAD_REFINE, B_coeffs, PhysicalParams, varrho
from .spectral_core import NormReport, SpectralGrid, VelocityField, _norms_coeffs

__all__ = [
    "TrajectoryConfig",
    "TrajectoryRecord",
    "IMEXStepper",
    "BatchResult",
    "run_batch",
    "scbf_step",
    "simulate_trajectory",
    "EnergyReport",
    "energy_monitor",
    "EnsembleEnergyReport",
    "ensemble_energy_check",
    "DependenceReport",
    "continuous_dependence_check",
    "ConvergenceReport",
    "strong_convergence_study",
    "OUReport",
    "ou_variance_study",
    "write_trajectory_csv",
    "STEP_GUARD",
]

STEP_GUARD = 0.5
CSV_COLUMNS = ("time", "h_norm", "v_norm", "grad_norm", "lr_norm", "a_norm", "curl_norm")

Forcing = Callable[[float], "np.ndarray | VelocityField | None"]


@dataclass(frozen=True)
class TrajectoryConfig:
    t0: float
    T: float
    dt: float
    params: PhysicalParams
    cov: CovarianceSpec
    record_every: int = 1

    def __post_init__(self):
        if not (0 <= self.t0 < self.T):
            raise DomainError(f"need 0 <= t0 < T, got t0={self.t0}, T={self.T}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        steps = (self.T - self.t0) / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps) or round(steps) < 1:
            raise DomainError(f"(T - t0)/dt = {steps} is not a positive integer")
        if self.record_every < 1 or round(steps) % self.record_every:
            raise DomainError(f"record_every={self.record_every} must divide {round(steps)} steps")

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t0) / self.dt))

    def time(self, n: int) -> float:
        return self.t0 + n * self.dt

    @property
    def record_times(self) -> np.ndarray:
        return np.array([self.time(n) for n in range(0, self.n_steps + 1, self.record_every)])

    def replace(self, **kw) -> "TrajectoryConfig":
        from dataclasses import replace

        return replace(self, **kw)


def _forcing_array(f) -> np.ndarray | None:
    if f is None:
        return None
    if isinstance(f, VelocityField):
        return f.coeffs
    return np.asarray(f)


def _resolve_forcing(strategy) -> Callable[[float], np.ndarray | None]:
    if strategy is None:
        return lambda t: None
    if isinstance(strategy, (VelocityField, np.ndarray)):
        arr = _forcing_array(strategy)
        return lambda t: arr
    if callable(strategy):
        return lambda t: _forcing_array(strategy(t))
    raise TypeError(f"cannot interpret {type(strategy).__name__} as a forcing schedule")


class IMEXStepper:
    """Batch IMEX step on coefficient arrays.

    ``nonlinear=False`` drops B and C; used to test the linear/noise part in
    isolation against Ornstein-Uhlenbeck closed forms.
    """

    def __init__(self, grid: SpectralGrid, params: PhysicalParams, dt: float, nonlinear: bool = True):
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        self.grid = grid
        self.params = params
        self.dt = float(dt)
        self.nonlinear = nonlinear
        self.lin = params.mu * grid.stokes_eigenvalues + params.alpha
        self.denom = 1.0 + self.dt * self.lin
        self.mask = grid.dealias_mask

    def drift(self, y: np.ndarray, t: float):
        """Masked ``B(y) + beta C(y)`` plus ``|y|_{r+1}^{r+1}`` per batch entry."""
        g, p = self.grid, self.params
        if not self.nonlinear:
            return np.zeros_like(y), np.zeros(y.shape[: -g.dim - 1])
        up = g.to_physical(y, QUAD_REFINE)
        mag = np.sqrt(np.sum(up**2, axis=-g.dim - 1))
        peak = mag.max(axis=g.spatial_axes) if mag.size else np.zeros(())
        worst = float(np.max(self.dt * p.beta * peak ** (p.r - 1))) if p.r > 1 else self.dt * p.beta
        if worst > STEP_GUARD:
            raise StepSizeError(
                f"dt*beta*max|Y|^(r-1) = {worst:.3g} exceeds {STEP_GUARD} at t = {t:.6g}", t
            )
        w = mag ** (p.r - 1) if p.r != 1 else np.ones_like(mag)
        cphys = np.expand_dims(w, -g.dim - 1) * up
        c = g.project(g.from_physical(cphys, QUAD_REFINE))
        lrp = g.integrate(mag ** (p.r + 1))
        return B_coeffs(g, y, y) + p.beta * c * self.mask, lrp

    def step(self, y, t, f=None, dW=None, terms: dict | None = None) -> np.ndarray:
        """Advance one step.  If ``terms`` is a dict, the energy-balance terms are stored in it."""
        nbar, lrp = self.drift(y, t)
        incr = -self.dt * nbar
        if f is not None:
            incr = incr + self.dt * (f * self.mask)
        if dW is not None:
            incr = incr + dW
        y_new = (y + incr) / self.denom
        if not np.all(np.isfinite(y_new)):
            raise IntegrationBlowupError(f"non-finite state at t = {t + self.dt:.6g}", t + self.dt)
        if terms is not None:
            self._energy_terms(terms, y, y_new, f, dW, incr, lrp)
        return y_new

    def _energy_terms(self, out, y, y_new, f, dW, incr, lrp):
        g, p, dt = self.grid, self.params, self.dt
        lam = g.stokes_eigenvalues
        zero = np.zeros(y.shape[: -g.dim - 1])
        h_old = g.norm2(y)
        fy = g.inner(f * self.mask, y) if f is not None else zero
        yw = g.inner(y, dW) if dW is not None else zero
        h_new = g.norm2(y_new)
        grad_new = g.norm2(y_new, lam)
        lhs_terms = [h_new, 2 * dt * p.mu * grad_new, 2 * dt * p.alpha * h_new, dt**2 * g.norm2(y_new, self.lin**2)]
        absorb = 2 * dt * p.beta * lrp if self.nonlinear else zero
        rhs_terms = [h_old, 2 * dt * fy, -absorb, 2 * yw, g.norm2(incr)]
        lhs, rhs = sum(lhs_terms), sum(rhs_terms)
        scale = np.max(np.abs(np.stack(np.broadcast_arrays(*lhs_terms, *rhs_terms))), axis=0)
        out.update(
            h_old=h_old,
            grad_old=g.norm2(y, lam),
            lr_old=lrp if self.nonlinear else zero,
            fy=fy,
            yw=yw,
            h_new=h_new,
            grad_new=grad_new,
            identity_residual=np.abs(lhs - rhs) / np.where(scale > 0, scale, 1.0),
        )


def scbf_step(
    y: VelocityField,
    t: float,
    a,
    dW: VelocityField | None,
    dt: float,
    params: PhysicalParams,
    forcing: Callable | None = None,
) -> VelocityField:
    """One IMEX step.  The forcing is ``forcing(t, a)`` if given, else ``a`` itself."""
    f = forcing(t, a) if forcing is not None else a
    stepper = IMEXStepper(y.grid, params, dt)
    dw = None if dW is None else dW.coeffs
    return VelocityField(y.grid, stepper.step(y.coeffs, t, _forcing_array(f), dw), check=False)


@dataclass
class BatchResult:
    """Output of :func:`run_batch`.  Per-record arrays have shape ``(R, *batch)``."""

    times: np.ndarray
    final: np.ndarray
    h2: np.ndarray
    grad2: np.ndarray
    lr: np.ndarray
    states: list[np.ndarray] | None = None
    steps: dict[str, np.ndarray] | None = None


def run_batch(
    y0: np.ndarray,
    cfg: TrajectoryConfig,
    forcing: Forcing | None = None,
    noise: NoiseSource | None = None,
    *,
    nonlinear: bool = True,
    keep_states: bool = False,
    track_energy: bool = False,
    observer: Callable[[float, np.ndarray], None] | None = None,
    grid: SpectralGrid | None = None,
    record_norms: bool = True,
) -> BatchResult:
    """Integrate a batch of states over ``[t0, T]``.

    ``observer(t, y)`` is called at every record time including ``t0``.
    With ``record_norms=False`` the norm series are left empty.
    ``noise.next`` must return arrays that broadcast against ``y0``.
    """
    if grid is None:
        raise DomainError("run_batch needs the grid")
    fsched = _resolve_forcing(forcing)
    stepper = IMEXStepper(grid, cfg.params, cfg.dt, nonlinear=nonlinear)
    y = np.array(y0, dtype=complex) * grid.dealias_mask
    r = cfg.params.r
    times, h2, grad2, lr, states = [], [], [], [], []
    step_log: dict[str, list] = {}

    def record(t, y):
        times.append(t)
        c = np.asarray(y)
        if record_norms:
            h2.append(grid.norm2(c))
            grad2.append(grid.norm2(c, grid.stokes_eigenvalues))
            mag = np.sqrt(np.sum(grid.to_physical(c, QUAD_REFINE) ** 2, axis=-grid.dim - 1))
            lr.append(grid.integrate(mag ** (r + 1)))
        if keep_states:
            states.append(c.copy())
        if observer is not None:
            observer(t, c)

    record(cfg.t0, y)
    for n in range(cfg.n_steps):
        t = cfg.time(n)
        dW = noise.next(cfg.dt) if noise is not None else None
        terms = {} if track_energy else None
        y = stepper.step(y, t, fsched(t), dW, terms)
        if terms is not None:
            for k, v in terms.items():
                step_log.setdefault(k, []).append(np.asarray(v))
        if (n + 1) % cfg.record_every == 0:
            record(cfg.time(n + 1), y)
    steps = {k: np.stack(v) for k, v in step_log.items()} if track_energy else None
    return BatchResult(
        times=np.array(times),
        final=y,
        h2=np.stack(h2) if h2 else np.empty(0),
        grad2=np.stack(grad2) if grad2 else np.empty(0),
        lr=np.stack(lr) if lr else np.empty(0),
        states=states if keep_states else None,
        steps=steps,
    )


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    norm_series: list[NormReport]
    path_seed: int | None
    final_state: VelocityField
    snapshots: list[VelocityField] | None = None
    step_terms: dict[str, np.ndarray] | None = None
    dt: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(n, name) for n in self.norm_series])


def _as_stream(rng_stream, seed_hint=None):
    if rng_stream is None:
        return None, None
    if isinstance(rng_stream, (int, np.integer)):
        return path_stream(int(rng_stream), 0), int(rng_stream)
    return rng_stream, seed_hint


def simulate_trajectory(
    y0: VelocityField,
    cfg: TrajectoryConfig,
    strategy=None,
    rng_stream: np.random.Generator | int | None = None,
    *,
    path_seed: int | None = None,
    store_states: bool = False,
    track_energy: bool = False,
    nonlinear: bool = True,
) -> TrajectoryRecord:
    """Single path.  ``rng_stream`` may be a generator, an integer seed, or ``None``.

    ``strategy`` is ``None`` (no forcing), a constant forcing field, or a
    callable ``t -> forcing``.
    """
    grid = y0.grid
    stream, seed = _as_stream(rng_stream, path_seed)
    noise = None
    if stream is not None and cfg.cov.sigma > 0:
        noise = NoiseSource(grid, cfg.cov, [stream])
    r = cfg.params.r
    reports: list[NormReport] = []
    snaps: list[VelocityField] = []

    def observe(t, c):
        h2, g2, a2, ai2, curl2, lrn = _norms_coeffs(grid, c[0], r, QUAD_REFINE)
        reports.append(
            NormReport(
                h_norm=float(np.sqrt(h2)),
                v_norm=float(np.sqrt(h2 + g2)),
                grad_norm=float(np.sqrt(g2)),
                lr_norm=float(lrn),
                a_norm=float(np.sqrt(a2)),
                ai_norm=float(np.sqrt(ai2)),
                curl_norm=float(np.sqrt(curl2)),
                r=float(r),
            )
        )
        if store_states:
            snaps.append(VelocityField(grid, c[0].copy(), check=False))

    res = run_batch(
        y0.coeffs[None],
        cfg,
        strategy,
        noise,
        nonlinear=nonlinear,
        track_energy=track_energy,
        observer=observe,
        grid=grid,
    )
    steps = {k: v[:, 0] for k, v in res.steps.items()} if res.steps is not None else None
    return TrajectoryRecord(
        times=res.times,
        norm_series=reports,
        path_seed=seed,
        final_state=VelocityField(grid, res.final[0], check=False),
        snapshots=snaps if store_states else None,
        step_terms=steps,
        dt=cfg.dt,
    )


# -- energy monitors ------------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    """Per-path energy diagnostics.

    ``balance`` is the running sum of the per-step drift
    ``b_n = |Y_{n+1}|^2 - |Y_n|^2 + 2 dt [mu |grad Y_n|^2 + alpha |Y_n|^2
    + beta |Y_n|_{r+1}^{r+1} - (f_n, Y_n)] - Tr(Q) dt - 2 (Y_n, dW_n)``.
    """

    max_identity_residual: float
    balance: np.ndarray
    monotone_decay: bool
    h_norms: np.ndarray


def energy_monitor(record: TrajectoryRecord, params: PhysicalParams, cov: CovarianceSpec | None = None) -> EnergyReport:
    """Discrete energy checks on a record produced with ``track_energy=True``."""
    st = record.step_terms
    if st is None:
        raise DomainError("record carries no step terms; simulate with track_energy=True")
    dt = record.dt
    grid = record.final_state.grid
    trq = cov.trace_q(grid) if cov is not None else 0.0
    b = (
        st["h_new"]
        - st["h_old"]
        + 2 * dt * (params.mu * st["grad_old"] + params.alpha * st["h_old"] + params.beta * st["lr_old"] - st["fy"])
        - trq * dt
        - 2 * st["yw"]
    )
    h = record.column("h_norm")
    nonzero = h[:-1] > 0
    monotone = bool(np.all(np.diff(h)[nonzero] < 0))
    return EnergyReport(
        max_identity_residual=float(np.max(st["identity_residual"])) if len(b) else 0.0,
        balance=np.cumsum(b),
        monotone_decay=monotone,
        h_norms=h,
    )


@dataclass(frozen=True)
class EnsembleEnergyReport:
    """Ensemble form of the second-moment energy estimate.

    ``lhs[s] = E|Y(s)|^2 + 2 mu E int |grad Y|^2 + 2 beta E int |Y|_{r+1}^{r+1}``,
    ``rhs[s] = E|xi|^2 + (Tr Q + 2 R^2 / alpha)(s - t0)``.
    """

    times: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray
    constant: float
    max_identity_residual: float
    drift_mean: float
    drift_se: float
    n_paths: int

    @property
    def holds(self) -> bool:
        # Allow for roundoff at t0, where both sides equal |xi|^2.
        return bool(np.all(self.lhs <= self.rhs * (1 + 1e-12)))

    @property
    def margin_in_se(self) -> float:
        """Smallest gap ``rhs - lhs`` in standard errors, over times with nondegenerate spread."""
        live = self.lhs_se > 1e-12 * np.abs(self.rhs)
        if not np.any(live):
            return math.inf
        return float(np.min((self.rhs - self.lhs)[live] / self.lhs_se[live]))


def ensemble_energy_check(
    y0: VelocityField,
    cfg: TrajectoryConfig,
    n_paths: int,
    master_seed: int,
    forcing=None,
    forcing_bound: float = 0.0,
    chunk: int = 250,
) -> EnsembleEnergyReport:
    """Monte-Carlo check of the second-moment energy inequality.

    ``forcing_bound`` is ``R`` with ``|f|_V <= R``.  Path integrals use the
    implicit (new) point for the dissipation term and the explicit (old)
    point for absorption, matching the scheme.
    """
    grid = y0.grid
    p = cfg.params
    trq = cfg.cov.trace_q(grid)
    chunks = []
    idres = 0.0
    drift = []
    for start in range(0, n_paths, chunk):
        idx = range(start, min(n_paths, start + chunk))
        noise = NoiseSource.from_seed(grid, cfg.cov, master_seed, idx, "energy")
        y = np.broadcast_to(y0.coeffs, (len(idx),) + grid.field_shape)
        res = run_batch(y, cfg, forcing, noise, track_energy=True, grid=grid)
        st = res.steps
        idres = max(idres, float(st["identity_residual"].max()))
        diss = np.concatenate([np.zeros((1, len(idx))), np.cumsum(cfg.dt * st["grad_new"], axis=0)])
        absb = np.concatenate([np.zeros((1, len(idx))), np.cumsum(cfg.dt * st["lr_old"], axis=0)])
        h = np.concatenate([st["h_old"][:1], st["h_new"]])
        val = h + 2 * p.mu * diss + 2 * p.beta * absb
        chunks.append(val[:: cfg.record_every])
        b = (
            st["h_new"] - st["h_old"]
            + 2 * cfg.dt * (p.mu * st["grad_old"] + p.alpha * st["h_old"] + p.beta * st["lr_old"] - st["fy"])
            - trq * cfg.dt - 2 * st["yw"]
        )
        drift.append(b.sum(axis=0))
    vals = np.concatenate(chunks, axis=1)
    drift = np.concatenate(drift)
    times = cfg.record_times
    const = trq + 2 * forcing_bound**2 / p.alpha
    rhs = y0.h_norm() ** 2 + const * (times - cfg.t0)
    return EnsembleEnergyReport(
        times=times,
        lhs=vals.mean(axis=1),
        lhs_se=vals.std(axis=1, ddof=1) / math.sqrt(n_paths),
        rhs=rhs,
        constant=const,
        max_identity_residual=idres,
        drift_mean=float(drift.mean()),
        drift_se=float(drift.std(ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths,
    )


# -- continuous dependence -----------------------------------------------


@dataclass(frozen=True)
class DependenceReport:
    times: np.ndarray
    diff2: np.ndarray
    bound: np.ndarray
    varrho: float

    @property
    def max_ratio(self) -> float:
        if np.all(self.diff2 == 0):
            return 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.bound > 0, self.diff2 / self.bound, np.inf)
        return float(np.max(ratio))

    @property
    def holds(self) -> bool:
        return self.max_ratio <= 1.0


def continuous_dependence_check(
    y0a: VelocityField, y0b: VelocityField, cfg: TrajectoryConfig, strategy=None, seed: int = 0
) -> DependenceReport:
    """Run both initial data with identical noise and forcing and compare.

    Checks ``|Y1(s) - Y2(s)|^2 <= |y0a - y0b|^2 exp(2 rho (s - t0))`` at every
    record time.
    """
    y0a.grid.check_same(y0b.grid)
    if not cfg.params.well_posed_regime:
        raise DomainError("continuous dependence needs r > 3 or r = 3 with 2 beta mu >= 1")
    rho = varrho(cfg.params)
    grid = y0a.grid
    noise = None
    if cfg.cov.sigma > 0:
        noise = NoiseSource(grid, cfg.cov, [path_stream(seed, 0, "ctsdep")])
    diffs = []
    res = run_batch(
        np.stack([y0a.coeffs, y0b.coeffs]) * grid.dealias_mask,
        cfg,
        strategy,
        noise,
        observer=lambda t, y: diffs.append(float(grid.norm2(y[0] - y[1]))),
        grid=grid,
    )
    z0 = diffs[0]
    if z0 == 0:
        bound = np.zeros(len(res.times))
    else:
        with np.errstate(over="ignore"):
            bound = z0 * np.exp(2 * rho * (res.times - cfg.t0))
    return DependenceReport(res.times, np.array(diffs), bound, rho)


# -- convergence studies ----------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    dts: np.ndarray
    errors: np.ndarray
    slope: float


def strong_convergence_study(
    y0: VelocityField,
    cfg: TrajectoryConfig,
    levels: int,
    n_paths: int,
    master_seed: int,
    forcing=None,
) -> ConvergenceReport:
    """Self-convergence with coupled noise.

    ``cfg.dt`` is the coarsest step; level ``j`` uses ``cfg.dt / 2^j`` for
    ``j = 0..levels``.  All levels consume sums of the finest increments.
    ``errors[j] = sqrt(E |Y_{dt_j}(T) - Y_{dt_{j+1}}(T)|^2)`` is reported
    against ``dt_j``; ``slope`` is the least-squares fit of log error on log dt.
    """
    grid = y0.grid
    fsched = _resolve_forcing(forcing)
    n_fine = cfg.n_steps * 2**levels
    dt_f = (cfg.T - cfg.t0) / n_fine
    dts = [cfg.dt / 2**j for j in range(levels + 1)]
    steppers = [IMEXStepper(grid, cfg.params, dt) for dt in dts]
    ratio = [2 ** (levels - j) for j in range(levels + 1)]
    noise = NoiseSource.from_seed(grid, cfg.cov, master_seed, range(n_paths), "strong")
    ys = [np.broadcast_to(y0.coeffs * grid.dealias_mask, (n_paths,) + grid.field_shape).copy() for _ in dts]
    acc = [np.zeros_like(ys[0]) for _ in dts]
    count = [0] * len(dts)
    for i in range(n_fine):
        dw = noise.next(dt_f)
        for j, st in enumerate(steppers):
            acc[j] += dw
            if (i + 1) % ratio[j] == 0:
                t = cfg.t0 + count[j] * dts[j]
                ys[j] = st.step(ys[j], t, fsched(t), acc[j])
                acc[j][...] = 0
                count[j] += 1
    errs = np.array([math.sqrt(float(np.mean(grid.norm2(ys[j] - ys[j + 1])))) for j in range(levels)])
    slope = float(np.polyfit(np.log(dts[:-1]), np.log(errs), 1)[0])
    return ConvergenceReport(np.array(dts[:-1]), errs, slope)


@dataclass(frozen=True)
class OUReport:
    shells: tuple[int, ...]
    measured: np.ndarray
    predicted: np.ndarray

    @property
    def relative_error(self) -> np.ndarray:
        return np.abs(self.measured / self.predicted - 1.0)


def ou_variance_study(
    grid: SpectralGrid,
    cfg: TrajectoryConfig,
    n_paths: int,
    master_seed: int,
    shells: Sequence[int] = (1, 2, 4, 5),
    chunk: int = 500,
) -> OUReport:
    """Linear dynamics from rest driven by noise only; compare to OU variances.

    For a mode of shell ``|k|^2`` the continuum variance per divergence-free
    direction is ``q_k (1 - exp(-2 c (T - t0))) / (2 c)``, ``c = mu lambda_k + alpha``.
    Results are pooled over all wave vectors in a shell.
    """
    p = cfg.params
    q = cfg.cov.eigenvalues(grid)
    c = p.mu * grid.stokes_eigenvalues + p.alpha
    tau = cfg.T - cfg.t0
    pred_mode = (grid.dim - 1) * q * (1 - np.exp(-2 * c * tau)) / (2 * c)
    energy = np.zeros(grid.shape)
    for start in range(0, n_paths, chunk):
        idx = range(start, min(n_paths, start + chunk))
        noise = NoiseSource.from_seed(grid, cfg.cov, master_seed, idx, "ou")
        y = np.zeros((len(idx),) + grid.field_shape, dtype=complex)
        res = run_batch(y, cfg, None, noise, nonlinear=False, grid=grid)
        energy += grid.volume * np.sum(np.abs(res.final) ** 2, axis=(0, 1))
    energy /= n_paths
    meas, pred = [], []
    for s in shells:
        sel = (grid.k2 == s) & grid.dealias_mask
        if not np.any(sel):
            raise DomainError(f"shell |k|^2 = {s} is outside the band")
        meas.append(energy[sel].sum())
        pred.append(pred_mode[sel].sum())
    return OUReport(tuple(shells), np.array(meas), np.array(pred))


def write_trajectory_csv(path: str | Path, record: TrajectoryRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for t, n in zip(record.times, record.norm_series):
            w.writerow([repr(float(t))] + [repr(getattr(n, c)) for c in CSV_COLUMNS[1:]])
