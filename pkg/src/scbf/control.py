"""Controls, costs, the example Hamiltonian, and Monte-Carlo value estimates.

The admissible class used here is finite: piecewise-constant open-loop
strategies on a knot grid, each segment choosing one candidate from a
:class:`ControlSet`.  Costs of all strategies in a class are evaluated on the
same noise paths (common random numbers), so comparisons between strategies
and between nested classes are exact at the level of sample paths.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import TrajectoryConfig, TrajectoryRecord, run_batch
from .errors import DomainError, GridMismatchError, SCBFError
from .noise import NoiseSource, path_streams
from .spectral_core import SpectralGrid, VelocityField

__all__ = [
    "ControlSet",
    "Strategy",
    "StrategyClass",
    "CostSpec",
    "ValueEstimate",
    "enstrophy_cost",
    "enstrophy_cost_spec",
    "control_operator_K",
    "hamiltonian_h",
    "feedback_map_M",
    "hamiltonian_F",
    "hamiltonian_F_closed_form",
    "planar_ball_candidates",
    "cost_J",
    "discount_tail_bound",
    "estimate_value",
    "strategy_costs",
    "DPPReport",
    "dpp_residual",
    "value_growth_constant",
    "concave_majorant",
    "ModulusTable",
    "value_continuity_probe",
]

_KNOT_TOL = 1e-9


class EmptyControlSetError(SCBFError, ValueError):
    """A control set or strategy class with no members."""


# -- control set and strategies --------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Finite candidate controls inside the closed H-ball of radius ``R_ball``."""

    candidates: tuple[VelocityField, ...]
    R_ball: float

    def __post_init__(self):
        cands = tuple(self.candidates)
        object.__setattr__(self, "candidates", cands)
        if not cands:
            raise EmptyControlSetError("control set has no candidates")
        if not self.R_ball > 0:
            raise DomainError(f"R_ball must be positive, got {self.R_ball}")
        g = cands[0].grid
        for a in cands:
            g.check_same(a.grid)
            if a.h_norm() > self.R_ball * (1 + 1e-12):
                raise DomainError(f"candidate norm {a.h_norm():.6g} exceeds R_ball = {self.R_ball}")
        if not any(a.h_norm() == 0 for a in cands):
            raise DomainError("control set must contain the zero control")

    @property
    def grid(self) -> SpectralGrid:
        return self.candidates[0].grid

    def __len__(self) -> int:
        return len(self.candidates)

    def coeffs(self, i: int) -> np.ndarray:
        return self.candidates[i].coeffs

    @property
    def zero_index(self) -> int:
        return next(i for i, a in enumerate(self.candidates) if a.h_norm() == 0)


def _check_knots(knots: Sequence[float]) -> tuple[float, ...]:
    k = tuple(float(x) for x in knots)
    if len(k) < 2 or any(b <= a for a, b in zip(k, k[1:])):
        raise DomainError(f"knots must be strictly increasing with at least two entries: {k}")
    return k


@dataclass(frozen=True)
class Strategy:
    """Piecewise-constant open-loop control: ``choices[m]`` on ``[knots[m], knots[m+1])``."""

    knots: tuple[float, ...]
    choices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "knots", _check_knots(self.knots))
        object.__setattr__(self, "choices", tuple(int(c) for c in self.choices))
        if len(self.choices) != len(self.knots) - 1:
            raise DomainError("need exactly one choice per knot interval")

    def segment(self, t: float) -> int:
        """Index of the segment in force at ``t`` (the last segment includes ``T``)."""
        k = self.knots
        if t < k[0] - _KNOT_TOL or t > k[-1] + _KNOT_TOL:
            raise DomainError(f"t = {t} outside [{k[0]}, {k[-1]}]")
        m = int(np.searchsorted(k, t + _KNOT_TOL, side="right")) - 1
        return min(max(m, 0), len(self.choices) - 1)

    def choice_at(self, t: float) -> int:
        return self.choices[self.segment(t)]

    def forcing(self, ctrl: ControlSet, cost: "CostSpec") -> Callable[[float], np.ndarray]:
        grid = ctrl.grid
        return lambda t: cost.forcing(t, ctrl.coeffs(self.choice_at(t)), grid)

    def check_aligned(self, cfg: TrajectoryConfig) -> None:
        for tau in self.knots:
            n = (tau - cfg.t0) / cfg.dt
            if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
                raise GridMismatchError(f"knot {tau} is not on the integrator grid")


@dataclass(frozen=True)
class StrategyClass:
    """All strategies on a common knot grid with the listed choice tuples."""

    knots: tuple[float, ...]
    choices: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "knots", _check_knots(self.knots))
        ch = tuple(tuple(int(c) for c in cs) for cs in self.choices)
        if not ch:
            raise EmptyControlSetError("strategy class is empty")
        for cs in ch:
            if len(cs) != len(self.knots) - 1:
                raise DomainError("every strategy needs one choice per knot interval")
        object.__setattr__(self, "choices", ch)

    @classmethod
    def enumerate(cls, knots: Sequence[float], n_candidates: int, allowed: Sequence[int] | None = None) -> "StrategyClass":
        idx = list(range(n_candidates)) if allowed is None else list(allowed)
        return cls(tuple(knots), tuple(itertools.product(idx, repeat=len(knots) - 1)))

    @property
    def strategies(self) -> list[Strategy]:
        return [Strategy(self.knots, c) for c in self.choices]

    def __len__(self) -> int:
        return len(self.choices)

    def restrict(self, t_start: float, t_end: float) -> tuple["StrategyClass", list[int]]:
        """Distinct sub-strategies on ``[t_start, t_end]`` plus the map from full to sub index."""
        k = self.knots
        i0 = _knot_index(k, t_start)
        i1 = _knot_index(k, t_end)
        subs: list[tuple[int, ...]] = []
        where = []
        for cs in self.choices:
            sub = cs[i0:i1]
            if sub not in subs:
                subs.append(sub)
            where.append(subs.index(sub))
        return StrategyClass(k[i0 : i1 + 1], tuple(subs)), where


def _knot_index(knots: Sequence[float], t: float) -> int:
    for i, tau in enumerate(knots):
        if abs(tau - t) <= _KNOT_TOL * max(1.0, abs(t)):
            return i
    raise DomainError(f"{t} is not a knot of {tuple(knots)}")


# -- costs ------------------------------------------------------------------


def _curl2(grid: SpectralGrid, y: np.ndarray) -> np.ndarray:
    w = grid.curl(y)
    axes = grid.spatial_axes if grid.dim == 2 else grid.field_axes
    return grid.volume * np.sum(w.real**2 + w.imag**2, axis=axes)


def enstrophy_cost(y: VelocityField, a: VelocityField) -> float:
    """``|curl y|_H^2 + 1/2 |a|_H^2``."""
    y.grid.check_same(a.grid)
    return float(_curl2(y.grid, y.coeffs)) + 0.5 * a.h_norm() ** 2


def _K_coeffs(grid: SpectralGrid, a: np.ndarray) -> np.ndarray:
    return a / np.sqrt(1.0 + grid.stokes_eigenvalues)


def control_operator_K(a: VelocityField) -> VelocityField:
    """``(A + I)^{-1/2} a``; maps H into V with ``|Ka|_V = |a|_H``."""
    return VelocityField(a.grid, _K_coeffs(a.grid, a.coeffs), check=False)


@dataclass(frozen=True)
class CostSpec:
    """Running cost, terminal cost and forcing on coefficient arrays.

    ``running(grid, y, a)`` and ``terminal(grid, y)`` take states with
    arbitrary leading batch axes and return one value per batch entry;
    ``forcing(t, a, grid)`` returns the forcing coefficients.
    ``growth = (C, k)`` declares ``|l|, |g| <= C (1 + |y|_V^k)``; ``R_f``
    declares ``|f|_V <= R_f``.
    """

    running: Callable[[SpectralGrid, np.ndarray, np.ndarray], np.ndarray]
    terminal: Callable[[SpectralGrid, np.ndarray], np.ndarray]
    forcing: Callable[[float, np.ndarray, SpectralGrid], np.ndarray]
    discount: float = 0.0
    growth: tuple[float, float] = (1.0, 2.0)
    R_f: float = 0.0
    kind: str = "custom"

    def __post_init__(self):
        if self.discount < 0:
            raise DomainError(f"discount must be nonnegative, got {self.discount}")


def enstrophy_cost_spec(R_ball: float, discount: float = 0.0) -> CostSpec:
    """Enstrophy running cost, ``|y|_H^2`` terminal cost, forcing ``K a``."""

    def running(grid, y, a):
        return _curl2(grid, y) + 0.5 * grid.norm2(a)

    def terminal(grid, y):
        return grid.norm2(y)

    def forcing(t, a, grid):
        return _K_coeffs(grid, a)

    C = max(1.0, 0.5 * R_ball**2)
    return CostSpec(running, terminal, forcing, discount, (C, 2.0), float(R_ball), "enstrophy")


# -- Hamiltonian --------------------------------------------------------------


def hamiltonian_h(z: VelocityField, R_ball: float) -> float:
    """``-|z|^2/2`` inside the ball, ``-R |z| + R^2/2`` outside."""
    if not R_ball > 0:
        raise DomainError(f"R_ball must be positive, got {R_ball}")
    n = z.h_norm()
    if n <= R_ball:
        return -0.5 * n * n
    return -R_ball * n + 0.5 * R_ball * R_ball


def feedback_map_M(z: VelocityField, R_ball: float) -> VelocityField:
    """``-z`` inside the ball, ``-R z / |z|`` outside; the gradient of ``h``."""
    if not R_ball > 0:
        raise DomainError(f"R_ball must be positive, got {R_ball}")
    n = z.h_norm()
    if n <= R_ball:
        return -z
    return z * (-R_ball / n)


def hamiltonian_F(
    t: float, y: VelocityField, p: VelocityField, ctrl: ControlSet, cost: CostSpec
) -> float:
    """``min_a (f(t, a), p)_H + l(y, a)`` over the candidate set."""
    if len(ctrl) == 0:
        raise EmptyControlSetError("control set has no candidates")
    g = y.grid
    g.check_same(p.grid)
    vals = [
        float(g.inner(cost.forcing(t, a.coeffs, g), p.coeffs)) + float(cost.running(g, y.coeffs, a.coeffs))
        for a in ctrl.candidates
    ]
    return min(vals)


def hamiltonian_F_closed_form(y: VelocityField, p: VelocityField, R_ball: float) -> float:
    """Enstrophy example over the whole ball: ``|curl y|^2 + h(K p)`` (``K`` is self-adjoint)."""
    return float(_curl2(y.grid, y.coeffs)) + hamiltonian_h(control_operator_K(p), R_ball)


def planar_ball_candidates(
    e1: VelocityField,
    e2: VelocityField,
    R_ball: float,
    n_radii: int,
    n_angles: int,
    offset: float = 0.0,
) -> ControlSet:
    """Zero plus a polar grid ``rho (cos th e1 + sin th e2)`` in the plane of two H-orthonormal fields.

    Radii ``R i / n_radii``, angles ``offset + 2 pi j / n_angles``.  Doubling
    both counts gives a superset, so the finite minimum can only improve.
    """
    cands = [VelocityField.zeros(e1.grid)]
    for i in range(1, n_radii + 1):
        rho = R_ball * i / n_radii
        for j in range(n_angles):
            th = offset + 2 * math.pi * j / n_angles
            cands.append(e1 * (rho * math.cos(th)) + e2 * (rho * math.sin(th)))
    return ControlSet(tuple(cands), R_ball * (1 + 1e-12))


# -- cost functional ------------------------------------------------------------


def _trap_weights(times: np.ndarray, knots: Sequence[float], t0: float, discount: float):
    """Per-segment trapezoid weights, shape ``(M, n_times)``."""
    w = np.zeros((len(knots) - 1, len(times)))
    for m in range(len(knots) - 1):
        a, b = knots[m], knots[m + 1]
        inside = np.nonzero((times >= a - _KNOT_TOL) & (times <= b + _KNOT_TOL))[0]
        if len(inside) < 2:
            raise GridMismatchError(f"segment [{a}, {b}] holds fewer than two record times")
        ts = times[inside]
        h = np.diff(ts)
        wm = np.zeros(len(ts))
        wm[:-1] += h / 2
        wm[1:] += h / 2
        w[m, inside] = wm
    if discount > 0:
        w = w * np.exp(-discount * (times - t0))
    return w


def cost_J(
    traj: TrajectoryRecord, strategy: Strategy, cost: CostSpec, ctrl: ControlSet
) -> float:
    """Quadrature of the running cost per control segment plus the terminal cost.

    Each segment ``[tau_m, tau_{m+1}]`` is integrated by the trapezoid rule on
    the record times, with that segment's control at both ends, so costs add
    across knots.  With ``discount > 0`` the integrand carries
    ``exp(-discount (s - t0))`` and no terminal cost is added; see
    :func:`discount_tail_bound` for the truncation error.
    """
    if traj.snapshots is None:
        raise DomainError("cost_J needs a record with stored states")
    times = np.asarray(traj.times)
    t0 = times[0]
    for tau in strategy.knots:
        if not np.any(np.abs(times - tau) <= _KNOT_TOL * max(1.0, abs(tau))):
            raise GridMismatchError(f"knot {tau} is not a record time")
    if abs(strategy.knots[0] - t0) > _KNOT_TOL or abs(strategy.knots[-1] - times[-1]) > _KNOT_TOL:
        raise GridMismatchError("strategy knots must span the record")
    grid = ctrl.grid
    w = _trap_weights(times, strategy.knots, t0, cost.discount)
    total = 0.0
    for m, choice in enumerate(strategy.choices):
        a = ctrl.coeffs(choice)
        for i in np.nonzero(w[m])[0]:
            total += w[m, i] * float(cost.running(grid, traj.snapshots[i].coeffs, a))
    if cost.discount == 0:
        total += float(cost.terminal(grid, traj.snapshots[-1].coeffs))
    return total


def discount_tail_bound(cost: CostSpec, sup_v_norm: float, horizon: float) -> float:
    """``C (1 + sup |Y|_V^k) exp(-lambda horizon) / lambda`` for the neglected tail."""
    if cost.discount <= 0:
        raise DomainError("tail bound applies to discounted costs only")
    C, k = cost.growth
    return C * (1 + sup_v_norm**k) * math.exp(-cost.discount * horizon) / cost.discount


# -- Monte-Carlo value estimation ----------------------------------------------


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    n_paths: int
    best_strategy_index: int
    strategy_means: tuple[float, ...] = field(default=())
    strategy_std_errors: tuple[float, ...] = field(default=())


def strategy_costs(
    y0: np.ndarray,
    t_start: float,
    t_end: float,
    sclass: StrategyClass,
    ctrl: ControlSet,
    cost: CostSpec,
    cfg: TrajectoryConfig,
    noise: NoiseSource | None,
    terminal: bool,
    t_origin: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Path costs and end states for every strategy on ``[t_start, t_end]``.

    ``y0`` has shape ``(*B, d, N...)`` and ``noise`` yields ``(*B, d, N...)``;
    results have shape ``(S, *B)`` and ``(S, *B, d, N...)``.  ``t_origin`` is
    the discount origin (defaults to ``t_start``).
    """
    grid = ctrl.grid
    sub = cfg.replace(t0=t_start, T=t_end, record_every=1)
    S = len(sclass)
    knots = sclass.knots
    if abs(knots[0] - t_start) > _KNOT_TOL or abs(knots[-1] - t_end) > _KNOT_TOL:
        raise GridMismatchError("strategy class does not span the interval")
    for s in sclass.strategies:
        s.check_aligned(sub)
    times = sub.record_times
    w = _trap_weights(times, knots, t_start if t_origin is None else t_origin, cost.discount)
    lead = np.shape(y0)[: -grid.dim - 1]
    bshape = (S,) + (1,) * len(lead) + grid.field_shape
    seg_f = []
    for m in range(len(knots) - 1):
        tm = 0.5 * (knots[m] + knots[m + 1])
        seg_f.append(
            np.stack([cost.forcing(tm, ctrl.coeffs(cs[m]), grid) for cs in sclass.choices]).reshape(bshape)
        )
    acc = np.zeros((S,) + lead)
    step = {"i": 0}
    locator = Strategy(knots, sclass.choices[0])

    def forcing(t):
        return seg_f[locator.segment(t)]

    def observer(t, y):
        i = step["i"]
        for m in np.nonzero(w[:, i])[0]:
            for s, cs in enumerate(sclass.choices):
                acc[s] += w[m, i] * cost.running(grid, y[s], ctrl.coeffs(cs[m]))
        step["i"] = i + 1

    y = np.broadcast_to(y0, (S,) + tuple(np.shape(y0)))
    res = run_batch(y, sub, forcing, noise, observer=observer, grid=grid, record_norms=False)
    if terminal and cost.discount == 0:
        acc += cost.terminal(grid, res.final)
    return acc, res.final


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield range(start, min(n, start + size))


def _summarise(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = costs.shape[1]
    return costs.mean(axis=1), costs.std(axis=1, ddof=1) / math.sqrt(n)


def estimate_value(
    t0: float,
    y0: VelocityField,
    ctrl: ControlSet,
    cost: CostSpec,
    cfg: TrajectoryConfig,
    n_paths: int,
    strategy_class: StrategyClass,
    master_seed: int = 0,
    tag: str = "value",
    chunk_budget: int = 1200,
) -> ValueEstimate:
    """Minimum over the class of Monte-Carlo mean costs, common noise across strategies.

    Path ``p`` draws from stream ``(master_seed, p, tag)`` for every strategy.
    The minimum of sample means is biased low relative to the class value
    ``min_s E J_s`` (Jensen); it is an estimate of the value of the
    restricted class, which is itself an upper bound for the unrestricted
    value function.
    """
    if n_paths < 2:
        raise DomainError("need at least two paths for a standard error")
    grid = y0.grid
    S = len(strategy_class)
    T = strategy_class.knots[-1]
    if abs(strategy_class.knots[0] - t0) > _KNOT_TOL:
        raise GridMismatchError("strategy class must start at t0")
    per = max(1, chunk_budget // S)
    parts = []
    for idx in _chunks(n_paths, per):
        noise = NoiseSource(grid, cfg.cov, path_streams(master_seed, idx, tag))
        yb = np.broadcast_to(y0.coeffs, (len(idx),) + grid.field_shape)
        c, _ = strategy_costs(yb, t0, T, strategy_class, ctrl, cost, cfg, noise, terminal=True)
        parts.append(c)
    costs = np.concatenate(parts, axis=1)
    means, ses = _summarise(costs)
    best = int(np.argmin(means))
    return ValueEstimate(
        float(means[best]), float(ses[best]), n_paths, best, tuple(means.tolist()), tuple(ses.tolist())
    )


@dataclass(frozen=True)
class DPPReport:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    eta: float
    inner_argmin_agreement: float
    inner_bias_direction: str = "downward"

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def combined_se(self) -> float:
        return math.sqrt(self.lhs_se**2 + self.rhs_se**2)

    @property
    def within(self) -> bool:
        return self.residual <= 3 * self.combined_se


def dpp_residual(
    t0: float,
    y0: VelocityField,
    eta: float,
    ctrl: ControlSet,
    cost: CostSpec,
    cfg: TrajectoryConfig,
    budgets: tuple[int, int],
    strategy_class: StrategyClass,
    master_seed: int = 0,
    chunk_budget: int = 1200,
) -> DPPReport:
    """Compare the class value at ``t0`` with the one-step dynamic-programming right side.

    ``lhs`` is :func:`estimate_value` with ``budgets[0]`` paths.  ``rhs`` is
    the minimum over first-part strategies of the mean over the same outer
    paths of (running cost up to ``eta``) + (inner estimate of the value at
    ``(eta, Y(eta))`` with ``budgets[1]`` paths).  At ``eta = T`` the inner
    value is the terminal cost; at ``eta = t0`` the inner estimate reuses the
    outer streams, so both ends agree exactly.

    The inner estimate picks its best continuation per outer path, while the
    open-loop class fixes it in advance; the two agree when the inner argmin
    does not depend on the path, which ``inner_argmin_agreement`` reports.
    """
    n_out, n_in = budgets
    grid = y0.grid
    T = strategy_class.knots[-1]
    _knot_index(strategy_class.knots, eta)
    lhs = estimate_value(t0, y0, ctrl, cost, cfg, n_out, strategy_class, master_seed, "value", chunk_budget)
    if abs(eta - t0) <= _KNOT_TOL:
        rhs = estimate_value(t0, y0, ctrl, cost, cfg, n_out, strategy_class, master_seed, "value", chunk_budget)
        return DPPReport(lhs.mean, rhs.mean, lhs.std_error, rhs.std_error, eta, 1.0)
    first, _ = strategy_class.restrict(t0, eta)
    S1 = len(first)
    per = max(1, chunk_budget // S1)
    outer_cost, outer_state = [], []
    for idx in _chunks(n_out, per):
        noise = NoiseSource(grid, cfg.cov, path_streams(master_seed, idx, "value"))
        yb = np.broadcast_to(y0.coeffs, (len(idx),) + grid.field_shape)
        c, yf = strategy_costs(yb, t0, eta, first, ctrl, cost, cfg, noise, terminal=abs(eta - T) <= _KNOT_TOL)
        outer_cost.append(c)
        outer_state.append(yf)
    oc = np.concatenate(outer_cost, axis=1)
    if abs(eta - T) <= _KNOT_TOL:
        means, ses = _summarise(oc)
        b = int(np.argmin(means))
        return DPPReport(lhs.mean, float(means[b]), lhs.std_error, float(ses[b]), eta, 1.0)
    ys = np.concatenate(outer_state, axis=1)
    second, _ = strategy_class.restrict(eta, T)
    S2 = len(second)
    inner_val = np.zeros((S1, n_out))
    inner_arg = np.zeros((S1, n_out), dtype=int)
    per_in = max(1, chunk_budget // (S2 * n_in))
    for s1 in range(S1):
        for idx in _chunks(n_out, per_in):
            streams = []
            for p in idx:
                streams.extend(path_streams(master_seed, range(n_in), "inner", p))
            noise = NoiseSource(grid, cfg.cov, streams)
            start = ys[s1, idx.start : idx.stop]
            yb = np.repeat(start, n_in, axis=0)
            c, _ = strategy_costs(
                yb, eta, T, second, ctrl, cost, cfg, noise, terminal=True, t_origin=t0
            )
            c = c.reshape(S2, len(idx), n_in).mean(axis=2)
            inner_val[s1, idx.start : idx.stop] = c.min(axis=0)
            inner_arg[s1, idx.start : idx.stop] = c.argmin(axis=0)
    total = oc + inner_val
    means, ses = _summarise(total)
    b = int(np.argmin(means))
    counts = np.bincount(inner_arg[b], minlength=S2)
    agree = float(counts.max() / n_out)
    return DPPReport(lhs.mean, float(means[b]), lhs.std_error, float(ses[b]), eta, agree)


def value_growth_constant(cost: CostSpec, cfg: TrajectoryConfig, grid: SpectralGrid) -> tuple[float, float]:
    """Declared ``(C, k)`` with ``0 <= V(t0, y) <= C (1 + |y|_V^k)`` for the enstrophy example.

    Bounding by the zero control and the second-moment energy balance:
    ``E int |grad Y|^2 <= (|y|^2 + Tr(Q) tau) / (2 mu)`` and
    ``E |Y(T)|^2 <= |y|^2 + Tr(Q) tau``.  The quadrature puts weight
    ``dt / 2`` on ``|grad y|^2`` at the initial time, covered by
    ``|y|_V^2``; a factor 2 absorbs the ``O(dt^2)`` terms of the discrete
    balance.
    """
    if cost.kind != "enstrophy":
        raise DomainError("growth constant is derived for the enstrophy example only")
    tau = cfg.T - cfg.t0
    trq = cfg.cov.trace_q(grid)
    C = 2.0 * (1.0 + 1.0 / (2 * cfg.params.mu)) * max(1.0, trq * tau)
    return C, 2.0


# -- continuity of the cost in the initial state ------------------------------


def concave_majorant(x: np.ndarray, y: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Least concave majorant through ``(0, 0)`` of the points ``(x_i, y_i)``, nondecreasing."""
    pts = sorted(zip([0.0] + list(map(float, x)), [0.0] + list(map(float, y))))
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (y2 - y1) * (p[0] - x1) <= (p[1] - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append(p)
    hx = np.array([h[0] for h in hull])
    hy = np.maximum.accumulate(np.array([h[1] for h in hull]))
    return lambda s: np.interp(s, hx, hy, right=hy[-1])


@dataclass(frozen=True)
class ModulusTable:
    separations: np.ndarray
    cap_norms: np.ndarray
    differences: np.ndarray

    def median_by_separation(self, rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Median difference per separation; separations within ``rtol`` are pooled."""
        order = np.argsort(self.separations)
        s, d = self.separations[order], self.differences[order]
        groups = np.concatenate([[0], np.cumsum(np.diff(s) > rtol * np.abs(s[1:]))])
        seps = np.array([s[groups == i].mean() for i in range(groups[-1] + 1)])
        meds = np.array([np.median(d[groups == i]) for i in range(groups[-1] + 1)])
        return seps, meds

    def modulus(self, r_cap: float) -> Callable[[np.ndarray], np.ndarray]:
        sel = self.cap_norms <= r_cap
        return concave_majorant(self.separations[sel], self.differences[sel])


def value_continuity_probe(
    t0: float,
    y_pairs: Sequence[tuple[VelocityField, VelocityField]],
    ctrl: ControlSet,
    cost: CostSpec,
    cfg: TrajectoryConfig,
    strategy: Strategy,
    seeds: Sequence[int],
) -> ModulusTable:
    """``|J(t0, y; a) - J(t0, x; a)|`` with shared noise and strategy, per pair and seed."""
    grid = ctrl.grid
    sclass = StrategyClass(strategy.knots, (strategy.choices,))
    seps, caps, diffs = [], [], []
    for y, x in y_pairs:
        sep = (y - x).h_norm()
        cap = max(math.sqrt(y.h_norm() ** 2 + float(grid.norm2(y.coeffs, grid.stokes_eigenvalues))),
                  math.sqrt(x.h_norm() ** 2 + float(grid.norm2(x.coeffs, grid.stokes_eigenvalues))))
        noise = NoiseSource(grid, cfg.cov, path_streams(0, list(seeds), "probe"))
        pair = np.stack([np.broadcast_to(y.coeffs, (len(seeds),) + grid.field_shape),
                         np.broadcast_to(x.coeffs, (len(seeds),) + grid.field_shape)])
        c, _ = strategy_costs(pair, t0, strategy.knots[-1], sclass, ctrl, cost, cfg, noise, terminal=True)
        d = np.abs(c[0, 0] - c[0, 1])
        seps.extend([sep] * len(seeds))
        caps.extend([cap] * len(seeds))
        diffs.extend(d.tolist())
    return ModulusTable(np.array(seps), np.array(caps), np.array(diffs))
