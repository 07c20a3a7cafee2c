"""Acceptance suite: one test per criterion, each emitting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``.  The
dynamic-programming check dominates the wall time (about 20 minutes).
"""

import math
import time

import numpy as np
import pytest

from scbf.control import (
    ControlSet,
    StrategyClass,
    control_operator_K,
    dpp_residual,
    enstrophy_cost_spec,
    estimate_value,
    feedback_map_M,
    hamiltonian_F,
    hamiltonian_F_closed_form,
    hamiltonian_h,
    planar_ball_candidates,
    value_growth_constant,
)
from scbf.dynamics import (
    TrajectoryConfig,
    continuous_dependence_check,
    energy_monitor,
    ensemble_energy_check,
    ou_variance_study,
    simulate_trajectory,
    strong_convergence_study,
)
from scbf.noise import CovarianceSpec, path_stream, sample_increments, validate_hypothesis_trQ1
from scbf.operators import (
    PhysicalParams,
    b_estimate_report,
    b_stokes_estimate_report,
    bilinear_B,
    check_monotonicity_C,
    check_torus_equality,
    C_coeffs,
    lr_power,
)
from scbf.spectral_core import SpectralGrid, VelocityField, lp_norm, norms, random_field, resample

pytestmark = pytest.mark.acceptance


class Clock:
    def __init__(self, budget: float):
        self.budget = budget
        self.start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    @property
    def ok(self) -> bool:
        return self.elapsed <= self.budget

    def __str__(self) -> str:
        return f"{self.elapsed:.1f}s of {self.budget:.0f}s"


def unit(grid, k, a):
    u = VelocityField.single_mode(grid, k, a)
    return u * (1 / u.h_norm())


def rel(a, b):
    s = max(abs(a), abs(b))
    return abs(a - b) / s if s else 0.0


# 1 -------------------------------------------------------------------------


def test_operator_identities(acceptance_line):
    clock = Clock(60)
    worst = {"skew": 0.0, "antisym": 0.0, "pairing": 0.0}
    for dim, n in ((2, 64), (3, 16)):
        g = SpectralGrid(dim, n)
        rng = np.random.default_rng(dim)
        for _ in range(200):
            u, v, w = (random_field(g, rng, h_norm=float(np.exp(rng.uniform(-1, 1)))) for _ in range(3))
            buv = bilinear_B(u, v)
            worst["skew"] = max(worst["skew"], abs(buv.inner(v)) / (buv.h_norm() * v.h_norm()))
            worst["antisym"] = max(worst["antisym"], rel(buv.inner(w), -bilinear_B(u, w).inner(v)))
            for r in (3.0, 3.5, 4.0, 5.0):
                pair = float(g.inner(C_coeffs(g, u.coeffs, r), u.coeffs))
                worst["pairing"] = max(worst["pairing"], rel(pair, lp_norm(u, r + 1) ** (r + 1)))
    ok = worst["skew"] <= 1e-9 and worst["antisym"] <= 1e-9 and worst["pairing"] <= 1e-8 and clock.ok
    acceptance_line(1, "operator identities", ok,
                    f"skew {worst['skew']:.1e}, antisym {worst['antisym']:.1e}, "
                    f"C pairing {worst['pairing']:.1e}, {clock}")
    assert ok


# 2 -------------------------------------------------------------------------


def test_monotonicity_suite(acceptance_line):
    clock = Clock(120)
    worst = 0.0
    for dim, n in ((2, 64), (3, 16)):
        g = SpectralGrid(dim, n)
        for r in (3.0, 4.0, 5.0):
            params = PhysicalParams(0.5, 1.0, 1.0, r)  # 2 beta mu = 1 at r = 3
            rng = np.random.default_rng(int(10 * dim + r))
            for _ in range(200):
                u, v, w = (random_field(g, rng, h_norm=float(np.exp(rng.uniform(-2, 2)))) for _ in range(3))
                slacks = [
                    check_monotonicity_C(u, v, params).min_relative_slack,
                    check_monotonicity_C(u, v, params, w).min_relative_slack,
                    b_estimate_report(u, v, params).relative_slack,
                    b_stokes_estimate_report(u, params).relative_slack,
                ]
                worst = max(worst, -min(slacks))
    ok = worst <= 1e-9 and clock.ok
    acceptance_line(2, "monotonicity and convective estimates", ok,
                    f"worst relative violation {max(worst, 0):.1e}, {clock}")
    assert ok


# 3 -------------------------------------------------------------------------


def test_torus_equality(acceptance_line):
    clock = Clock(60)
    g64, g128 = SpectralGrid(2, 64), SpectralGrid(2, 128)
    u = random_field(g64, np.random.default_rng(0), width=5.0) + VelocityField.constant(g64, [2.4, 1.8])
    res = {}
    for r in (3.0, 4.0):
        p = PhysicalParams(0.5, 1.0, 1.0, r)
        res[r] = (check_torus_equality(u, p), check_torus_equality(resample(u, g128), p))
    ok = all(a <= 1e-6 and b < a for a, b in res.values()) and clock.ok
    acceptance_line(3, "torus equality", ok,
                    ", ".join(f"r={r:g}: {a:.1e} -> {b:.1e}" for r, (a, b) in res.items()) + f", {clock}")
    assert ok


# 4 -------------------------------------------------------------------------


def test_noise_calibration(acceptance_line):
    clock = Clock(60)
    g = SpectralGrid(2, 16)
    cov = CovarianceSpec(5.0, 1.0)
    dt, n = 0.01, 100_000
    rng = path_stream(2024, 0, "calibration")
    eh = eg = 0.0
    for _ in range(n // 10_000):
        dw = sample_increments(g, cov, dt, rng, 10_000)
        eh += g.norm2(dw).sum()
        eg += g.norm2(dw, g.stokes_eigenvalues).sum()
    ratio_q = eh / n / (cov.trace_q(g) * dt)
    ratio_q1 = eg / n / (cov.trace_q1(g) * dt)
    validator = all(
        validate_hypothesis_trQ1(CovarianceSpec(d + 3, 1.0), SpectralGrid(d, 8)).passed
        and not validate_hypothesis_trQ1(CovarianceSpec(d + 2, 1.0), SpectralGrid(d, 8)).passed
        for d in (2, 3)
    )
    ok = abs(ratio_q - 1) <= 0.02 and abs(ratio_q1 - 1) <= 0.02 and validator and clock.ok
    acceptance_line(4, "noise calibration", ok,
                    f"Tr(Q) ratio {ratio_q:.4f}, Tr(Q1) ratio {ratio_q1:.4f}, validator {validator}, {clock}")
    assert ok


# 5 -------------------------------------------------------------------------


def test_integrator_order(acceptance_line):
    clock = Clock(600)
    g = SpectralGrid(2, 32)
    params = PhysicalParams(0.05, 1.0, 1.0, 4.0)
    cfg = TrajectoryConfig(0.0, 1.0, 2**-6, params, CovarianceSpec(5.0, 0.5), 1)
    y0 = random_field(g, np.random.default_rng(0), h_norm=1.0)
    conv = strong_convergence_study(y0, cfg, levels=3, n_paths=64, master_seed=5)

    g8 = SpectralGrid(2, 8)
    ou_cfg = TrajectoryConfig(0.0, 1.0, 1 / 1024, PhysicalParams(0.01, 0.5, 1.0, 3.0),
                              CovarianceSpec(5.0, 1.0), record_every=1024)
    ou = ou_variance_study(g8, ou_cfg, n_paths=10_000, master_seed=11, shells=(1, 2, 4, 5))
    ou_err = float(np.max(ou.relative_error))
    ok = conv.slope >= 0.8 and ou_err <= 0.02 and clock.ok
    acceptance_line(5, "integrator order", ok,
                    f"self-convergence slope {conv.slope:.3f}, OU max shell error {100 * ou_err:.2f}%, {clock}")
    assert ok


# 6 -------------------------------------------------------------------------


def test_energy_estimates(acceptance_line):
    clock = Clock(300)
    g = SpectralGrid(2, 32)
    params = PhysicalParams(0.05, 1.0, 1.0, 4.0)
    cov = CovarianceSpec(5.0, 0.5)
    quiet = TrajectoryConfig(0.0, 1.0, 2**-6, params, CovarianceSpec(5.0, 0.0), 1)
    monotone, idres = True, 0.0
    for seed in range(5):
        y0 = random_field(g, np.random.default_rng(seed), h_norm=1.0)
        rep = energy_monitor(simulate_trajectory(y0, quiet, None, None, track_energy=True), params)
        monotone &= rep.monotone_decay
        idres = max(idres, rep.max_identity_residual)

    R = 1.0
    forcing = control_operator_K(unit(g, (1, 0), (0.0, 1.0)) * R)  # |f|_V = R
    cfg = TrajectoryConfig(0.0, 1.0, 2**-6, params, cov, 4)
    y0 = random_field(g, np.random.default_rng(0), h_norm=1.0, width=4.0)
    ens = ensemble_energy_check(y0, cfg, 1000, 0, forcing, R)
    idres = max(idres, ens.max_identity_residual)
    ok = monotone and ens.holds and idres <= 1e-10 and clock.ok
    acceptance_line(6, "energy estimates", ok,
                    f"monotone decay {monotone}, ensemble bound holds {ens.holds} "
                    f"(margin {ens.margin_in_se:.0f} SE, constant {ens.constant:.3f}), "
                    f"identity residual {idres:.1e}, {clock}")
    assert ok


# 7 -------------------------------------------------------------------------


def test_continuous_dependence(acceptance_line):
    clock = Clock(300)
    g = SpectralGrid(2, 32)
    worst = {}
    for r in (4.0, 3.0):
        params = PhysicalParams(0.5, 1.0, 1.0, r)  # at r = 3, 2 beta mu = 1
        cfg = TrajectoryConfig(0.0, 1.0, 0.01, params, CovarianceSpec(5.0, 0.5), 1)
        worst[r] = 0.0
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            a = random_field(g, rng, h_norm=1.0, width=4.0)
            b = a + random_field(g, rng, h_norm=1e-3, width=4.0)
            worst[r] = max(worst[r], continuous_dependence_check(a, b, cfg, None, seed).max_ratio)
    ok = all(v <= 1.0 for v in worst.values()) and clock.ok
    acceptance_line(7, "continuous dependence", ok,
                    ", ".join(f"r={r:g}: max ratio {v:.6f}" for r, v in worst.items()) + f", {clock}")
    assert ok


# 8 -------------------------------------------------------------------------


def test_hamiltonian_closed_forms(acceptance_line):
    clock = Clock(60)
    g = SpectralGrid(2, 32)
    R = 1.0
    e = unit(g, (1, 2), (2.0, -1.0))
    kink = max(abs(hamiltonian_h(e * R, R) + 0.5 * R**2),
               abs(hamiltonian_h(e * (R * (1 + 1e-15)), R) + 0.5 * R**2))

    fd_worst = 0.0
    rng = np.random.default_rng(8)
    for scale in (0.2, 0.5, 0.9, 1.2, 2.0, 4.0):
        for _ in range(5):
            z = random_field(g, rng, h_norm=scale * R, width=4.0)
            d = random_field(g, rng, width=4.0)
            eps = 1e-6
            fd = (hamiltonian_h(z + d * eps, R) - hamiltonian_h(z - d * eps, R)) / (2 * eps)
            fd_worst = max(fd_worst, rel(fd, feedback_map_M(z, R).inner(d)))

    cost = enstrophy_cost_spec(R)
    y = random_field(g, np.random.default_rng(5), width=4.0)
    p = random_field(g, np.random.default_rng(6), h_norm=3.0, width=4.0)
    kp = control_operator_K(p)
    e1 = kp * (1 / kp.h_norm())
    q = random_field(g, np.random.default_rng(7), width=4.0)
    q = q - e1 * q.inner(e1)
    e2 = q * (1 / q.h_norm())
    closed = hamiltonian_F_closed_form(y, p, R)
    gaps = []
    for m in range(5):
        ctrl = planar_ball_candidates(e1, e2, R, 2 * 2**m, 4 * 2**m, offset=0.1)
        gaps.append(hamiltonian_F(0.0, y, p, ctrl, cost) - closed)
    gaps = np.array(gaps)
    gap_ok = bool(np.all(gaps >= 0) and np.all(np.diff(gaps) <= 0) and gaps[-1] < gaps[0])
    ok = kink <= 1e-12 and fd_worst <= 1e-5 and gap_ok and clock.ok
    acceptance_line(8, "Hamiltonian closed forms", ok,
                    f"kink {kink:.1e}, gradient FD {fd_worst:.1e}, "
                    f"gaps {', '.join(f'{x:.2e}' for x in gaps)}, {clock}")
    assert ok


# 9, 10 ---------------------------------------------------------------------

DPP_GRID = SpectralGrid(2, 32)
DPP_PARAMS = PhysicalParams(0.5, 1.0, 1.0, 4.0)
KNOTS = (0.0, 0.05, 0.1)


def dpp_setup(dt=0.05):
    R = 1.0
    e = unit(DPP_GRID, (1, 0), (0.0, 1.0))
    ctrl = ControlSet((VelocityField.zeros(DPP_GRID), e * R, e * -R), R)
    cfg = TrajectoryConfig(0.0, 0.1, dt, DPP_PARAMS, CovarianceSpec(5.0, 0.5), 1)
    y0 = e * 0.8 + random_field(DPP_GRID, np.random.default_rng(0), h_norm=0.2)
    return ctrl, enstrophy_cost_spec(R), cfg, y0


def test_dpp_residual(acceptance_line):
    clock = Clock(1800)
    ctrl, cost, cfg, y0 = dpp_setup()
    sclass = StrategyClass.enumerate(KNOTS, len(ctrl))
    ends = [dpp_residual(0.0, y0, eta, ctrl, cost, cfg, (500, 2), sclass, master_seed=9).residual
            for eta in (0.0, 0.1)]
    rep = dpp_residual(0.0, y0, 0.05, ctrl, cost, cfg, (500, 200), sclass, master_seed=9)
    ok = rep.within and all(r == 0 for r in ends) and clock.ok
    acceptance_line(9, "dynamic programming residual", ok,
                    f"lhs {rep.lhs:.5f} rhs {rep.rhs:.5f}, |diff| {rep.residual:.2e} vs 3 SE "
                    f"{3 * rep.combined_se:.2e}, ends {ends}, inner argmin agreement "
                    f"{rep.inner_argmin_agreement:.2f}, {clock}")
    assert ok


def test_value_growth(acceptance_line):
    clock = Clock(900)
    ctrl, cost, cfg, _ = dpp_setup()
    g = DPP_GRID
    C, k = value_growth_constant(cost, cfg, g)
    sclass = StrategyClass.enumerate(KNOTS, len(ctrl))
    direction = random_field(g, np.random.default_rng(3), width=4.0)
    direction = direction * (1 / norms(direction).v_norm)
    envelope_ok, worst = True, 0.0
    for v in np.linspace(0.0, 5.0, 11):
        y0 = direction * v
        est = estimate_value(0.0, y0, ctrl, cost, cfg, 200, sclass, master_seed=21)
        bound = C * (1 + v**k)
        envelope_ok &= 0 <= est.mean <= bound
        worst = max(worst, est.mean / bound)

    # Refinement by candidates and by knots, same noise paths throughout.
    y0 = direction * 2.0
    coarse = estimate_value(0.0, y0, ctrl, cost, cfg, 200, StrategyClass.enumerate(KNOTS, 3, [0, 1]), 21)
    full = estimate_value(0.0, y0, ctrl, cost, cfg, 200, sclass, 21)
    ctrl, cost, fine_cfg, _ = dpp_setup(dt=0.025)
    knots4 = (0.0, 0.025, 0.05, 0.075, 0.1)
    two_seg = estimate_value(0.0, y0, ctrl, cost, fine_cfg, 200, StrategyClass.enumerate(KNOTS, 3), 21)
    four_seg = estimate_value(0.0, y0, ctrl, cost, fine_cfg, 200, StrategyClass.enumerate(knots4, 3), 21)
    refine_ok = full.mean <= coarse.mean and four_seg.mean <= two_seg.mean
    ok = envelope_ok and refine_ok and clock.ok
    acceptance_line(10, "value growth and refinement", ok,
                    f"C={C:.3f}, k={k:g}, max estimate/envelope {worst:.3f}; candidates "
                    f"{coarse.mean:.5f} -> {full.mean:.5f}, knots {two_seg.mean:.5f} -> {four_seg.mean:.5f}, "
                    f"{clock}")
    assert ok
