import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scbf.control import (
    ControlSet,
    CostSpec,
    EmptyControlSetError,
    Strategy,
    StrategyClass,
    concave_majorant,
    control_operator_K,
    cost_J,
    discount_tail_bound,
    dpp_residual,
    enstrophy_cost,
    enstrophy_cost_spec,
    estimate_value,
    feedback_map_M,
    hamiltonian_F,
    hamiltonian_F_closed_form,
    hamiltonian_h,
    planar_ball_candidates,
    value_continuity_probe,
)
from scbf.dynamics import TrajectoryConfig, simulate_trajectory
from scbf.errors import DomainError, GridMismatchError
from scbf.noise import CovarianceSpec, path_stream
from scbf.operators import PhysicalParams
from scbf.spectral_core import SpectralGrid, VelocityField, random_field

G = SpectralGrid(2, 16)
G8 = SpectralGrid(2, 8)
PAR = PhysicalParams(0.5, 1.0, 1.0, 4.0)
COV = CovarianceSpec(5.0, 0.5)
seeds = st.integers(0, 2**32 - 1)


def unit(grid, k, a):
    u = VelocityField.single_mode(grid, k, a)
    return u * (1 / u.h_norm())


def three_candidates(grid, R=1.0):
    e = unit(grid, (1, 0), (0.0, 1.0))
    return ControlSet((VelocityField.zeros(grid), e * R, e * -R), R)


class TestCosts:
    def test_enstrophy_values(self):
        z = VelocityField.zeros(G)
        assert enstrophy_cost(z, z) == 0
        a = VelocityField.constant(G, [2.0, 0.0])
        assert enstrophy_cost(z, a) == pytest.approx(2.0, rel=1e-14)
        y = VelocityField.single_mode(G, (1, 2), (2.0, -1.0))
        # dense-grid quadrature of the explicit curl
        assert enstrophy_cost(y, z) == pytest.approx(493.4802200544676, rel=1e-12)

    def test_enstrophy_three_dimensions(self):
        g = SpectralGrid(3, 8)
        y = VelocityField.single_mode(g, (1, 0, 0), (0.0, 1.0, 0.0))
        # |2 pi k x a|^2 L^3 / 2
        assert enstrophy_cost(y, VelocityField.zeros(g)) == pytest.approx(2 * math.pi**2, rel=1e-13)

    def test_K_isometry_into_V(self):
        a = random_field(G, np.random.default_rng(0))
        ka = control_operator_K(a)
        v2 = G.norm2(ka.coeffs) + G.norm2(ka.coeffs, G.stokes_eigenvalues)
        assert v2 == pytest.approx(a.h_norm() ** 2, rel=1e-13)
        assert control_operator_K(VelocityField.zeros(G)).h_norm() == 0
        b = random_field(G, np.random.default_rng(1))
        assert np.allclose(control_operator_K(a + b).coeffs, (ka + control_operator_K(b)).coeffs, atol=1e-13)

    def test_K_single_mode(self):
        a = VelocityField.single_mode(G, (2, 1), (1.0, -2.0))
        lam = (2 * math.pi) ** 2 * 5
        assert np.allclose(control_operator_K(a).coeffs, a.coeffs / math.sqrt(1 + lam), rtol=1e-14)


class TestHamiltonian:
    R = 0.7

    def test_h_values(self):
        z = VelocityField.zeros(G)
        assert hamiltonian_h(z, self.R) == 0
        e = unit(G, (1, 1), (1.0, -1.0))
        assert hamiltonian_h(e * (2 * self.R), self.R) == pytest.approx(-1.5 * self.R**2, rel=1e-14)

    def test_h_continuous_at_kink(self):
        e = unit(G, (1, 1), (1.0, -1.0))
        inside = -0.5 * self.R**2
        assert abs(hamiltonian_h(e * self.R, self.R) - inside) <= 1e-12
        assert abs(hamiltonian_h(e * (self.R * (1 + 1e-13)), self.R) - inside) <= 1e-12

    def test_h_concave_along_rays(self):
        e = unit(G, (0, 1), (1.0, 0.0))
        rs = np.linspace(0, 3 * self.R, 61)
        vals = np.array([hamiltonian_h(e * r, self.R) for r in rs])
        assert np.all(np.diff(vals, 2) <= 1e-12)

    def test_feedback_values(self):
        assert feedback_map_M(VelocityField.zeros(G), self.R).h_norm() == 0
        z = unit(G, (1, 0), (0.0, 1.0)) * (3 * self.R)
        m = feedback_map_M(z, self.R)
        assert m.h_norm() == pytest.approx(self.R, rel=1e-14)
        assert np.allclose(m.coeffs, -z.coeffs / 3)

    @given(seeds, st.floats(0.1, 3.0))
    def test_feedback_in_ball(self, seed, scale):
        z = random_field(G8, np.random.default_rng(seed), h_norm=scale * self.R)
        n = feedback_map_M(z, self.R).h_norm()
        assert n <= self.R * (1 + 1e-14)
        if scale >= 1:
            assert n == pytest.approx(self.R, rel=1e-13)

    @given(seeds, st.sampled_from([0.3, 0.8, 1.3, 2.5]))
    def test_feedback_is_gradient(self, seed, scale):
        r = np.random.default_rng(seed)
        z = random_field(G8, r, h_norm=scale * self.R)
        d = random_field(G8, r)
        eps = 1e-6
        fd = (hamiltonian_h(z + d * eps, self.R) - hamiltonian_h(z - d * eps, self.R)) / (2 * eps)
        ex = feedback_map_M(z, self.R).inner(d)
        assert abs(fd - ex) <= 1e-5 * abs(ex)

    def test_F_singleton_zero(self):
        cost = enstrophy_cost_spec(self.R)
        y = random_field(G, np.random.default_rng(0))
        p = random_field(G, np.random.default_rng(1))
        z = VelocityField.zeros(G)
        ctrl = ControlSet((z,), self.R)
        assert hamiltonian_F(0.0, y, p, ctrl, cost) == pytest.approx(enstrophy_cost(y, z), rel=1e-14)

    @given(seeds)
    def test_F_concave_in_p(self, seed):
        r = np.random.default_rng(seed)
        cost = enstrophy_cost_spec(self.R)
        ctrl = planar_ball_candidates(unit(G8, (1, 0), (0.0, 1.0)), unit(G8, (0, 1), (1.0, 0.0)), self.R, 3, 8)
        y, p, q = (random_field(G8, r, h_norm=3.0) for _ in range(3))
        mid = hamiltonian_F(0.0, y, (p + q) * 0.5, ctrl, cost)
        avg = 0.5 * hamiltonian_F(0.0, y, p, ctrl, cost) + 0.5 * hamiltonian_F(0.0, y, q, ctrl, cost)
        assert mid >= avg - 1e-12 * abs(avg)

    def test_F_above_closed_form(self):
        cost = enstrophy_cost_spec(self.R)
        y = random_field(G, np.random.default_rng(2))
        p = random_field(G, np.random.default_rng(3), h_norm=5.0)
        ctrl = ControlSet(
            (VelocityField.zeros(G), unit(G, (1, 0), (0.0, 1.0)) * self.R, unit(G, (0, 1), (1.0, 0.0)) * -self.R),
            self.R,
        )
        assert hamiltonian_F(0.0, y, p, ctrl, cost) >= hamiltonian_F_closed_form(y, p, self.R)


class TestControlSet:
    def test_requires_zero(self):
        with pytest.raises(DomainError):
            ControlSet((unit(G, (1, 0), (0.0, 1.0)),), 2.0)

    def test_ball_constraint(self):
        with pytest.raises(DomainError):
            ControlSet((VelocityField.zeros(G), unit(G, (1, 0), (0.0, 1.0)) * 2), 1.0)

    def test_empty(self):
        with pytest.raises(EmptyControlSetError):
            ControlSet((), 1.0)
        with pytest.raises(EmptyControlSetError):
            StrategyClass((0.0, 1.0), ())

    def test_strategy_segments(self):
        s = Strategy((0.0, 0.5, 1.0), (2, 1))
        assert [s.choice_at(t) for t in (0.0, 0.49, 0.5, 1.0)] == [2, 2, 1, 1]
        with pytest.raises(DomainError):
            s.segment(1.5)

    def test_restrict(self):
        sc = StrategyClass.enumerate((0.0, 0.5, 1.0), 3)
        first, where = sc.restrict(0.0, 0.5)
        assert len(sc) == 9 and len(first) == 3
        assert [first.choices[w] for w in where] == [cs[:1] for cs in sc.choices]


class TestCostFunctional:
    def cfg(self, T=0.2, dt=0.02, cov=COV):
        return TrajectoryConfig(0.0, T, dt, PAR, cov, 1)

    def test_static_control(self):
        quiet = CovarianceSpec(5.0, 0.0)
        cost = enstrophy_cost_spec(1.0)
        ctrl = three_candidates(G8)
        strat = Strategy((0.0, 0.2), (1,))
        rec = simulate_trajectory(VelocityField.zeros(G8), self.cfg(cov=quiet), None, None, store_states=True)
        # exact trapezoid of the constant 1/2 |a|^2 on a zero trajectory
        assert cost_J(rec, strat, cost, ctrl) == pytest.approx(0.2 * 0.5, rel=1e-13)

    def test_terminal_only(self):
        cost = CostSpec(lambda g, y, a: np.zeros(y.shape[: -g.dim - 1]), lambda g, y: g.norm2(y),
                        lambda t, a, g: a)
        ctrl = three_candidates(G8)
        y0 = random_field(G8, np.random.default_rng(0))
        rec = simulate_trajectory(y0, self.cfg(), None, 5, store_states=True)
        assert cost_J(rec, Strategy((0.0, 0.2), (0,)), cost, ctrl) == pytest.approx(rec.final_state.h_norm() ** 2, rel=1e-13)

    def test_knots_must_be_record_times(self):
        cost = enstrophy_cost_spec(1.0)
        rec = simulate_trajectory(VelocityField.zeros(G8), self.cfg(), None, 0, store_states=True)
        with pytest.raises(GridMismatchError):
            cost_J(rec, Strategy((0.0, 0.07, 0.2), (0, 1)), cost, three_candidates(G8))

    def test_discounted_tail(self):
        lam, c = 1.0, 0.8
        cost = CostSpec(lambda g, y, a: np.full(y.shape[: -g.dim - 1], c), lambda g, y: 0.0 * g.norm2(y),
                        lambda t, a, g: a, discount=lam, growth=(1.0, 2.0))
        cfg = TrajectoryConfig(0.0, 3.0, 0.01, PAR, CovarianceSpec(5.0, 0.0), 1)
        rec = simulate_trajectory(VelocityField.zeros(G8), cfg, None, None, store_states=True)
        J = cost_J(rec, Strategy((0.0, 3.0), (0,)), cost, three_candidates(G8))
        limit = c / lam
        assert abs(limit - J) <= discount_tail_bound(cost, 0.0, 3.0)
        assert J == pytest.approx(c * (1 - math.exp(-3.0)) / lam, rel=1e-4)


class TestValue:
    cfg = TrajectoryConfig(0.0, 0.1, 0.05, PAR, COV, 1)
    knots = (0.0, 0.05, 0.1)

    def test_singleton_zero_matches_trajectory_costs(self):
        cost = enstrophy_cost_spec(1.0)
        ctrl = three_candidates(G8)
        y0 = random_field(G8, np.random.default_rng(0), h_norm=0.5)
        sc = StrategyClass(self.knots, ((0, 0),))
        est = estimate_value(0.0, y0, ctrl, cost, self.cfg, 8, sc, master_seed=3)
        ref = [
            cost_J(simulate_trajectory(y0, self.cfg, None, path_stream(3, p, "value"), store_states=True),
                   Strategy(self.knots, (0, 0)), cost, ctrl)
            for p in range(8)
        ]
        assert est.mean == pytest.approx(np.mean(ref), rel=1e-12)

    def test_refinement_monotone(self):
        cost = enstrophy_cost_spec(1.0)
        ctrl = three_candidates(G8)
        y0 = random_field(G8, np.random.default_rng(1), h_norm=0.8)
        small = estimate_value(0.0, y0, ctrl, cost, self.cfg, 20, StrategyClass.enumerate(self.knots, 3, [0, 1]))
        big = estimate_value(0.0, y0, ctrl, cost, self.cfg, 20, StrategyClass.enumerate(self.knots, 3))
        assert big.mean <= small.mean

    @pytest.mark.parametrize("eta", [0.0, 0.1])
    def test_dpp_exact_ends(self, eta):
        cost = enstrophy_cost_spec(1.0)
        ctrl = three_candidates(G8)
        y0 = random_field(G8, np.random.default_rng(2), h_norm=0.5)
        rep = dpp_residual(0.0, y0, eta, ctrl, cost, self.cfg, (10, 5), StrategyClass.enumerate(self.knots, 3))
        assert rep.residual == 0.0

    def test_eta_must_be_knot(self):
        ctrl = three_candidates(G8)
        with pytest.raises(DomainError):
            dpp_residual(0.0, VelocityField.zeros(G8), 0.03, ctrl, enstrophy_cost_spec(1.0), self.cfg, (4, 2),
                         StrategyClass.enumerate(self.knots, 3))


class TestContinuityProbe:
    cfg = TrajectoryConfig(0.0, 0.1, 0.02, PAR, COV, 1)

    def setup_method(self):
        self.ctrl = three_candidates(G8)
        self.cost = enstrophy_cost_spec(1.0)
        self.strat = Strategy((0.0, 0.1), (1,))

    def test_identical_pair(self):
        y = random_field(G8, np.random.default_rng(0))
        tab = value_continuity_probe(0.0, [(y, y)], self.ctrl, self.cost, self.cfg, self.strat, range(5))
        assert np.all(tab.differences == 0)

    def test_medians_decrease_with_separation(self):
        pairs = []
        for j, h in enumerate((0.5, 1.0)):
            base = random_field(G8, np.random.default_rng(j), h_norm=h)
            for i, sep in enumerate((1e-1, 1e-2, 1e-3)):
                pairs.append((base, base + random_field(G8, np.random.default_rng(10 + i), h_norm=sep)))
        tab = value_continuity_probe(0.0, pairs, self.ctrl, self.cost, self.cfg, self.strat, range(20))
        seps, meds = tab.median_by_separation()
        assert np.all(np.diff(meds) > 0)  # separations come back ascending
        # the two bases have V norms near 6 and 12
        assert np.sum(tab.cap_norms < 7) == np.sum(tab.cap_norms > 11) == 60
        m_small, m_big = tab.modulus(7.0), tab.modulus(14.0)
        assert np.all(m_small(seps) > 0)
        assert np.all(m_big(seps) >= m_small(seps))

    def test_concave_majorant(self):
        w = concave_majorant(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.5, 2.5]))
        xs = np.linspace(0, 4, 41)
        vals = w(xs)
        assert vals[0] == 0
        assert np.all(np.diff(vals) >= 0)
        assert np.all(np.diff(vals, 2) <= 1e-12)
        assert np.all(w(np.array([1.0, 3.0])) >= [1.0, 2.5])
