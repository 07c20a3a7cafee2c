import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scbf.errors import DomainError
from scbf.noise import (
    CovarianceSpec,
    NoiseSource,
    path_stream,
    path_streams,
    sample_increments,
    sample_wiener_increment,
    validate_hypothesis_trQ1,
)
from scbf.spectral_core import SpectralGrid, VelocityField

G = SpectralGrid(2, 16)


def test_traces_match_enumeration():
    cov = CovarianceSpec(5.0, 0.7)
    # explicit loop over the two-thirds band with d-1 directions (d at k=0)
    assert cov.trace_q(G) == pytest.approx(1.5736291583623676, rel=1e-13)
    assert cov.trace_q1(G) == pytest.approx(60.17769313423102, rel=1e-13)


def test_eigenvalues_nonnegative_and_banded():
    q = CovarianceSpec(3.0, 2.0).eigenvalues(G)
    assert np.all(q >= 0)
    assert np.all(q[~G.dealias_mask] == 0)


def test_negative_sigma_rejected():
    with pytest.raises(DomainError):
        CovarianceSpec(5.0, -1.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_validator_boundary(dim):
    g = SpectralGrid(dim, 8)
    assert validate_hypothesis_trQ1(CovarianceSpec(dim + 3, 1.0), g).passed
    assert not validate_hypothesis_trQ1(CovarianceSpec(dim + 2, 1.0), g).passed
    rep = validate_hypothesis_trQ1(CovarianceSpec(0.0, 1.0), g)
    assert not rep.passed and np.isfinite(rep.trace_q1)


def test_zero_sigma_gives_zero():
    dw = sample_wiener_increment(G, CovarianceSpec(5.0, 0.0), 0.1, path_stream(0, 0))
    assert np.all(dw.coeffs == 0)


def test_dt_must_be_positive():
    with pytest.raises(DomainError):
        sample_wiener_increment(G, CovarianceSpec(5.0, 1.0), 0.0, path_stream(0, 0))


@given(st.integers(0, 2**32 - 1))
def test_increment_is_valid_field(seed):
    dw = sample_wiener_increment(G, CovarianceSpec(4.0, 1.0), 0.01, path_stream(seed, 0))
    # the checked constructor raises on divergence or broken symmetry
    VelocityField(G, dw.coeffs)
    assert dw.is_dealiased()


def test_trace_identities_monte_carlo():
    cov = CovarianceSpec(5.0, 1.0)
    dt = 0.01
    rng = path_stream(7, 0, "mc")
    n, eh, eg = 100_000, 0.0, 0.0
    for _ in range(n // 10_000):
        dw = sample_increments(G, cov, dt, rng, 10_000)
        eh += G.norm2(dw).sum()
        eg += G.norm2(dw, G.stokes_eigenvalues).sum()
    assert eh / n / (cov.trace_q(G) * dt) == pytest.approx(1.0, abs=0.02)
    assert eg / n / (cov.trace_q1(G) * dt) == pytest.approx(1.0, abs=0.02)


def test_variance_linear_in_dt():
    g = SpectralGrid(2, 8)
    cov = CovarianceSpec(4.0, 1.0)
    a = sample_increments(g, cov, 0.01, path_stream(0, 0), 100_000)
    b = sample_increments(g, cov, 0.02, path_stream(0, 1), 100_000)
    va, vb = np.var(a[:, 1, 1, 0].imag), np.var(b[:, 1, 1, 0].imag)
    assert vb / va == pytest.approx(2.0, rel=0.05)


def test_streams_are_order_independent():
    a = path_streams(5, [0, 1, 2], "x")
    b = path_streams(5, [2, 0], "x")
    assert np.array_equal(a[2].standard_normal(4), b[0].standard_normal(4))
    assert not np.array_equal(path_stream(5, 0, "x").standard_normal(4), path_stream(5, 0, "y").standard_normal(4))


def test_noise_source_matches_single_draws():
    cov = CovarianceSpec(5.0, 1.0)
    src = NoiseSource(G, cov, path_streams(3, range(4), "t"), buffer_bytes=3 * 4 * 16 * 2 * 16 * 16)
    got = np.stack([src.next(0.1) for _ in range(7)])
    singles = path_streams(3, range(4), "t")
    ref = np.stack([[sample_wiener_increment(G, cov, 0.1, s).coeffs for s in singles] for _ in range(7)])
    assert np.array_equal(got, ref)
