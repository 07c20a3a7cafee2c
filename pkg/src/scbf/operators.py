"""Convective term B, absorption term C, its Gateaux derivative, and checks.

Quadratic products use the two-thirds rule: inputs are restricted to the
band ``|k_j| < N/3`` before multiplying, so the product is alias-free on the
``N`` grid.  The non-polynomial absorption term is evaluated on the
2x-refined grid.  Integrals of nonlinear pointwise expressions (``L^{r+1}``
norms, weighted norms) are trapezoid sums on that same 2x grid, which keeps
``<C(u), u>`` and the pointwise inequalities consistent to round-off rather
than to quadrature error.  The torus equality check is the exception: its
right side is a collocation-grid quadrature, so its residual measures
resolution and shrinks under refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .spectral_core import SpectralGrid, VelocityField

__all__ = [
    "PhysicalParams",
    "varrho",
    "bilinear_B",
    "trilinear_b",
    "absorption_C",
    "absorption_C_gateaux",
    "MonotonicityReport",
    "check_monotonicity_C",
    "TorusEqualityReport",
    "torus_equality_terms",
    "check_torus_equality",
    "InequalityReport",
    "b_estimate_report",
    "check_B_estimate",
    "b_stokes_estimate_report",
    "check_B_stokes_estimate",
    "QUAD_REFINE",
]

QUAD_REFINE = 2
_CRIT_TOL = 1e-12


@dataclass(frozen=True)
class PhysicalParams:
    mu: float
    alpha: float
    beta: float
    r: float

    def __post_init__(self):
        for name in ("mu", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.r >= 1:
            raise DomainError(f"absorption exponent r must be >= 1, got {self.r}")

    @property
    def critical_flag(self) -> bool | None:
        """For ``r = 3``: whether ``2 beta mu >= 1``.  ``None`` otherwise."""
        if self.r != 3:
            return None
        return 2.0 * self.beta * self.mu >= 1.0 - _CRIT_TOL

    @property
    def well_posed_regime(self) -> bool:
        return self.r > 3 or bool(self.critical_flag)


def varrho(params: PhysicalParams) -> float:
    """Growth rate of the difference estimate.

    ``(r-3)/(2 mu (r-1)) * (4 / (beta mu (r-1)))^(2/(r-3))`` for ``r > 3``;
    zero for ``r = 3`` when ``2 beta mu >= 1``.
    """
    mu, beta, r = params.mu, params.beta, params.r
    if r > 3:
        return (r - 3) / (2 * mu * (r - 1)) * (4.0 / (beta * mu * (r - 1))) ** (2.0 / (r - 3))
    if params.critical_flag:
        return 0.0
    if r == 3:
        raise DomainError(f"r = 3 needs 2 beta mu >= 1, got {2 * beta * mu:g}")
    raise DomainError(f"estimate needs r >= 3, got r = {r}")


# -- array kernels (leading batch axes allowed) ---------------------------


def _mag(grid: SpectralGrid, phys: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(phys**2, axis=-grid.dim - 1))


def _dot(grid: SpectralGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-grid.dim - 1)


def B_coeffs(grid: SpectralGrid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``P mask[(mask u . grad)(mask v)]`` on coefficient arrays."""
    m = grid.dealias_mask
    um, vm = u * m, v * m
    up = grid.to_physical(um)
    gp = grid.to_physical(grid.gradient(vm))
    adv = np.sum(np.expand_dims(up, -grid.dim - 2) * gp, axis=-grid.dim - 1)
    return grid.project(grid.from_physical(adv) * m)


def _pow_r1(mag: np.ndarray, r: float) -> np.ndarray:
    if r == 1:
        return np.ones_like(mag)
    return mag ** (r - 1)


def C_coeffs(grid: SpectralGrid, u: np.ndarray, r: float) -> np.ndarray:
    """``P(|u|^{r-1} u)`` evaluated on the 2x grid and truncated."""
    up = grid.to_physical(u, QUAD_REFINE)
    g = np.expand_dims(_pow_r1(_mag(grid, up), r), -grid.dim - 1) * up
    return grid.project(grid.from_physical(g, QUAD_REFINE))


def C_and_max(grid: SpectralGrid, u: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
    """``C(u)`` together with ``max |u|`` over the 2x grid (per batch entry)."""
    up = grid.to_physical(u, QUAD_REFINE)
    mag = _mag(grid, up)
    g = np.expand_dims(_pow_r1(mag, r), -grid.dim - 1) * up
    return grid.project(grid.from_physical(g, QUAD_REFINE)), mag.max(axis=grid.spatial_axes)


def lr_power(grid: SpectralGrid, u: np.ndarray, r: float) -> np.ndarray:
    """``|u|_{L^{r+1}}^{r+1}`` by 2x-grid quadrature."""
    return grid.integrate(_mag(grid, grid.to_physical(u, QUAD_REFINE)) ** (r + 1))


def _check_r(params: PhysicalParams) -> None:
    if params.r < 1:
        raise DomainError(f"absorption exponent r must be >= 1, got {params.r}")


def _same(*fields: VelocityField) -> SpectralGrid:
    g = fields[0].grid
    for f in fields[1:]:
        g.check_same(f.grid)
    return g


# -- public operators -----------------------------------------------------


def bilinear_B(u: VelocityField, v: VelocityField) -> VelocityField:
    g = _same(u, v)
    return VelocityField(g, B_coeffs(g, u.coeffs, v.coeffs), check=False)


def trilinear_b(u: VelocityField, v: VelocityField, w: VelocityField) -> float:
    """``int (u . grad) v . w`` by direct quadrature of the band-limited parts."""
    g = _same(u, v, w)
    m = g.dealias_mask
    up = g.to_physical(u.coeffs * m, QUAD_REFINE)
    gp = g.to_physical(g.gradient(v.coeffs * m), QUAD_REFINE)
    wp = g.to_physical(w.coeffs * m, QUAD_REFINE)
    integrand = np.einsum("j...,ij...,i...->...", up, gp, wp)
    return float(g.integrate(integrand))


def absorption_C(u: VelocityField, params: PhysicalParams) -> VelocityField:
    _check_r(params)
    return VelocityField(u.grid, C_coeffs(u.grid, u.coeffs, params.r), check=False)


def absorption_C_gateaux(
    u: VelocityField, v: VelocityField, params: PhysicalParams
) -> VelocityField:
    """Directional derivative ``C'(u) v``.

    ``P(|u|^{r-1} v) + (r-1) P(|u|^{r-3} (u.v) u)``, with the second term
    set to zero where ``u = 0`` when ``r < 3``.  For ``r = 1`` this is ``P v``.
    """
    _check_r(params)
    g = _same(u, v)
    r = params.r
    if r == 1:
        return VelocityField(g, g.project(v.coeffs), check=False)
    up = g.to_physical(u.coeffs, QUAD_REFINE)
    vp = g.to_physical(v.coeffs, QUAD_REFINE)
    mag = _mag(g, up)
    if r < 3:
        safe = np.where(mag > 0, mag, 1.0)
        w3 = np.where(mag > 0, safe ** (r - 3), 0.0)
    else:
        w3 = mag ** (r - 3)
    out = mag ** (r - 1) * vp + (r - 1) * (w3 * _dot(g, up, vp)) * up
    return VelocityField(g, g.project(g.from_physical(out, QUAD_REFINE)), check=False)


# -- monotonicity ---------------------------------------------------------


@dataclass(frozen=True)
class MonotonicityReport:
    """``lhs = <C(u)-C(v), u-v>`` against its lower bounds and the upper bound."""

    lhs: float
    lower_weighted: float
    lower_lr: float
    cross: float
    upper: float
    scale: float

    @property
    def slacks(self) -> dict[str, float]:
        return {
            "lhs>=weighted": self.lhs - self.lower_weighted,
            "weighted>=lr": self.lower_weighted - self.lower_lr,
            "upper>=cross": self.upper - abs(self.cross),
        }

    @property
    def min_relative_slack(self) -> float:
        if self.scale == 0:
            return 0.0
        return min(self.slacks.values()) / self.scale

    def holds(self, tol: float = 1e-9) -> bool:
        return self.min_relative_slack >= -tol


def check_monotonicity_C(
    u: VelocityField, v: VelocityField, params: PhysicalParams, w: VelocityField | None = None
) -> MonotonicityReport:
    """Two-sided bounds for the absorption operator.

    Lower chain: ``lhs >= 1/2 |(|u|^{(r-1)/2} z)|^2 + 1/2 |(|v|^{(r-1)/2} z)|^2
    >= 2^{1-r} |z|_{L^{r+1}}^{r+1}`` with ``z = u - v``.  Upper bound:
    ``|<C(u)-C(v), w>| <= r (|u| + |v|)^{r-1} |z| |w|`` in ``L^{r+1}`` norms,
    with ``w = z`` unless given.
    """
    _check_r(params)
    g = _same(u, v)
    r = params.r
    z = u.coeffs - v.coeffs
    wc = z if w is None else w.coeffs
    up = g.to_physical(u.coeffs, QUAD_REFINE)
    vp = g.to_physical(v.coeffs, QUAD_REFINE)
    zp = up - vp
    wp = g.to_physical(wc, QUAD_REFINE)
    mu_, mv_, mz, mw = (_mag(g, a) for a in (up, vp, zp, wp))
    diff = _pow_r1(mu_, r) * up - _pow_r1(mv_, r) * vp
    lhs = float(g.integrate(_dot(g, diff, zp)))
    cross = float(g.integrate(_dot(g, diff, wp)))
    z2 = mz**2
    lower_w = float(0.5 * g.integrate(_pow_r1(mu_, r) * z2) + 0.5 * g.integrate(_pow_r1(mv_, r) * z2))
    p = r + 1
    lr = lambda a: float(g.integrate(a**p) ** (1 / p))  # noqa: E731
    lower_lr = 2.0 ** (1 - r) * lr(mz) ** p
    upper = r * (lr(mu_) + lr(mv_)) ** (r - 1) * lr(mz) * lr(mw)
    scale = max(abs(lhs), lower_w, lower_lr, abs(cross), upper)
    return MonotonicityReport(lhs, lower_w, lower_lr, cross, upper, scale)


# -- torus equality -------------------------------------------------------


@dataclass(frozen=True)
class TorusEqualityReport:
    """``(C(u), Au)`` against the two nonnegative right-hand terms."""

    c_au: float
    weighted_grad: float
    grad_power: float

    @property
    def scale(self) -> float:
        return max(abs(self.c_au), self.weighted_grad, self.grad_power)

    @property
    def residual(self) -> float:
        if self.scale == 0:
            return 0.0
        return abs(self.c_au - self.weighted_grad - self.grad_power) / self.scale


def torus_equality_terms(
    u: VelocityField, params: PhysicalParams, refine: int = 1
) -> TorusEqualityReport:
    """Left side spectrally, right side by chain rule on a collocation grid.

    ``refine`` selects the quadrature grid for the right side (1 is the
    ``N`` grid itself).  The left side always uses the 2x-grid ``C(u)``.

    ``|grad |u|^{(r+1)/2}|^2 = ((r+1)/2)^2 |u|^{r-3} sum_j (u . d_j u)^2``, so
    the second right-hand term is ``(r-1) int |u|^{r-3} sum_j (u . d_j u)^2``.
    """
    _check_r(params)
    g = u.grid
    r = params.r
    c = u.coeffs
    c_au = float(g.inner(C_coeffs(g, c, r), c * g.stokes_eigenvalues))
    up = g.to_physical(c, refine)
    gp = g.to_physical(g.gradient(c), refine)
    mag = _mag(g, up)
    grad2 = np.sum(gp**2, axis=(0, 1))
    weighted = float(g.integrate(_pow_r1(mag, r) * grad2))
    if r == 1:
        return TorusEqualityReport(c_au, weighted, 0.0)
    udg = np.einsum("i...,ij...->j...", up, gp)
    safe = np.where(mag > 0, mag, 1.0)
    w3 = np.where(mag > 0, safe ** (r - 3), 0.0)
    power = float((r - 1) * g.integrate(w3 * np.sum(udg**2, axis=0)))
    return TorusEqualityReport(c_au, weighted, power)


def check_torus_equality(u: VelocityField, params: PhysicalParams, refine: int = 1) -> float:
    """Relative residual of the torus identity, scaled by the largest term."""
    return torus_equality_terms(u, params, refine).residual


# -- convective estimates -------------------------------------------------


@dataclass(frozen=True)
class InequalityReport:
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def scale(self) -> float:
        return max(abs(self.lhs), abs(self.rhs))

    @property
    def relative_slack(self) -> float:
        return self.slack / self.scale if self.scale > 0 else 0.0


def _estimate_domain(params: PhysicalParams) -> float:
    if params.r < 3:
        raise DomainError(f"convective estimate needs r >= 3, got r = {params.r}")
    return varrho(params)


def b_estimate_report(
    u: VelocityField, v: VelocityField, params: PhysicalParams
) -> InequalityReport:
    """``|<B(u)-B(v), w>|`` against ``mu/2 |grad w|^2 + beta/4 |(|v|^{(r-1)/2} w)|^2 + rho |w|^2``.

    At ``r = 3`` (which needs ``2 beta mu >= 1``) the right side is
    ``mu/2 |grad w|^2 + 1/(2 mu) |(|v| w)|^2``.
    """
    g = _same(u, v)
    rho = _estimate_domain(params)
    mu, beta, r = params.mu, params.beta, params.r
    w = u.coeffs - v.coeffs
    lhs = abs(float(g.inner(B_coeffs(g, u.coeffs, u.coeffs) - B_coeffs(g, v.coeffs, v.coeffs), w)))
    grad2 = float(g.norm2(w, g.stokes_eigenvalues))
    vp = g.to_physical(v.coeffs, QUAD_REFINE)
    w2 = _mag(g, g.to_physical(w, QUAD_REFINE)) ** 2
    weighted = float(g.integrate(_mag(g, vp) ** (r - 1) * w2))
    if r == 3:
        rhs = 0.5 * mu * grad2 + weighted / (2 * mu)
    else:
        rhs = 0.5 * mu * grad2 + 0.25 * beta * weighted + rho * float(g.norm2(w))
    return InequalityReport(lhs, rhs)


def check_B_estimate(u: VelocityField, v: VelocityField, params: PhysicalParams) -> float:
    """Absolute slack of the difference estimate (nonnegative when it holds)."""
    return b_estimate_report(u, v, params).slack


def b_stokes_estimate_report(u: VelocityField, params: PhysicalParams) -> InequalityReport:
    """``|(B(u), Au)|`` against ``mu/2 |Au|^2 + beta/4 |(|u|^{(r-1)/2} grad u)|^2 + rho |grad u|^2``.

    At ``r = 3`` the right side is ``mu/2 |Au|^2 + 1/(2 mu) |(|u| grad u)|^2``.
    """
    g = u.grid
    rho = _estimate_domain(params)
    mu, beta, r = params.mu, params.beta, params.r
    c = u.coeffs
    lam = g.stokes_eigenvalues
    lhs = abs(float(g.inner(B_coeffs(g, c, c), c * lam)))
    au2 = float(g.norm2(c, lam**2))
    grad2 = float(g.norm2(c, lam))
    up = g.to_physical(c, QUAD_REFINE)
    gp = g.to_physical(g.gradient(c), QUAD_REFINE)
    g2 = np.sum(gp**2, axis=(0, 1))
    weighted = float(g.integrate(_mag(g, up) ** (r - 1) * g2))
    if r == 3:
        rhs = 0.5 * mu * au2 + weighted / (2 * mu)
    else:
        rhs = 0.5 * mu * au2 + 0.25 * beta * weighted + rho * grad2
    return InequalityReport(lhs, rhs)


def check_B_stokes_estimate(u: VelocityField, params: PhysicalParams) -> float:
    return b_stokes_estimate_report(u, params).slack
