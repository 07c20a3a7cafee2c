"""Fourier representation of divergence-free fields on the periodic torus.

A field is stored as the full complex coefficient array ``c[i, k]`` of

    u_i(x) = sum_k c[i, k] exp(2 pi i k.x / L)

with ``k`` in numpy FFT ordering along every spatial axis.  The Nyquist
index ``-N/2`` is always held at zero, so the live index set is
``|k_j| < N/2``.  The mean mode ``k = 0`` is a genuine degree of freedom:
nothing here assumes zero average, and every inverse is routed through
``A + I`` rather than ``A``.

Most functions come in two flavours: a public one taking and returning
:class:`VelocityField`, and an array-level helper (leading underscore or
``*_coeffs`` suffix) that accepts arbitrary leading batch axes.  The
simulation and Monte-Carlo code use the array helpers directly.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import InitVar, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .errors import DomainError, GridMismatchError

__all__ = [
    "SpectralGrid",
    "VelocityField",
    "NormReport",
    "leray_project",
    "stokes_apply",
    "apply_A_plus_I_inverse",
    "norms",
    "lp_norm",
    "agmon_check",
    "embedding_ratio",
    "random_field",
    "resample",
    "save_snapshot",
    "load_snapshot",
    "TOL_DIV",
]

TOL_DIV = 1e-12
SNAPSHOT_MAGIC = b"SCBF1"
_HEADER = struct.Struct("<5siid")


@dataclass(frozen=True)
class SpectralGrid:
    """Discretization of the torus ``(R / L Z)^d`` with ``N`` modes per axis."""

    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise DomainError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise DomainError(f"modes_per_axis must be an even integer >= 4, got {self.n}")
        if not self.length > 0:
            raise DomainError(f"period must be positive, got {self.length}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def field_shape(self) -> tuple[int, ...]:
        return (self.dim,) + self.shape

    @property
    def volume(self) -> float:
        return float(self.length) ** self.dim

    @property
    def spatial_axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def field_axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim - 1, 0))

    @cached_property
    def index(self) -> np.ndarray:
        """Integer wavenumbers along one axis, FFT ordering."""
        return np.fft.fftfreq(self.n, 1.0 / self.n).round().astype(int)

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Integer wave vectors, shape ``(d, N, ..., N)``."""
        return np.stack(np.meshgrid(*([self.index.astype(float)] * self.dim), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        """``|k|^2`` for integer wave vectors."""
        return np.sum(self.wavevectors**2, axis=0)

    @cached_property
    def kappa(self) -> np.ndarray:
        """Physical wave vectors ``2 pi k / L``."""
        return self.wavevectors * (2.0 * np.pi / self.length)

    @cached_property
    def stokes_eigenvalues(self) -> np.ndarray:
        """Eigenvalues ``(2 pi |k| / L)^2`` of the Stokes operator."""
        return self.k2 * (2.0 * np.pi / self.length) ** 2

    @cached_property
    def active_mask(self) -> np.ndarray:
        """Live index set ``|k_j| < N/2`` (Nyquist excluded)."""
        return np.all(np.abs(self.wavevectors) < self.n / 2, axis=0)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule band ``|k_j| < N/3``."""
        return np.all(np.abs(self.wavevectors) < self.n / 3, axis=0)

    @cached_property
    def _k2_safe(self) -> np.ndarray:
        k2 = self.k2.astype(float).copy()
        k2[(0,) * self.dim] = 1.0
        return k2

    def refined(self, factor: int) -> "SpectralGrid":
        return SpectralGrid(self.dim, self.n * factor, self.length)

    def check_same(self, other: "SpectralGrid") -> None:
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")

    # -- transforms -------------------------------------------------------

    def _blocks(self, m: int):
        """Slice pairs (N-grid, M-grid) covering the live indices of one non-last axis."""
        h = self.n // 2
        return ((slice(0, h), slice(0, h)), (slice(h + 1, self.n), slice(m - h + 1, m)))

    def _block_pairs(self, m: int):
        h = self.n // 2
        for combo in itertools.product(self._blocks(m), repeat=self.dim - 1):
            src = tuple(c[0] for c in combo) + (slice(0, h),)
            dst = tuple(c[1] for c in combo) + (slice(0, h),)
            yield (Ellipsis,) + src, (Ellipsis,) + dst

    def to_physical(self, coeffs: np.ndarray, refine: int = 1) -> np.ndarray:
        """Evaluate Hermitian coefficients on the ``refine * N`` collocation grid.

        Operates on the last ``dim`` axes; leading axes are batch/component axes.
        """
        d = self.dim
        m = self.n * refine
        lead = coeffs.shape[:-d]
        half = np.zeros(lead + (m,) * (d - 1) + (m // 2 + 1,), dtype=complex)
        for src, dst in self._block_pairs(m):
            half[dst] = coeffs[src]
        return sfft.irfftn(half, s=(m,) * d, axes=self.spatial_axes, norm="forward")

    def from_physical(self, values: np.ndarray, refine: int = 1) -> np.ndarray:
        """Fourier coefficients of real grid values, truncated to the live index set."""
        d = self.dim
        n = self.n
        h = n // 2
        m = n * refine
        if values.shape[-d:] != (m,) * d:
            raise GridMismatchError(f"expected physical shape {(m,) * d}, got {values.shape[-d:]}")
        spec = sfft.rfftn(values, axes=self.spatial_axes, norm="forward")
        out = np.zeros(values.shape[:-d] + (n,) * d, dtype=complex)
        for src, dst in self._block_pairs(m):
            out[src] = spec[dst]
        # Negative last-axis frequencies from Hermitian symmetry.
        pos = out[..., 1:h]
        other = tuple(range(-d, -1))
        if other:
            pos = np.roll(np.flip(pos, axis=other), 1, axis=other)
        out[..., h + 1 :] = np.conj(pos[..., ::-1])
        return out

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid rule over the last ``dim`` axes (any collocation resolution)."""
        return np.mean(values, axis=self.spatial_axes) * self.volume

    # -- spectral algebra on raw coefficient arrays ----------------------

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """H inner product of coefficient arrays, reduced over component and k axes."""
        return self.volume * np.sum((np.conj(a) * b).real, axis=self.field_axes)

    def norm2(self, a: np.ndarray, weight: np.ndarray | float = 1.0) -> np.ndarray:
        return self.volume * np.sum(weight * (a.real**2 + a.imag**2), axis=self.field_axes)

    def project(self, c: np.ndarray) -> np.ndarray:
        kdotc = np.sum(self.wavevectors * c, axis=-self.dim - 1, keepdims=True)
        return c - self.wavevectors * (kdotc / self._k2_safe)

    def gradient(self, c: np.ndarray) -> np.ndarray:
        """Coefficients of ``d_j c_i``, shape ``(..., d_i, d_j, N...)``."""
        return 1j * np.expand_dims(c, -self.dim - 1) * self.kappa

    def curl(self, c: np.ndarray) -> np.ndarray:
        """Scalar vorticity in 2D, vector vorticity in 3D."""
        kx = self.kappa
        ax = -self.dim - 1
        comp = lambda i: np.take(c, i, axis=ax)  # noqa: E731
        if self.dim == 2:
            return 1j * (kx[0] * comp(1) - kx[1] * comp(0))
        return np.stack(
            [
                1j * (kx[1] * comp(2) - kx[2] * comp(1)),
                1j * (kx[2] * comp(0) - kx[0] * comp(2)),
                1j * (kx[0] * comp(1) - kx[1] * comp(0)),
            ],
            axis=ax,
        )

    def reflect(self, c: np.ndarray) -> np.ndarray:
        """``c(-k)`` for every ``k``."""
        axes = self.spatial_axes
        return np.roll(np.flip(c, axis=axes), 1, axis=axes)

    def symmetrize(self, c: np.ndarray) -> np.ndarray:
        return 0.5 * (c + np.conj(self.reflect(c)))


def _div_residual(grid: SpectralGrid, c: np.ndarray) -> float:
    kdotc = np.sum(grid.wavevectors * c, axis=0)
    num = np.sqrt(np.sum(np.abs(kdotc) ** 2))
    den = np.sqrt(np.sum(grid.k2 * np.sum(np.abs(c) ** 2, axis=0)))
    return float(num / den) if den > 0 else 0.0


@dataclass(frozen=True, eq=False)
class VelocityField:
    """A real, divergence-free vector field given by its Fourier coefficients.

    The coefficient array is made read-only on construction.  With
    ``check=True`` (the default) the array is copied, its Nyquist entries
    zeroed, and Hermitian symmetry plus the spectral divergence constraint
    are verified to ``TOL_DIV``.
    """

    grid: SpectralGrid
    coeffs: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check: bool):
        c = self.coeffs
        if c.shape != self.grid.field_shape:
            raise GridMismatchError(f"coefficient shape {c.shape} != {self.grid.field_shape}")
        if check:
            c = np.array(c, dtype=complex, copy=True)
            c *= self.grid.active_mask
            scale = np.sqrt(np.sum(np.abs(c) ** 2))
            herm = np.sqrt(np.sum(np.abs(c - np.conj(self.grid.reflect(c))) ** 2))
            if herm > TOL_DIV * max(scale, 1e-300) and scale > 0:
                raise DomainError(f"coefficients are not Hermitian (residual {herm / scale:.2e})")
            div = _div_residual(self.grid, c)
            if div > TOL_DIV:
                raise DomainError(f"field is not divergence-free (relative residual {div:.2e})")
            object.__setattr__(self, "coeffs", c)
        self.coeffs.flags.writeable = False

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, grid: SpectralGrid) -> "VelocityField":
        return cls(grid, np.zeros(grid.field_shape, dtype=complex), check=False)

    @classmethod
    def constant(cls, grid: SpectralGrid, value: Sequence[float]) -> "VelocityField":
        c = np.zeros(grid.field_shape, dtype=complex)
        c[(slice(None),) + (0,) * grid.dim] = np.asarray(value, dtype=float)
        return cls(grid, c)

    @classmethod
    def single_mode(
        cls, grid: SpectralGrid, k: Sequence[int], amplitude: Sequence[float], phase: float = 0.0
    ) -> "VelocityField":
        """``amplitude * cos(2 pi k.x / L + phase)``; ``amplitude`` must be orthogonal to ``k``."""
        k = np.asarray(k, dtype=int)
        a = np.asarray(amplitude, dtype=float)
        if not np.any(k):
            return cls.constant(grid, a * np.cos(phase))
        if abs(float(a @ k)) > 1e-12 * np.linalg.norm(a) * np.linalg.norm(k):
            raise DomainError("single-mode amplitude must be orthogonal to k")
        c = np.zeros(grid.field_shape, dtype=complex)
        pos = tuple(int(ki) % grid.n for ki in k)
        neg = tuple(int(-ki) % grid.n for ki in k)
        c[(slice(None),) + pos] += 0.5 * a * np.exp(1j * phase)
        c[(slice(None),) + neg] += 0.5 * a * np.exp(-1j * phase)
        return cls(grid, c)

    @classmethod
    def from_physical(cls, grid: SpectralGrid, values: np.ndarray) -> "VelocityField":
        """Transform real grid values and Leray-project them."""
        c = grid.from_physical(np.asarray(values, dtype=float))
        return cls(grid, grid.project(c), check=False)

    # -- algebra ------------------------------------------------------------

    def _other(self, other: "VelocityField") -> np.ndarray:
        self.grid.check_same(other.grid)
        return other.coeffs

    def __add__(self, other: "VelocityField") -> "VelocityField":
        return VelocityField(self.grid, self.coeffs + self._other(other), check=False)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        return VelocityField(self.grid, self.coeffs - self._other(other), check=False)

    def __mul__(self, scalar: float) -> "VelocityField":
        return VelocityField(self.grid, self.coeffs * float(scalar), check=False)

    __rmul__ = __mul__

    def __neg__(self) -> "VelocityField":
        return VelocityField(self.grid, -self.coeffs, check=False)

    def inner(self, other: "VelocityField") -> float:
        return float(self.grid.inner(self.coeffs, self._other(other)))

    def h_norm(self) -> float:
        return float(np.sqrt(self.grid.norm2(self.coeffs)))

    def to_physical(self, refine: int = 1) -> np.ndarray:
        return self.grid.to_physical(self.coeffs, refine)

    def is_dealiased(self) -> bool:
        return not np.any(self.coeffs[:, ~self.grid.dealias_mask])

    def divergence_residual(self) -> float:
        return _div_residual(self.grid, self.coeffs)


def _as_field(w) -> tuple[SpectralGrid, np.ndarray]:
    return w.grid, w.coeffs


def leray_project(w: VelocityField) -> VelocityField:
    """Helmholtz-Hodge projection; the mean mode passes through unchanged."""
    grid, c = _as_field(w)
    return VelocityField(grid, grid.project(c), check=False)


def stokes_apply(u: VelocityField) -> VelocityField:
    """``A u`` with symbol ``(2 pi |k| / L)^2``; zero on the mean mode."""
    return VelocityField(u.grid, u.coeffs * u.grid.stokes_eigenvalues, check=False)


def apply_A_plus_I_inverse(u: VelocityField) -> VelocityField:
    return VelocityField(u.grid, u.coeffs / (1.0 + u.grid.stokes_eigenvalues), check=False)


@dataclass(frozen=True)
class NormReport:
    """All norms of one field.  ``lr_norm`` is the ``L^{r+1}`` norm for the stored ``r``."""

    h_norm: float
    v_norm: float
    grad_norm: float
    lr_norm: float
    a_norm: float
    ai_norm: float
    curl_norm: float
    r: float = field(default=3.0)


def _abs_phys(grid: SpectralGrid, c: np.ndarray, refine: int) -> np.ndarray:
    u = grid.to_physical(c, refine)
    return np.sqrt(np.sum(u**2, axis=-grid.dim - 1))


def lp_norm(u: VelocityField, p: float, refine: int = 2) -> float:
    """``L^p`` norm by trapezoid quadrature on the ``refine``-times finer grid."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    mag = _abs_phys(u.grid, u.coeffs, refine)
    if np.isinf(p):
        return float(mag.max())
    return float(u.grid.integrate(mag**p) ** (1.0 / p))


def _norms_coeffs(grid: SpectralGrid, c: np.ndarray, r: float, refine: int):
    lam = grid.stokes_eigenvalues
    h2 = grid.norm2(c)
    g2 = grid.norm2(c, lam)
    a2 = grid.norm2(c, lam**2)
    ai2 = grid.norm2(c, (1.0 + lam) ** 2)
    curl2 = grid.volume * np.sum(
        np.abs(grid.curl(c)) ** 2, axis=grid.spatial_axes if grid.dim == 2 else grid.field_axes
    )
    mag = _abs_phys(grid, c, refine)
    lr = grid.integrate(mag ** (r + 1.0)) ** (1.0 / (r + 1.0))
    return h2, g2, a2, ai2, curl2, lr


def norms(u: VelocityField, r: float = 3.0, refine: int = 2) -> NormReport:
    """Spectral norms (Parseval) plus the ``L^{r+1}`` norm by quadrature.

    ``v_norm`` is the full H^1 norm ``sqrt(|u|_H^2 + |grad u|_H^2)``.
    """
    if r < 1:
        raise DomainError(f"absorption exponent r must be >= 1, got {r}")
    h2, g2, a2, ai2, curl2, lr = _norms_coeffs(u.grid, u.coeffs, r, refine)
    return NormReport(
        h_norm=float(np.sqrt(h2)),
        v_norm=float(np.sqrt(h2 + g2)),
        grad_norm=float(np.sqrt(g2)),
        lr_norm=float(lr),
        a_norm=float(np.sqrt(a2)),
        ai_norm=float(np.sqrt(ai2)),
        curl_norm=float(np.sqrt(curl2)),
        r=float(r),
    )


def agmon_check(u: VelocityField, refine: int = 2) -> float:
    """Ratio ``|u|_inf / (|u|_H^{1-d/4} |(I+A)u|_H^{d/4})``."""
    d = u.grid.dim
    h = u.h_norm()
    if h == 0:
        raise DomainError("Agmon ratio is undefined for the zero field")
    ai = float(np.sqrt(u.grid.norm2(u.coeffs, (1.0 + u.grid.stokes_eigenvalues) ** 2)))
    return lp_norm(u, np.inf, refine) / (h ** (1 - d / 4) * ai ** (d / 4))


def embedding_ratio(u: VelocityField, r: float, p: float, refine: int = 2) -> float:
    """``|u|_{L^{p(r+1)}}^{r+1} / (int |grad u|^2 |u|^{r-1} + int |u|^{r+1})``.

    Bounded above uniformly in ``u`` by the Sobolev embedding ``H^1 -> L^{2p}``
    applied to ``|u|^{(r+1)/2}``.
    """
    grid = u.grid
    uphys = grid.to_physical(u.coeffs, refine)
    gphys = grid.to_physical(grid.gradient(u.coeffs), refine)
    mag = np.sqrt(np.sum(uphys**2, axis=0))
    grad2 = np.sum(gphys**2, axis=(0, 1))
    num = grid.integrate(mag ** (p * (r + 1))) ** (1.0 / p)
    den = grid.integrate(grad2 * mag ** (r - 1)) + grid.integrate(mag ** (r + 1))
    if den == 0:
        raise DomainError("embedding ratio is undefined for the zero field")
    return float(num / den)


def random_field(
    grid: SpectralGrid,
    rng: np.random.Generator,
    *,
    h_norm: float = 1.0,
    width: float | None = None,
    kmax: int | None = None,
    dealiased: bool = True,
) -> VelocityField:
    """Random divergence-free field with Gaussian or flat spectral envelope.

    ``width`` gives the envelope ``exp(-|k|^2 / (2 width^2))``; ``kmax`` caps
    ``|k_j|``.  The result is scaled to the requested H norm.
    """
    shape = grid.field_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mask = grid.dealias_mask if dealiased else grid.active_mask
    if kmax is not None:
        mask = mask & np.all(np.abs(grid.wavevectors) <= kmax, axis=0)
    env = mask.astype(float)
    if width is not None:
        env = env * np.exp(-grid.k2 / (2.0 * width**2))
    c = grid.project(grid.symmetrize(c * env))
    nrm = np.sqrt(grid.norm2(c))
    if nrm > 0:
        c *= h_norm / nrm
    return VelocityField(grid, c, check=False)


def resample(u: VelocityField, grid: SpectralGrid) -> VelocityField:
    """Move a field to another resolution by spectral zero-padding or truncation."""
    if grid.dim != u.grid.dim or grid.length != u.grid.length:
        raise GridMismatchError("resample needs the same dimension and period")
    out = np.zeros(grid.field_shape, dtype=complex)
    n_small = min(grid.n, u.grid.n)
    idx = np.fft.fftfreq(n_small, 1.0 / n_small).round().astype(int)
    keep = idx[np.abs(idx) < n_small / 2]
    src = np.ix_(*([keep % u.grid.n] * grid.dim))
    dst = np.ix_(*([keep % grid.n] * grid.dim))
    out[(slice(None),) + dst] = u.coeffs[(slice(None),) + src]
    return VelocityField(grid, out, check=False)


def save_snapshot(path: str | Path, u: VelocityField) -> None:
    """Write the SCBF1 binary snapshot.

    Layout: ``b"SCBF1"``, ``int32 dim``, ``int32 N``, ``float64 L`` (little
    endian), then ``complex128`` coefficients in C order over
    ``(component, k_1, ..., k_d)`` with each ``k`` axis in FFT ordering.
    """
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, g.dim, g.n, float(g.length)))
        fh.write(np.ascontiguousarray(u.coeffs, dtype="<c16").tobytes())


def load_snapshot(path: str | Path) -> VelocityField:
    raw = Path(path).read_bytes()
    magic, dim, n, length = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an SCBF1 snapshot")
    grid = SpectralGrid(dim, n, length)
    body = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if body.size != np.prod(grid.field_shape):
        raise ValueError(f"{path}: truncated snapshot")
    return VelocityField(grid, body.reshape(grid.field_shape).astype(complex))
