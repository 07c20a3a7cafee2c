"""Trace-class Q-Wiener increments in the divergence-free Fourier basis.

``Q`` is diagonal: every divergence-free direction at wave vector ``k``
carries the eigenvalue ``q_k = sigma^2 (1 + |k|^2)^{-s/2}`` (integer
``|k|``).  The mean mode has ``d`` such directions, every other mode
``d - 1``.  Noise is supported on the two-thirds band so that simulated
states stay inside the alias-free subspace.

Random streams are counter-based (Philox) and keyed by
``(master_seed, path_index, *tags)``, so a path's noise does not depend on
how many other paths are drawn or in what order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .spectral_core import SpectralGrid, VelocityField

__all__ = [
    "CovarianceSpec",
    "TraceReport",
    "validate_hypothesis_trQ1",
    "path_stream",
    "path_streams",
    "sample_wiener_increment",
    "sample_increments",
    "NoiseSource",
]


@dataclass(frozen=True)
class CovarianceSpec:
    decay_s: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError(f"noise amplitude must be nonnegative, got {self.sigma}")

    def eigenvalues(self, grid: SpectralGrid) -> np.ndarray:
        """``q_k`` on the grid, zero outside the two-thirds band."""
        q = self.sigma**2 * (1.0 + grid.k2) ** (-self.decay_s / 2.0)
        return q * grid.dealias_mask

    @staticmethod
    def _multiplicity(grid: SpectralGrid) -> np.ndarray:
        mult = np.full(grid.shape, grid.dim - 1, dtype=float)
        mult[(0,) * grid.dim] = grid.dim
        return mult

    def trace_q(self, grid: SpectralGrid) -> float:
        return float(np.sum(self._multiplicity(grid) * self.eigenvalues(grid)))

    def trace_q1(self, grid: SpectralGrid) -> float:
        """``Tr(A^{1/2} Q A^{1/2}) = sum lambda_k q_k`` over divergence-free directions."""
        return float(
            np.sum(self._multiplicity(grid) * grid.stokes_eigenvalues * self.eigenvalues(grid))
        )


@dataclass(frozen=True)
class TraceReport:
    trace_q: float
    trace_q1: float
    decay_s: float
    dim: int
    continuum_convergent: bool

    @property
    def passed(self) -> bool:
        return self.continuum_convergent


def validate_hypothesis_trQ1(cov: CovarianceSpec, grid: SpectralGrid) -> TraceReport:
    """Truncated traces plus the continuum test.

    ``sum_k |k|^2 (1+|k|^2)^{-s/2}`` over ``Z^d`` converges iff ``s > d + 2``;
    a degenerate ``sigma = 0`` covariance passes trivially.
    """
    ok = cov.sigma == 0 or cov.decay_s > grid.dim + 2
    return TraceReport(cov.trace_q(grid), cov.trace_q1(grid), cov.decay_s, grid.dim, ok)


def _tag_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise DomainError("stream tags must be nonnegative")
        return int(tag)
    return zlib.crc32(str(tag).encode())


def path_stream(master_seed: int, path_index: int, *tags) -> np.random.Generator:
    """Independent generator for one path, keyed by seed, index and tags."""
    key = (_tag_int(path_index),) + tuple(_tag_int(t) for t in tags)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def path_streams(master_seed: int, indices: Sequence[int], *tags) -> list[np.random.Generator]:
    return [path_stream(master_seed, i, *tags) for i in indices]


def _scale(grid: SpectralGrid, cov: CovarianceSpec, dt: float) -> np.ndarray:
    return np.sqrt(cov.eigenvalues(grid) * dt / (2.0 * grid.volume))


def _shape_noise(grid: SpectralGrid, z: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # Hermitian symmetrisation keeps unit variance per real direction.
    z = (z + np.conj(grid.reflect(z))) / np.sqrt(2.0)
    return grid.project(z) * scale


def _draw(rng: np.random.Generator, shape) -> np.ndarray:
    g = rng.standard_normal(tuple(shape) + (2,))
    return g[..., 0] + 1j * g[..., 1]


def sample_wiener_increment(
    grid: SpectralGrid, cov: CovarianceSpec, dt: float, rng_stream: np.random.Generator
) -> VelocityField:
    """One increment ``W(t + dt) - W(t)``; ``E |dW|_H^2 = Tr(Q) dt``."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if cov.sigma == 0:
        return VelocityField.zeros(grid)
    z = _draw(rng_stream, grid.field_shape)
    return VelocityField(grid, _shape_noise(grid, z, _scale(grid, cov, dt)), check=False)


def sample_increments(
    grid: SpectralGrid, cov: CovarianceSpec, dt: float, rng: np.random.Generator, n: int
) -> np.ndarray:
    """``n`` independent increments from a single stream, shape ``(n, d, N...)``."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if cov.sigma == 0:
        return np.zeros((n,) + grid.field_shape, dtype=complex)
    z = _draw(rng, (n,) + grid.field_shape)
    return _shape_noise(grid, z, _scale(grid, cov, dt))


class NoiseSource:
    """Per-path increment streams advanced in lock step.

    ``next(dt)`` returns an array of shape ``(P, d, N...)`` whose row ``p`` is
    drawn from path ``p``'s own generator.  Raw normals are drawn a block of
    steps at a time per path; block and one-at-a-time draws give identical
    numbers, so the buffering is invisible to results.
    """

    def __init__(
        self,
        grid: SpectralGrid,
        cov: CovarianceSpec,
        streams: Sequence[np.random.Generator],
        buffer_bytes: int = 64 * 2**20,
    ):
        self.grid = grid
        self.cov = cov
        self.streams = list(streams)
        field_bytes = 16 * int(np.prod(grid.field_shape))
        self._block = int(np.clip(buffer_bytes // max(1, len(self.streams) * field_bytes), 1, 256))
        self._buf: np.ndarray | None = None
        self._pos = 0

    @classmethod
    def from_seed(
        cls, grid: SpectralGrid, cov: CovarianceSpec, master_seed: int, indices: Sequence[int], *tags
    ) -> "NoiseSource":
        return cls(grid, cov, path_streams(master_seed, indices, *tags))

    @property
    def n_paths(self) -> int:
        return len(self.streams)

    def _refill(self) -> None:
        shape = (self._block,) + self.grid.field_shape
        buf = np.empty((self.n_paths,) + shape, dtype=complex)
        for p, rng in enumerate(self.streams):
            g = rng.standard_normal(shape + (2,))
            buf[p] = g[..., 0] + 1j * g[..., 1]
        self._buf, self._pos = buf, 0

    def raw(self) -> np.ndarray:
        """Unit complex normals for the next step, shape ``(P, d, N...)``."""
        if self._buf is None or self._pos == self._block:
            self._refill()
        z = self._buf[:, self._pos]
        self._pos += 1
        return z

    def next(self, dt: float) -> np.ndarray:
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        if self.cov.sigma == 0:
            return np.zeros((self.n_paths,) + self.grid.field_shape, dtype=complex)
        return _shape_noise(self.grid, self.raw(), _scale(self.grid, self.cov, dt))
