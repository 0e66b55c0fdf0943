"""Dense symmetric and SPD matrix kernels.

All functions take and return plain numpy arrays.  :class:`SpdMatrix` and
:class:`UnitDetSpd` are validating wrappers used at API boundaries; the
inner loops of the chains call the array functions directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_ATOL = 1e-12
UNIT_DET_ATOL = 1e-10
DEFAULT_FD_STEP = 1e-5
DEFAULT_RANK_TOL = 1e-6


class NotSpdError(ValueError):
    pass


def symmetrize(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def spd_eigh(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of the symmetrized input, rejecting non-SPD."""
    a = symmetrize(a)
    if not np.all(np.isfinite(a)):
        raise NotSpdError("matrix has non-finite entries")
    vals, vecs = np.linalg.eigh(a)
    if vals[0] <= 0.0:
        raise NotSpdError(f"matrix is not positive definite (min eigenvalue {vals[0]:.3e})")
    return vals, vecs


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """Symmetric positive definite matrix, symmetrized on construction."""

    entries: np.ndarray

    def __post_init__(self):
        a = symmetrize(self.entries)
        spd_eigh(a)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True, eq=False)
class UnitDetSpd:
    """SPD matrix renormalized so that its determinant is one."""

    inner: SpdMatrix

    def __post_init__(self):
        inner = self.inner if isinstance(self.inner, SpdMatrix) else SpdMatrix(self.inner)
        scaled, _ = unit_det_normalize(inner.entries)
        object.__setattr__(self, "inner", SpdMatrix(scaled))

    @property
    def entries(self) -> np.ndarray:
        return self.inner.entries

    @property
    def d(self) -> int:
        return self.inner.d

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.inner.entries, dtype=dtype)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector ``(h_z, H_sigma)`` at a unit-determinant base point."""

    h_z: np.ndarray
    h_sigma: np.ndarray

    def as_vector(self) -> np.ndarray:
        """Flatten as ``h_z`` followed by the upper triangle of ``H_sigma``."""
        iu = np.triu_indices(self.h_sigma.shape[0])
        return np.concatenate([self.h_z, self.h_sigma[iu]])


def spd_sqrt(a) -> np.ndarray:
    """Unique SPD square root via eigendecomposition."""
    vals, vecs = spd_eigh(np.asarray(a))
    return (vecs * np.sqrt(vals)) @ vecs.T


def spd_inv_sqrt(a) -> np.ndarray:
    vals, vecs = spd_eigh(np.asarray(a))
    return (vecs / np.sqrt(vals)) @ vecs.T


def det_root(a) -> float:
    """``det(a) ** (1/d)`` as the exponential of the mean log-eigenvalue."""
    vals, _ = spd_eigh(np.asarray(a))
    return float(np.exp(np.mean(np.log(vals))))


def unit_det_normalize(a) -> tuple[np.ndarray, float]:
    """Return ``(a / R(a), R(a))`` with ``R = det(.)**(1/d)``."""
    a = symmetrize(a)
    r = det_root(a)
    return a / r, r


def tangent_project(sigma, h_z, h) -> TangentVector:
    """Project ``h`` onto ``{H : trace(sigma^-1 H) = 0}`` along ``sigma``.

    ``sigma`` spans a complement of the kernel of the determinant's
    differential at ``sigma``, so the projection is
    ``H - trace(sigma^-1 H) / d * sigma``.
    """
    sigma = np.asarray(sigma, dtype=float)
    h = symmetrize(h)
    d = sigma.shape[0]
    t = np.trace(np.linalg.solve(sigma, h))
    return TangentVector(np.asarray(h_z, dtype=float).copy(), h - (t / d) * sigma)


def numeric_jacobian(f, x, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``f: R^m -> R^n`` at ``x``, shape (n, m)."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cols = []
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        fp = np.atleast_1d(np.asarray(f(x + step), dtype=float))
        fm = np.atleast_1d(np.asarray(f(x - step), dtype=float))
        cols.append((fp - fm) / (2.0 * h))
    return np.column_stack(cols)


def numeric_rank(m, tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError("rank tolerance must be positive")
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))
