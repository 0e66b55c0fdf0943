"""Scaling-invariant objective functions.

Every builtin is positively homogeneous about the origin, hence preserves
the ordering of values under ``x -> rho * x`` for ``rho > 0``.  Their level
sets are Lebesgue-negligible (sphere, ellipsoid and p-norm level sets are
hypersurfaces or the single point 0; linear level sets are hyperplanes), which
is what the selection densities need.  That property is documented here and
not tested.

Objectives evaluate a single point of shape ``(d,)`` or a batch of shape
``(n, d)``; batched evaluation of builtins is vectorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .rng import as_stream

BUILTINS = ("sphere", "ellipsoid", "p-norm", "linear")
TIE_ATOL = 1e-12


class ObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class Objective:
    """A named objective with its invariance center.

    ``eval`` maps an array of shape ``(..., d)`` to values of shape ``(...)``
    when ``vectorized`` is true; otherwise it is called one point at a time.
    """

    eval: Callable
    name: str
    d: int
    invariance_center: np.ndarray = field(default=None)
    vectorized: bool = True

    def __post_init__(self):
        center = self.invariance_center
        center = np.zeros(self.d) if center is None else np.asarray(center, dtype=float)
        object.__setattr__(self, "invariance_center", center)

    def __call__(self, x) -> float:
        return float(self.values(np.asarray(x, dtype=float)[None, :])[0])

    def values(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if self.vectorized:
            return np.asarray(self.eval(xs), dtype=float)
        return np.array([float(self.eval(x)) for x in xs])

    def compose(self, g: Callable, name: str | None = None) -> "Objective":
        """``g o f`` for an elementwise ``g``; strictly increasing ``g`` keeps rankings."""
        return Objective(
            partial(_composed, g, self),
            name or f"{getattr(g, '__name__', 'g')}({self.name})",
            self.d,
            self.invariance_center,
        )


def _composed(g, f, xs):
    return g(f.values(xs))


def _shifted(f, x_star, xs):
    return f.values(xs - x_star)


def shifted(f: Objective, x_star) -> Objective:
    """``x -> f(x - x*)``: moves the invariance center of ``f`` to ``x*``."""
    x_star = np.asarray(x_star, dtype=float)
    return Objective(partial(_shifted, f, x_star), f.name, f.d, f.invariance_center + x_star)


def _sphere(xs):
    return np.einsum("...i,...i->...", xs, xs)


def _ellipsoid(diag, xs):
    return np.einsum("...i,i,...i->...", xs, diag, xs)


def _pnorm(p, xs):
    if math.isinf(p):
        return np.max(np.abs(xs), axis=-1)
    return np.sum(np.abs(xs) ** p, axis=-1) ** (1.0 / p)


def _linear(b, xs):
    return xs @ b


def make_builtin(name: str, d: int, params: dict | None = None) -> Objective:
    """Build ``sphere``, ``ellipsoid``, ``p-norm`` or ``linear`` in dimension ``d``.

    ``params``: ``ellipsoid`` takes ``diag`` (positive, length ``d``, default
    ``10**(6 i/(d-1))``); ``p-norm`` takes ``p >= 1`` (default 2); ``linear``
    takes a nonzero ``direction`` (default ``e_1``).  ``linear`` has no
    minimizer and serves as a divergent control case.
    """
    params = dict(params or {})
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ObjectiveError(f"dimension must be a positive integer, got {d!r}")
    if name == "sphere":
        _no_extra(name, params, set())
        return Objective(_sphere, name, d)
    if name == "ellipsoid":
        _no_extra(name, params, {"diag"})
        if "diag" in params:
            diag = np.asarray(params["diag"], dtype=float)
        else:
            diag = 10.0 ** (6.0 * np.arange(d) / max(d - 1, 1))
        if diag.shape != (d,) or not np.all(np.isfinite(diag)) or np.any(diag <= 0):
            raise ObjectiveError("ellipsoid diag must be positive with length d")
        return Objective(partial(_ellipsoid, diag), name, d)
    if name == "p-norm":
        _no_extra(name, params, {"p"})
        p = float(params.get("p", 2.0))
        if not p >= 1.0:
            raise ObjectiveError(f"p-norm needs p >= 1, got {p}")
        return Objective(partial(_pnorm, p), name, d)
    if name == "linear":
        _no_extra(name, params, {"direction"})
        b = np.asarray(params.get("direction", np.eye(d)[0]), dtype=float)
        if b.shape != (d,) or not np.all(np.isfinite(b)) or not np.any(b):
            raise ObjectiveError("linear direction must be a finite nonzero vector of length d")
        return Objective(partial(_linear, b), name, d)
    raise ObjectiveError(f"unknown objective {name!r}; choose from {', '.join(BUILTINS)}")


def _no_extra(name, params, allowed):
    extra = set(params) - allowed
    if extra:
        raise ObjectiveError(f"{name} does not accept parameters {sorted(extra)}")


@dataclass
class InvarianceReport:
    passed: bool
    trials: int
    counterexample: dict | None = None


def _order(a, b):
    if abs(a - b) <= TIE_ATOL:
        return 0
    return 1 if a > b else -1


def check_scaling_invariance(f: Objective, x_star=None, trials: int = 1000, rng_seed: int = 0):
    """Randomized search for a violation of order preservation under scaling.

    Draws ``x, y`` standard normal times a log-uniform scale in ``[0.1, 10]``
    and ``rho`` log-uniform on ``[1e-2, 1e2]``; compares the order of ``f(x + x*)``, ``f(y + x*)``
    with that of ``f(rho x + x*)``, ``f(rho y + x*)``.  Differences within
    1e-12 count as ties on either side.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x_star = f.invariance_center if x_star is None else np.asarray(x_star, dtype=float)
    rng = as_stream(rng_seed)
    d = f.d
    scales = 10.0 ** (2.0 * rng.uniform((trials, 2)) - 1.0)
    xs = rng.normal((trials, d)) * scales[:, :1]
    ys = rng.normal((trials, d)) * scales[:, 1:]
    # every tenth trial uses x == y to exercise the tie rule
    ys[::10] = xs[::10]
    rhos = 10.0 ** (4.0 * rng.uniform(trials) - 2.0)
    for i in range(trials):
        x, y, rho = xs[i], ys[i], rhos[i]
        before = _order(f(x + x_star), f(y + x_star))
        after = _order(f(rho * x + x_star), f(rho * y + x_star))
        if before != after:
            return InvarianceReport(False, i + 1, {"x": x.tolist(), "y": y.tolist(), "rho": float(rho)})
    return InvarianceReport(True, trials)
