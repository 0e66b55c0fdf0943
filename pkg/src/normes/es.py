"""Raw evolution-strategy steps.

Two algorithms share sampling and ranking:

* the covariance-adaptation variant, state ``(m, C)``, with the rank-mu
  update ``C' = (1-c) C + c sqrt(C) (sum_i w_i u_i u_i^T) sqrt(C)``;
* the step-size variant, state ``(m, sigma)``, with the nonsmooth update
  ``sigma' = sigma * exp((sqrt(mu_eff) |sum_i w_i u_i| / E|N(0,I)| - 1) / d_sigma)``.

Sample blocks are arrays of shape ``(lam, d)``; selected steps are arrays of
shape ``(mu, d)``.  Permutations are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .linalg import SpdMatrix, spd_eigh, symmetrize
from .rng import GaussianStream


class NonFiniteObjectiveError(FloatingPointError):
    """The objective returned NaN or an infinity for a candidate."""

    def __init__(self, index, candidate, value):
        self.index = index
        self.candidate = np.asarray(candidate)
        self.value = value
        super().__init__(
            f"objective value {value!r} at candidate {index} = {np.array2string(self.candidate, precision=6)}"
        )


class ParamsError(ValueError):
    pass


def equal_weights(mu: int) -> tuple[float, ...]:
    return tuple([1.0 / mu] * mu)


def log_weights(mu: int) -> tuple[float, ...]:
    raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    return tuple(raw / raw.sum())


@dataclass(frozen=True)
class ESParams:
    """Population sizes, recombination weights and learning rates.

    ``mu_eff`` defaults to ``sum(w_i**2)``.  The customary value
    ``1 / sum(w_i**2)`` can be passed explicitly; with ``mu > 1`` the default
    makes the step size shrink on every step of a random-selection regime.
    """

    d: int
    lam: int
    mu: int
    weights: tuple
    c: float
    d_sigma: float = 1.0
    mu_eff: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        problems = self.problems()
        if problems:
            raise ParamsError("; ".join(problems))
        if self.mu_eff is None:
            object.__setattr__(self, "mu_eff", float(sum(w * w for w in self.weights)))

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            out.append(f"d: must be an integer >= 1, got {self.d!r}")
        if not isinstance(self.lam, (int, np.integer)) or self.lam < 2:
            out.append(f"lam: must be an integer >= 2, got {self.lam!r}")
        if not isinstance(self.mu, (int, np.integer)) or not 1 <= self.mu <= max(self.lam, 1):
            out.append(f"mu: must be an integer in [1, lam], got {self.mu!r}")
        w = np.asarray(self.weights)
        if w.size != self.mu:
            out.append(f"weights: expected {self.mu} entries, got {w.size}")
        elif not np.all(np.isfinite(w)) or np.any(w <= 0):
            out.append("weights: must be strictly positive")
        elif np.any(np.diff(w) > 0):
            out.append("weights: must be nonincreasing")
        elif abs(w.sum() - 1.0) > 1e-12:
            out.append(f"weights: must sum to 1 (sum is {w.sum()!r})")
        if not 0.0 < self.c < 1.0:
            out.append(f"c: must lie strictly inside (0, 1), got {self.c!r}")
        if not self.d_sigma > 0:
            out.append(f"d_sigma: must be positive, got {self.d_sigma!r}")
        if self.mu_eff is not None and not self.mu_eff > 0:
            out.append(f"mu_eff: must be positive, got {self.mu_eff!r}")
        return out

    @classmethod
    def create(cls, d, lam=None, mu=None, weights="equal", c=None, d_sigma=1.0, mu_eff=None):
        """Defaults: ``lam = 4 + floor(3 ln d)``, ``mu = lam // 2``, ``c = min(0.2, 1/d)``.

        ``weights`` is ``"equal"``, ``"log"`` or an explicit sequence;
        ``mu_eff`` is a number, ``None``/``"sum_squares"`` for ``sum(w**2)`` or
        ``"conventional"`` for ``1/sum(w**2)``.
        """
        if isinstance(d, bool) or not isinstance(d, int) or d < 1:
            raise ParamsError(f"d: expected a positive integer, got {d!r}")
        lam = 4 + int(3 * math.log(d)) if lam is None else lam
        mu = lam // 2 if mu is None else mu
        if not isinstance(lam, int) or not isinstance(mu, int) or lam < 2 or not 1 <= mu <= lam:
            raise ParamsError(f"lam, mu: need integers with lam >= 2 and 1 <= mu <= lam, got {lam!r}, {mu!r}")
        if isinstance(weights, str):
            if weights not in ("equal", "log"):
                raise ParamsError(f"weights: unknown scheme {weights!r}")
            weights = equal_weights(mu) if weights == "equal" else log_weights(mu)
        c = min(0.2, 1.0 / d) if c is None else c
        if isinstance(mu_eff, str):
            sq = sum(float(w) ** 2 for w in weights)
            if mu_eff == "sum_squares":
                mu_eff = sq
            elif mu_eff == "conventional":
                mu_eff = 1.0 / sq
            else:
                raise ParamsError(f"mu_eff: unknown convention {mu_eff!r}")
        return cls(d, lam, mu, tuple(weights), c, d_sigma, mu_eff)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights)

    @property
    def chi_mean(self) -> float:
        return expected_chi_norm(self.d)


@dataclass(frozen=True, eq=False)
class RawCmaState:
    m: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))
        c = self.C.entries if isinstance(self.C, SpdMatrix) else self.C
        object.__setattr__(self, "C", symmetrize(c))


@dataclass(frozen=True, eq=False)
class RawCsaState:
    m: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))
        if not self.sigma > 0:
            raise ValueError(f"step size must be positive, got {self.sigma!r}")
        object.__setattr__(self, "sigma", float(self.sigma))


def expected_chi_norm(d: int) -> float:
    """``E|N(0, I_d)| = sqrt(2) Gamma((d+1)/2) / Gamma(d/2)``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return math.sqrt(2.0) * math.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0))


def sample_population(params: ESParams, rng: GaussianStream) -> np.ndarray:
    return rng.normal((params.lam, params.d))


def rank_offspring(f, center, transform, block) -> np.ndarray:
    """Permutation sorting ``f(center + T u_i)``, ties in index order.

    ``transform`` is a square matrix (applied as ``T @ u``) or a scalar.
    """
    block = np.asarray(block, dtype=float)
    if np.ndim(transform) == 0:
        candidates = center + transform * block
    else:
        candidates = center + block @ np.asarray(transform).T
    return rank_values(f.values(candidates), candidates)


def rank_values(values, candidates=None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteObjectiveError(i, None if candidates is None else candidates[i], values[i])
    return np.argsort(values, kind="stable")


def _sym_sqrt(C):
    vals, vecs = spd_eigh(C)
    return (vecs * np.sqrt(vals)) @ vecs.T


def cma_raw_update(params: ESParams, state: RawCmaState, f, block):
    """One raw step; returns ``(new_state, selected)`` with ``selected`` of shape (mu, d)."""
    sqrt_c = _sym_sqrt(state.C)
    perm = rank_offspring(f, state.m, sqrt_c, block)
    selected = np.asarray(block)[perm[: params.mu]]
    w = params.w
    m = state.m + sqrt_c @ (w @ selected)
    inner = (selected.T * w) @ selected
    C = (1.0 - params.c) * state.C + params.c * (sqrt_c @ inner @ sqrt_c)
    return RawCmaState(m, C), selected


def cma_raw_step(params: ESParams, state: RawCmaState, f, block) -> RawCmaState:
    return cma_raw_update(params, state, f, block)[0]


def csa_log_factor(params: ESParams, step_sum) -> float:
    """``log(sigma'/sigma)`` for the weighted sum of selected steps."""
    norm = float(np.linalg.norm(step_sum))
    return (math.sqrt(params.mu_eff) * norm / params.chi_mean - 1.0) / params.d_sigma


def csa_raw_update(params: ESParams, state: RawCsaState, f, block):
    perm = rank_offspring(f, state.m, state.sigma, block)
    selected = np.asarray(block)[perm[: params.mu]]
    step = params.w @ selected
    m = state.m + state.sigma * step
    sigma = state.sigma * math.exp(csa_log_factor(params, step))
    return RawCsaState(m, sigma), selected


def csa_raw_step(params: ESParams, state: RawCsaState, f, block) -> RawCsaState:
    return csa_raw_update(params, state, f, block)[0]
