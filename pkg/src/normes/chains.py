"""Normalized Markov chains of the two strategies.

The covariance variant is quotiented by ``R(C) = det(C)**(1/d)``::

    z = (m - x*) / sqrt(R(C)),   Sigma = C / R(C)

and the step-size variant by ``sigma``: ``z = (m - x*) / sigma``.  On a
scaling-invariant objective both are time-homogeneous chains
``x' = F(x, alpha(x, U))``.  The transition functions are written against the
normalized state only, and :func:`verify_conjugacy` checks them against the
raw recursions run on the same sample blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .es import (
    ESParams,
    RawCmaState,
    RawCsaState,
    cma_raw_update,
    csa_log_factor,
    csa_raw_update,
    rank_offspring,
    sample_population,
)
from .linalg import UNIT_DET_ATOL, spd_eigh, symmetrize
from .rng import as_stream

Z_OVERFLOW = 1e12
RAW_OVERFLOW = 1e12
COND_OVERFLOW = 1e14
CONJUGACY_TOL = 1e-8


class DivergenceError(RuntimeError):
    """The chain left the numerically representable regime."""

    def __init__(self, step, reason):
        self.step = step
        self.reason = reason
        super().__init__(f"divergence at step {step}: {reason}")


@dataclass(frozen=True, eq=False)
class NormalizedCmaState:
    z: np.ndarray
    sigma: np.ndarray
    _sqrt: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        s = symmetrize(self.sigma)
        object.__setattr__(self, "sigma", s)
        if self._sqrt is None:
            vals, vecs = spd_eigh(s)
            logdet = float(np.sum(np.log(vals)))
            if abs(math.expm1(logdet)) > UNIT_DET_ATOL:
                raise ValueError(f"Sigma must have unit determinant, det = {math.exp(logdet)!r}")
            object.__setattr__(self, "_sqrt", (vecs * np.sqrt(vals)) @ vecs.T)

    @property
    def d(self) -> int:
        return self.z.size

    @property
    def sqrt_sigma(self) -> np.ndarray:
        return self._sqrt

    @classmethod
    def origin(cls, d):
        return cls(np.zeros(d), np.eye(d))

    def as_vector(self) -> np.ndarray:
        iu = np.triu_indices(self.d)
        return np.concatenate([self.z, self.sigma[iu]])


@dataclass(frozen=True, eq=False)
class NormalizedCsaState:
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))

    @property
    def d(self) -> int:
        return self.z.size

    @property
    def sqrt_sigma(self):
        return 1.0

    @classmethod
    def origin(cls, d):
        return cls(np.zeros(d))

    def as_vector(self) -> np.ndarray:
        return self.z.copy()


def state_distance(a, b) -> float:
    """Max of the Euclidean distance on ``z`` and the Frobenius distance on ``Sigma``."""
    dist = float(np.linalg.norm(a.z - b.z))
    if isinstance(a, NormalizedCmaState):
        dist = max(dist, float(np.linalg.norm(a.sigma - b.sigma)))
    return dist


def _select(params, f, z, transform, block):
    perm = rank_offspring(f, z, transform, block)
    return np.asarray(block)[perm[: params.mu]]


def cma_alpha(params: ESParams, state: NormalizedCmaState, block, f) -> np.ndarray:
    """The ``mu`` best samples, ranked on ``f(z + sqrt(Sigma) u_i)``."""
    return _select(params, f, state.z, state.sqrt_sigma, block)


def csa_alpha(params: ESParams, state: NormalizedCsaState, block, f) -> np.ndarray:
    return _select(params, f, state.z, 1.0, block)


def cma_unnormalized(params: ESParams, state: NormalizedCmaState, steps):
    """``(z + sqrt(Sigma) sum w_i v_i, K)`` before renormalization."""
    steps = np.asarray(steps, dtype=float)
    w = params.w
    sq = state.sqrt_sigma
    inner = (steps.T * w) @ steps
    K = (1.0 - params.c) * state.sigma + params.c * (sq @ inner @ sq)
    return state.z + sq @ (w @ steps), symmetrize(K)


def cma_F(params: ESParams, state: NormalizedCmaState, steps) -> NormalizedCmaState:
    z_num, K = cma_unnormalized(params, state, steps)
    vals, vecs = spd_eigh(K)
    log_r = float(np.mean(np.log(vals)))
    r = math.exp(log_r)
    scaled = vals / r
    sigma = (vecs * scaled) @ vecs.T
    sqrt = (vecs * np.sqrt(scaled)) @ vecs.T
    return NormalizedCmaState(z_num / math.sqrt(r), sigma, sqrt)


def cma_log_det_increment(params: ESParams, steps) -> float:
    """``log det((1-c) I + c sum w_i v_i v_i^T)``; equals ``log det K`` when det Sigma = 1."""
    steps = np.asarray(steps, dtype=float)
    M = (1.0 - params.c) * np.eye(steps.shape[1]) + params.c * ((steps.T * params.w) @ steps)
    sign, logdet = np.linalg.slogdet(M)
    return float(logdet)


def csa_F(params: ESParams, state: NormalizedCsaState, steps) -> NormalizedCsaState:
    step = params.w @ np.asarray(steps, dtype=float)
    return NormalizedCsaState((state.z + step) * math.exp(-csa_log_factor(params, step)))


def chain_alpha(params, state, block, f):
    if isinstance(state, NormalizedCmaState):
        return cma_alpha(params, state, block, f)
    return csa_alpha(params, state, block, f)


def chain_F(params, state, steps):
    if isinstance(state, NormalizedCmaState):
        return cma_F(params, state, steps)
    return csa_F(params, state, steps)


def normalize_raw(raw, x_star=None):
    x_star = 0.0 if x_star is None else np.asarray(x_star, dtype=float)
    if isinstance(raw, RawCmaState):
        vals, vecs = spd_eigh(raw.C)
        r = math.exp(float(np.mean(np.log(vals))))
        return NormalizedCmaState((raw.m - x_star) / math.sqrt(r), raw.C / r)
    if isinstance(raw, RawCsaState):
        return NormalizedCsaState((raw.m - x_star) / raw.sigma)
    raise TypeError(f"not a raw state: {type(raw).__name__}")


def check_finite(step, state, raw=None, x_star=None):
    """Raise :class:`DivergenceError` if a state left the representable regime."""
    nz = float(np.linalg.norm(state.z))
    if not math.isfinite(nz) or nz > Z_OVERFLOW:
        raise DivergenceError(step, f"|z| = {nz:.3e} exceeds {Z_OVERFLOW:.0e}")
    if isinstance(state, NormalizedCmaState):
        vals = np.linalg.eigvalsh(state.sigma)
        cond = vals[-1] / vals[0] if vals[0] > 0 else math.inf
        if not cond <= COND_OVERFLOW:
            raise DivergenceError(step, f"cond(Sigma) = {cond:.3e} exceeds {COND_OVERFLOW:.0e}")
    if raw is not None:
        center = 0.0 if x_star is None else x_star
        nm = float(np.linalg.norm(raw.m - center))
        if not math.isfinite(nm) or nm > RAW_OVERFLOW:
            raise DivergenceError(step, f"|m - x*| = {nm:.3e} exceeds {RAW_OVERFLOW:.0e}")


@dataclass
class StepRecord:
    """One lockstep transition of the raw and normalized chains."""

    step: int
    raw: object
    state: object
    selected: np.ndarray | None
    raw_selected: np.ndarray | None
    log_scale: float  # log R(K) for CMA, log(sigma'/sigma) for CSA


def simulate(params: ESParams, f, raw0, steps: int, seed, x_star=None, sampler=None,
             guard: bool = True) -> Iterator[StepRecord]:
    """Run the raw chain and the normalized chain on identical sample blocks.

    Yields the initial record (step 0) and one record per transition.
    ``sampler(params, rng)`` replaces :func:`sample_population` when given.
    """
    rng = as_stream(seed)
    sampler = sampler or sample_population
    x_star = None if x_star is None else np.asarray(x_star, dtype=float)
    raw = raw0
    state = normalize_raw(raw0, x_star)
    cma = isinstance(raw0, RawCmaState)
    yield StepRecord(0, raw, state, None, None, 0.0)
    for k in range(1, steps + 1):
        block = sampler(params, rng)
        if cma:
            v = cma_alpha(params, state, block, f_shift(f, x_star))
            log_scale = cma_log_det_increment(params, v) / params.d
            raw, raw_v = cma_raw_update(params, raw, f, block)
            state = cma_F(params, state, v)
        else:
            v = csa_alpha(params, state, block, f_shift(f, x_star))
            log_scale = csa_log_factor(params, params.w @ v)
            raw, raw_v = csa_raw_update(params, raw, f, block)
            state = csa_F(params, state, v)
        if guard:
            check_finite(k, state, raw, x_star)
        yield StepRecord(k, raw, state, v, raw_v, log_scale)


def run_normalized(params: ESParams, f, state0, steps: int, seed, sampler=None,
                   guard: bool = True) -> Iterator[StepRecord]:
    """The normalized chain alone; ``f`` is taken scaling-invariant about 0."""
    rng = as_stream(seed)
    sampler = sampler or sample_population
    state = state0
    cma = isinstance(state0, NormalizedCmaState)
    yield StepRecord(0, None, state, None, None, 0.0)
    for k in range(1, steps + 1):
        block = sampler(params, rng)
        v = chain_alpha(params, state, block, f)
        if cma:
            log_scale = cma_log_det_increment(params, v) / params.d
        else:
            log_scale = csa_log_factor(params, params.w @ v)
        state = chain_F(params, state, v)
        if guard:
            check_finite(k, state)
        yield StepRecord(k, None, state, v, None, log_scale)


class _Shifted:
    """``f(. + x*)`` so the normalized chain sees an objective invariant about 0."""

    def __init__(self, f, x_star):
        self.f = f
        self.x_star = x_star

    def values(self, xs):
        return self.f.values(np.asarray(xs) + self.x_star)


def f_shift(f, x_star):
    if x_star is None or not np.any(x_star):
        return f
    return _Shifted(f, x_star)


@dataclass
class ConjugacyReport:
    """``max_deviation`` is absolute.  ``max_scaled_deviation`` divides each
    step's deviation by the factor ``scale_0 / scale_k`` (when above one) by
    which the normalized map has magnified earlier rounding errors; it is the
    meaningful figure for fast-contracting runs of the step-size chain."""

    max_deviation: float
    worst_step: int
    steps: int
    selections_agree: bool
    passed: bool
    max_scaled_deviation: float = 0.0


def verify_conjugacy(params: ESParams, f, raw0, steps: int, seed, x_star=None,
                     tol: float = CONJUGACY_TOL) -> ConjugacyReport:
    """Max over ``k <= steps`` of ``dist(normalize_raw(raw_k), state_k)``."""
    worst, worst_step, agree = 0.0, 0, True
    scaled, log_scale = 0.0, 0.0
    half = 0.5 if isinstance(raw0, RawCmaState) else 1.0
    for rec in simulate(params, f, raw0, steps, seed, x_star):
        dev = state_distance(normalize_raw(rec.raw, x_star), rec.state)
        log_scale += half * rec.log_scale
        scaled = max(scaled, dev * math.exp(min(0.0, log_scale)))
        if dev > worst:
            worst, worst_step = dev, rec.step
        if rec.selected is not None and not np.array_equal(rec.selected, rec.raw_selected):
            agree = False
    return ConjugacyReport(worst, worst_step, steps, agree, worst < tol, scaled)


def trajectory_columns(state) -> list[str]:
    d = state.d
    cols = ["step"] + [f"z_{i + 1}" for i in range(d)]
    if isinstance(state, NormalizedCmaState):
        cols += [f"sigma_{i + 1}_{j + 1}" for i in range(d) for j in range(i, d)]
        cols += ["log_norm_z", "log_det_sigma", "log_scale", "log_norm_m"]
    else:
        cols += ["log_norm_z", "log_step_size_ratio", "log_norm_m", "log_sigma"]
    return cols


def trajectory_row(rec: StepRecord, x_star=None) -> list:
    state = rec.state
    nz = float(np.linalg.norm(state.z))
    log_nz = math.log(nz) if nz > 0 else -math.inf
    row = [rec.step] + state.z.tolist()
    center = 0.0 if x_star is None else x_star
    nm = float(np.linalg.norm(rec.raw.m - center)) if rec.raw is not None else math.nan
    log_nm = math.log(nm) if nm > 0 else -math.inf
    if isinstance(state, NormalizedCmaState):
        iu = np.triu_indices(state.d)
        logdet = float(np.linalg.slogdet(state.sigma)[1])
        row += state.sigma[iu].tolist() + [log_nz, logdet, rec.log_scale, log_nm]
    else:
        log_sigma = math.log(rec.raw.sigma) if rec.raw is not None else math.nan
        row += [log_nz, rec.log_scale, log_nm, log_sigma]
    return row
