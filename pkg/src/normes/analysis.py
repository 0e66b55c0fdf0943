"""Convergence-rate estimation and stability diagnostics.

For the covariance chain, ``log |m_T| / |m_0|`` splits into a telescoping
``log |z|`` sum and ``(1/2d) sum_k log det K_k``, where ``K_k`` is the
unnormalized covariance multiplier.  Once the ``log |z|`` part averages out,
the rate is the stationary mean of ``-(1/2d) log det((1-c) I + c sum w_i v_i v_i^T)``.
For the step-size chain the analogous increment is ``-log(sigma'/sigma)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from .chains import (
    NormalizedCmaState,
    NormalizedCsaState,
    chain_alpha,
    chain_F,
    run_normalized,
    simulate,
)
from .es import ESParams, RawCmaState, RawCsaState, cma_raw_update, csa_raw_update, sample_population
from .rng import as_stream

CHAINS = ("cma", "csa")
N_BATCHES = 20
Z95 = 1.959963984540054


@dataclass
class EstimatorResult:
    mean: float
    std_error: float
    n: int
    ci95: tuple = field(init=False)
    values: list | None = None

    def __post_init__(self):
        half = Z95 * self.std_error
        self.ci95 = (self.mean - half, self.mean + half)

    def summary(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n": self.n, "ci95": list(self.ci95)}


def default_burn_in(params: ESParams) -> int:
    return 10 * params.d


def default_start(chain: str, d: int):
    """``z = (1, ..., 1)/sqrt(d)`` and ``Sigma = I``."""
    z = np.ones(d) / math.sqrt(d)
    if chain == "cma":
        return NormalizedCmaState(z, np.eye(d))
    if chain == "csa":
        return NormalizedCsaState(z)
    raise ValueError(f"unknown chain {chain!r}; choose from {CHAINS}")


def raw_from_normalized(state):
    """The raw state with scale one that normalizes to ``state`` about 0."""
    if isinstance(state, NormalizedCmaState):
        return RawCmaState(state.z.copy(), state.sigma.copy())
    return RawCsaState(state.z.copy(), 1.0)


def _mean_se(values) -> EstimatorResult:
    values = np.asarray(values, dtype=float)
    n = values.size
    if n > 1 and np.ptp(values) > 0:
        se = float(np.std(values, ddof=1) / math.sqrt(n))
        mean = float(np.mean(values))
    else:
        se, mean = 0.0, float(values[0])
    return EstimatorResult(mean, se, n, values=values.tolist())


def batch_means(values, n_batches: int = N_BATCHES) -> EstimatorResult:
    """Mean with batch-means standard error over ``n_batches`` contiguous batches."""
    values = np.asarray(values, dtype=float)
    if values.size < n_batches:
        raise ValueError(f"need at least {n_batches} values for batch means, got {values.size}")
    if not np.all(np.isfinite(values)):
        i = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FloatingPointError(f"non-finite functional value {values[i]!r} at index {i}")
    if np.ptp(values) == 0:
        return EstimatorResult(float(values[0]), 0.0, values.size)
    means = np.array([b.mean() for b in np.array_split(values, n_batches)])
    return EstimatorResult(float(values.mean()), float(means.std(ddof=1) / math.sqrt(n_batches)), values.size)


def _cr_increment(params, state, log_scale):
    if isinstance(state, NormalizedCmaState):
        return -0.5 * log_scale
    return -log_scale


def _cr_replica(params, f, start, burn_in, T, sampler, rng):
    incs = [
        _cr_increment(params, rec.state, rec.log_scale)
        for rec in run_normalized(params, f, start, burn_in + T, rng, sampler)
        if rec.step > burn_in
    ]
    return float(np.mean(incs))


def _map(fn, items, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def cr_estimate(chain: str, params: ESParams, f, burn_in: int | None = None, T: int = 1000,
                replicas: int = 10, seed: int = 0, start=None, sampler=None, workers: int = 1):
    """Convergence rate from the time-averaged per-step increment.

    Replica ``i`` uses stream ``i + 1`` of ``seed``; the standard error is
    taken across replicas.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    burn_in = default_burn_in(params) if burn_in is None else burn_in
    start = default_start(chain, params.d) if start is None else start
    master = as_stream(seed)
    streams = [master.spawn(i) for i in range(replicas)]
    fn = partial(_cr_replica, params, f, start, burn_in, T, sampler)
    return _mean_se(_map(fn, streams, workers))


def _raw_slope(params, f, raw0, burn_in, T, rng):
    raw = raw0
    rng = as_stream(rng)
    update = cma_raw_update if isinstance(raw0, RawCmaState) else csa_raw_update
    logs = []
    for k in range(burn_in + T + 1):
        if k >= burn_in:
            logs.append(math.log(float(np.linalg.norm(raw.m))))
        if k < burn_in + T:
            raw = update(params, raw, f, sample_population(params, rng))[0]
    ks = np.arange(len(logs))
    return float(stats.linregress(ks, logs).slope)


def log_norm_slope(chain: str, params: ESParams, f, burn_in: int | None = None, T: int = 1000,
                   replicas: int = 10, seed: int = 0, start=None, workers: int = 1):
    """Least-squares slope of ``log |m_k|`` on ``k`` for the raw chain.

    The raw chain is started at the scale-one conjugate of ``start`` and uses
    the same streams as :func:`cr_estimate`, so its slope estimates ``-CR``.
    """
    burn_in = default_burn_in(params) if burn_in is None else burn_in
    start = default_start(chain, params.d) if start is None else start
    master = as_stream(seed)
    streams = [master.spawn(i) for i in range(replicas)]
    fn = partial(_raw_slope, params, f, raw_from_normalized(start), burn_in, T)
    return _mean_se(_map(fn, streams, workers))


@dataclass
class DecompositionReport:
    direct: float
    z_term: float
    scale_term: float
    z_telescoped: float
    T: int

    @property
    def difference(self) -> float:
        return self.direct - (self.z_term + self.scale_term)


def log_progress_decomposition(params: ESParams, f, raw0, T: int, seed) -> DecompositionReport:
    """``(1/T) log(|m_T|/|m_0|)`` from the raw chain against its two normalized-chain terms.

    Covariance chain: ``(1/T) sum (log|z_{k+1}| - log|z_k|)`` plus
    ``(1/2dT) sum log det K_{k+1}``.  Step-size chain: the ``log |z|`` sum plus
    ``(1/T) sum log(sigma_{k+1}/sigma_k)``.  ``f`` must be scaling-invariant about 0.

    The normalized map magnifies rounding error in ``z`` by the per-step
    contraction factor, so the two computations drift apart roughly like
    ``exp(CR T)`` ulps; keep ``T`` short for fast-converging runs.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    cma = isinstance(raw0, RawCmaState)
    z_incs, scale_incs = [], []
    prev_log_z = first_log_z = None
    for rec in simulate(params, f, raw0, T, seed):
        nz = float(np.linalg.norm(rec.state.z))
        if nz == 0.0:
            raise FloatingPointError(f"z is exactly zero at step {rec.step}")
        log_z = math.log(nz)
        if rec.step == 0:
            first_log_z, m0 = log_z, float(np.linalg.norm(rec.raw.m))
        else:
            z_incs.append(log_z - prev_log_z)
            scale_incs.append(0.5 * rec.log_scale if cma else rec.log_scale)
        prev_log_z, last = log_z, rec
    direct = math.log(float(np.linalg.norm(last.raw.m)) / m0) / T
    return DecompositionReport(
        direct=direct,
        z_term=math.fsum(z_incs) / T,
        scale_term=math.fsum(scale_incs) / T,
        z_telescoped=(prev_log_z - first_log_z) / T,
        T=T,
    )


def ergodic_average(chain: str, params: ESParams, f, g, burn_in: int | None = None, T: int = 1000,
                    seed: int = 0, start=None, n_batches: int = N_BATCHES) -> EstimatorResult:
    """``(1/T) sum g(state_k)`` after burn-in, batch-means standard error."""
    burn_in = default_burn_in(params) if burn_in is None else burn_in
    start = default_start(chain, params.d) if start is None else start
    values = [g(rec.state) for rec in run_normalized(params, f, start, burn_in + T, seed) if rec.step > burn_in]
    return batch_means(values, n_batches)


def default_lyapunov(state) -> float:
    """``|z|**0.5 + |z|**-0.5``."""
    r = float(np.linalg.norm(state.z))
    return math.sqrt(r) + 1.0 / math.sqrt(r)


@dataclass
class DriftRow:
    probe: int
    norm_z: float
    v: float
    ratio: float
    std_error: float
    n: int


def _drift_probe(params, f, V, mc, args):
    index, x, rng = args
    v0 = V(x)
    if not v0 > 0:
        raise ValueError(f"Lyapunov function must be positive on probes, got {v0!r} at probe {index}")
    ratios = np.empty(mc)
    for j in range(mc):
        steps = chain_alpha(params, x, sample_population(params, rng), f)
        ratios[j] = V(chain_F(params, x, steps)) / v0
    est = _mean_se(ratios)
    return DriftRow(index, float(np.linalg.norm(x.z)), v0, est.mean, est.std_error, mc)


def drift_estimate(chain: str, params: ESParams, f, V=None, probe_states=(), mc_per_state: int = 1000,
                   seed: int = 0, workers: int = 1) -> list[DriftRow]:
    """Monte Carlo ``E[V(X_1) | X_0 = x] / V(x)`` at each probe state.

    A diagnostic for a geometric drift condition: ratios below one outside a
    center set are what such a condition requires; ratios at or above one
    inside it are allowed.
    """
    V = default_lyapunov if V is None else V
    master = as_stream(seed)
    for x in probe_states:
        expected = NormalizedCmaState if chain == "cma" else NormalizedCsaState
        if not isinstance(x, expected):
            raise TypeError(f"probe {x!r} is not a {chain} state")
    items = [(i, x, master.spawn(i)) for i, x in enumerate(probe_states)]
    return _map(partial(_drift_probe, params, f, V, mc_per_state), items, workers)


def probe_at_norms(chain: str, d: int, norms) -> list:
    """Probe states ``r e_1`` (with ``Sigma = I``) for each radius ``r``."""
    out = []
    for r in norms:
        z = np.zeros(d)
        z[0] = r
        out.append(NormalizedCmaState(z, np.eye(d)) if chain == "cma" else NormalizedCsaState(z))
    return out


def _log_norm_z(state):
    return math.log(float(np.linalg.norm(state.z)))


def _norm_z_power(p, state):
    return float(np.linalg.norm(state.z)) ** p


def _det_sigma(state):
    return float(np.linalg.det(state.sigma)) if isinstance(state, NormalizedCmaState) else 1.0


def _constant(value, state):
    return value


def parse_functional(name: str):
    """``log_norm_z``, ``norm_z``, ``det_sigma`` or ``const:<value>``."""
    if name == "log_norm_z":
        return _log_norm_z
    if name == "norm_z":
        return partial(_norm_z_power, 1.0)
    if name == "det_sigma":
        return _det_sigma
    if isinstance(name, str) and name.startswith("const:"):
        return partial(_constant, float(name.split(":", 1)[1]))
    raise ValueError(f"unknown functional {name!r}")


def parse_lyapunov(name: str):
    """``sqrt_pair`` (the default), ``one`` or ``norm:<p>``."""
    if name == "sqrt_pair":
        return default_lyapunov
    if name == "one":
        return partial(_constant, 1.0)
    if isinstance(name, str) and name.startswith("norm:"):
        return partial(_norm_z_power, float(name.split(":", 1)[1]))
    raise ValueError(f"unknown Lyapunov function {name!r}")
