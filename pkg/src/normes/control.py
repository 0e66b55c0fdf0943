"""Deterministic control model of the normalized chains.

A control path is an array of shape ``(k, mu, d)``: ``k`` successive choices
of selected steps.  :func:`extended_map` folds the transition function over a
path; :func:`extended_density` multiplies the selection densities along it.
Paths with positive density are the control set; steering constructions use
tie-degenerate paths that only lie in its closure, which
:func:`closure_membership` certifies by random perturbation.

The rank condition at a state is checked numerically: central-difference
Jacobian of the extended map with respect to all path coordinates, projected
onto the tangent space of the unit-determinant manifold, then an SVD rank.
This is a surrogate for the generalized-Jacobian condition, valid at sampled
points where the map is differentiable; it is not a proof.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaln

from .chains import (
    DivergenceError,
    NormalizedCmaState,
    NormalizedCsaState,
    chain_alpha,
    chain_F,
    check_finite,
    cma_F,
    state_distance,
)
from .es import ESParams, sample_population
from .linalg import DEFAULT_FD_STEP, DEFAULT_RANK_TOL, numeric_jacobian, numeric_rank, spd_inv_sqrt, tangent_project
from .rng import as_stream

_LOG_2PI = math.log(2.0 * math.pi)


class SteeringError(RuntimeError):
    pass


class NoPositivePathError(RuntimeError):
    pass


def as_path(path, params: ESParams) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    if path.size == 0:
        return np.zeros((0, params.mu, params.d))
    path = path.reshape(-1, params.mu, params.d)
    if not np.all(np.isfinite(path)):
        raise ValueError("control path has non-finite entries")
    return path


def extended_map(params: ESParams, x, path, guard: bool = False):
    """``S_x^k``: fold the transition function over the path; ``k = 0`` returns ``x``."""
    state = x
    for t, steps in enumerate(as_path(path, params), start=1):
        state = chain_F(params, state, steps)
        if guard:
            check_finite(t, state)
    return state


def _transform(state):
    return state.sqrt_sigma


def _candidates(state, us):
    us = np.atleast_2d(us)
    t = _transform(state)
    if np.ndim(t) == 0:
        return state.z + t * us
    return state.z + us @ t.T


@dataclass(frozen=True)
class QEstimate:
    value: float
    std_error: float
    n: int


def _reference_values(f, state, mc_samples, rng):
    xi = rng.normal((mc_samples, state.d))
    return np.sort(f.values(_candidates(state, xi)))


def _q_from_counts(counts, n):
    # beyond every reference draw: report the resolution limit n/(n+1), not 1
    q = counts / n
    return np.where(counts >= n, n / (n + 1.0), q)


def q_batch(f, state, us, ref_sorted) -> np.ndarray:
    """Fraction of reference values strictly below ``f`` at each candidate step."""
    vals = f.values(_candidates(state, us))
    return _q_from_counts(np.searchsorted(ref_sorted, vals, side="left"), ref_sorted.size)


def q_estimate(params: ESParams, f, state, u, mc_samples: int, rng) -> QEstimate:
    """Monte Carlo ``Q(u) = P(f(z + sqrt(Sigma) xi) < f(z + sqrt(Sigma) u))``.

    When every draw falls below the candidate the estimate is ``n/(n+1)``:
    the true value is below one for objectives unbounded above.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    rng = as_stream(rng)
    ref = _reference_values(f, state, mc_samples, rng)
    p = float(q_batch(f, state, np.asarray(u, dtype=float)[None, :], ref)[0])
    return QEstimate(p, math.sqrt(p * (1.0 - p) / mc_samples), mc_samples)


@dataclass(frozen=True)
class DensityValue:
    value: float
    log_value: float

    @classmethod
    def from_log(cls, log_value):
        return cls(math.exp(log_value) if log_value > -math.inf else 0.0, log_value)


def log_prefactor(params: ESParams) -> float:
    """``log(lam! / (lam - mu)!)``."""
    return float(gammaln(params.lam + 1) - gammaln(params.lam - params.mu + 1))


def log_selection_density_batch(params: ESParams, f, state, vs, ref_sorted) -> np.ndarray:
    """Log density for a batch ``vs`` of shape ``(n, mu, d)``, ``Q`` from a shared reference."""
    vs = np.asarray(vs, dtype=float)
    n, mu, d = vs.shape
    fv = f.values(_candidates(state, vs.reshape(n * mu, d))).reshape(n, mu)
    ordered = np.all(np.diff(fv, axis=1) > 0, axis=1) if mu > 1 else np.ones(n, dtype=bool)
    log_gauss = -0.5 * np.einsum("nmd,nmd->n", vs, vs) - 0.5 * mu * d * _LOG_2PI
    out = log_prefactor(params) + log_gauss
    if params.lam > mu:
        q = _q_from_counts(np.searchsorted(ref_sorted, fv[:, -1], side="left"), ref_sorted.size)
        with np.errstate(divide="ignore"):
            out = out + (params.lam - mu) * np.log1p(-q)
    return np.where(ordered, out, -np.inf)


def selection_density(params: ESParams, f, state, v, mc_samples: int, rng) -> DensityValue:
    """Density of the selected steps ``alpha(state, U)`` at ``v`` (shape ``(mu, d)``).

    ``lam!/(lam-mu)! * 1{f-values strictly increasing} * (1 - Q(v_mu))**(lam-mu)
    * prod_i gamma_d(v_i)``, with ``Q`` estimated from ``mc_samples`` draws.
    """
    rng = as_stream(rng)
    v = np.asarray(v, dtype=float).reshape(1, params.mu, params.d)
    ref = _reference_values(f, state, mc_samples, rng)
    return DensityValue.from_log(float(log_selection_density_batch(params, f, state, v, ref)[0]))


@dataclass(frozen=True)
class PathDensity:
    value: float
    log_value: float
    step_log_values: tuple

    @property
    def positive(self) -> bool:
        return self.log_value > -math.inf


def extended_density(params: ESParams, f, x, path, mc_samples: int, rng) -> PathDensity:
    """Product of selection densities along the states visited by the path."""
    rng = as_stream(rng)
    state, logs = x, []
    for steps in as_path(path, params):
        logs.append(selection_density(params, f, state, steps, mc_samples, rng).log_value)
        if logs[-1] == -math.inf:
            break
        state = chain_F(params, state, steps)
    total = float(sum(logs))
    return PathDensity(math.exp(total) if total > -math.inf else 0.0, total, tuple(logs))


class Membership(enum.Enum):
    MEMBER = "MEMBER"
    CLOSURE_MEMBER = "CLOSURE-MEMBER"
    NOT_FOUND = "NOT-FOUND"


def closure_membership(params: ESParams, f, x, path, epsilon: float = 1e-6, trials: int = 500,
                       rng=0, mc_samples: int = 1000) -> Membership:
    """Membership of ``path`` in the control set from ``x`` or in its closure.

    Perturbations are uniform in the ball of radius ``epsilon`` in path space.
    ``NOT_FOUND`` means no perturbation had positive density, which for the
    builtins would indicate a level set of positive measure.  A random
    perturbation of ``mu`` tied steps is correctly ordered with probability
    ``1/mu!``, hence the generous default number of trials.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = as_stream(rng)
    path = as_path(path, params)
    if extended_density(params, f, x, path, mc_samples, rng).positive:
        return Membership.MEMBER
    n = path.size
    for _ in range(trials):
        direction = rng.normal(n)
        direction /= np.linalg.norm(direction)
        radius = epsilon * rng.uniform(1)[0] ** (1.0 / n)
        trial = path + (radius * direction).reshape(path.shape)
        if extended_density(params, f, x, trial, mc_samples, rng).positive:
            return Membership.CLOSURE_MEMBER
    return Membership.NOT_FOUND


def _repeat(params, u):
    return np.tile(np.asarray(u, dtype=float), (params.mu, 1))


def steer_csa(params: ESParams, start: NormalizedCsaState, k: int = 1) -> np.ndarray:
    """``-z0`` repeated ``mu`` times, then ``k - 1`` zero steps; reaches 0 after one step."""
    path = np.zeros((k, params.mu, params.d))
    if k:
        path[0] = _repeat(params, -start.z)
    return path


def steer_cma(params: ESParams, start: NormalizedCmaState, tol: float = 1e-6) -> np.ndarray:
    """Path of length ``2d - 1`` from ``start`` to ``(0, I)``.

    Step 1 re-centers ``z`` to 0.  Then, for each eigendirection ``e_j`` of
    the resulting ``Sigma`` other than the leading one ``e_1``, a kick of size
    ``kappa`` along ``e_j`` followed by a re-centering step raises the
    ``e_j`` eigenvalue relative to the others; ``kappa`` is found by
    bisection so that it matches the ``e_1`` eigenvalue.  Once all
    eigenvalues agree, the unit determinant forces ``Sigma = I``.
    """
    d = params.d
    steps = []
    state = start

    def push(u):
        nonlocal state
        v = _repeat(params, u)
        steps.append(v)
        state = cma_F(params, state, v)

    push(-spd_inv_sqrt(state.sigma) @ state.z)
    vals, vecs = np.linalg.eigh(state.sigma)
    basis = vecs[:, np.argsort(vals)[::-1]]
    for j in range(1, d):
        kappa = _equalizing_kick(params, state, basis[:, 0], basis[:, j])
        push(kappa * (spd_inv_sqrt(state.sigma) @ basis[:, j]))
        push(-spd_inv_sqrt(state.sigma) @ state.z)
    path = np.asarray(steps).reshape(len(steps), params.mu, d)
    err = state_distance(state, NormalizedCmaState.origin(d))
    if not err < tol:
        raise SteeringError(f"steering endpoint is {err:.3e} from (0, I), tolerance {tol:.1e}")
    return path


def _kick_gap(params, state, lead, target, kappa):
    """Rayleigh-quotient gap ``target - lead`` after a kick and a re-centering step."""
    u = kappa * (spd_inv_sqrt(state.sigma) @ target)
    mid = cma_F(params, state, _repeat(params, u))
    end = cma_F(params, mid, _repeat(params, -spd_inv_sqrt(mid.sigma) @ mid.z))
    return float(target @ end.sigma @ target - lead @ end.sigma @ lead)


def _equalizing_kick(params, state, lead, target, max_doublings: int = 80) -> float:
    if _kick_gap(params, state, lead, target, 0.0) >= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_doublings):
        if _kick_gap(params, state, lead, target, hi) > 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise SteeringError(f"no sign change of the eigenvalue gap on [0, {hi:.3e}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _kick_gap(params, state, lead, target, mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def tangent_dimension(x) -> int:
    d = x.d
    if isinstance(x, NormalizedCmaState):
        return d + d * (d + 1) // 2 - 1
    return d


def default_path_length(x) -> int:
    """``k0 (k0 - 1) + 1`` with ``k0 = d(d+1)/2`` for the covariance chain, 1 otherwise."""
    if isinstance(x, NormalizedCmaState):
        k0 = x.d * (x.d + 1) // 2
        return k0 * (k0 - 1) + 1
    return 1


def path_jacobian(params: ESParams, x, path, fd_step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """FD Jacobian of the path-to-endpoint map, projected on the endpoint tangent space.

    Rows are ``z`` followed (covariance chain) by the upper triangle of
    ``Sigma``; columns follow the row-major flattening of the path.
    """
    path = as_path(path, params)
    shape = path.shape

    def endpoint(flat):
        return extended_map(params, x, flat.reshape(shape)).as_vector()

    jac = numeric_jacobian(endpoint, path.ravel(), fd_step)
    if not isinstance(x, NormalizedCmaState):
        return jac
    d = params.d
    end = extended_map(params, x, path)
    iu = np.triu_indices(d)
    out = np.empty_like(jac)
    for col in range(jac.shape[1]):
        h = np.zeros((d, d))
        h[iu] = jac[d:, col]
        h = h + np.triu(h, 1).T
        tv = tangent_project(end.sigma, jac[:d, col], h)
        out[:, col] = tv.as_vector()
    return out


def csa_origin_jacobian(params: ESParams) -> np.ndarray:
    """Closed form ``exp(1/d_sigma) [w_1 I | ... | w_mu I]`` of the one-step map at 0."""
    eye = np.eye(params.d)
    return math.exp(1.0 / params.d_sigma) * np.hstack([w * eye for w in params.weights])


@dataclass
class RankReport:
    best_rank: int
    target_rank: int
    full_rank: bool
    k: int
    paths_tried: int
    best_path: np.ndarray | None = None


def sample_path(params: ESParams, f, x, k: int, rng) -> np.ndarray:
    """Run the chain ``k`` steps from ``x`` and return the selected steps."""
    state, steps = x, []
    for _ in range(k):
        v = chain_alpha(params, state, sample_population(params, rng), f)
        steps.append(v)
        state = chain_F(params, state, v)
    return np.asarray(steps)


def rank_condition_check(params: ESParams, f, x, k: int | None = None, n_paths: int = 5,
                         fd_step: float = DEFAULT_FD_STEP, rng=0, tol: float = DEFAULT_RANK_TOL,
                         mc_samples: int = 1000) -> RankReport:
    """Largest numerical rank of the projected path Jacobian over sampled positive paths."""
    rng = as_stream(rng)
    k = default_path_length(x) if k is None else k
    if k < 1:
        raise ValueError("path length must be >= 1")
    target = tangent_dimension(x)
    best, best_path, tried, positive = -1, None, 0, 0
    for _ in range(n_paths):
        tried += 1
        path = sample_path(params, f, x, k, rng)
        if not extended_density(params, f, x, path, mc_samples, rng).positive:
            continue
        positive += 1
        try:
            rank = numeric_rank(path_jacobian(params, x, path, fd_step), tol)
        except (DivergenceError, np.linalg.LinAlgError):
            continue
        if rank > best:
            best, best_path = rank, path
        if best >= target:
            break
    if positive == 0:
        raise NoPositivePathError(f"no positive-density path among {tried} draws")
    return RankReport(best, target, best >= target, k, tried, best_path)


def state_to_json(x) -> dict:
    out = {"z": x.z.tolist()}
    if isinstance(x, NormalizedCmaState):
        out["sigma"] = x.sigma.tolist()
    return out


def state_from_json(obj):
    if "sigma" in obj:
        return NormalizedCmaState(np.asarray(obj["z"]), np.asarray(obj["sigma"]))
    return NormalizedCsaState(np.asarray(obj["z"]))


def path_certificate(params: ESParams, x, path, seed=None, memberships=None) -> dict:
    """Replayable JSON description of a control path and where it lands."""
    path = as_path(path, params)
    end = extended_map(params, x, path)
    return {
        "schema_version": 1,
        "chain": "cma" if isinstance(x, NormalizedCmaState) else "csa",
        "params": asdict(params),
        "seed": seed,
        "start": state_to_json(x),
        "steps": path.tolist(),
        "endpoint": state_to_json(end),
        "memberships": [m.value for m in memberships] if memberships else None,
    }


def save_path(fp, certificate: dict):
    json.dump(certificate, fp, indent=2)


def replay_certificate(certificate: dict):
    """Rebuild ``(params, start, path)`` and return the recomputed endpoint as well."""
    p = dict(certificate["params"])
    p["weights"] = tuple(p["weights"])
    params = ESParams(**p)
    start = state_from_json(certificate["start"])
    path = as_path(certificate["steps"], params)
    return params, start, path, extended_map(params, start, path)


def step_memberships(params: ESParams, f, x, path, epsilon: float = 1e-6, trials: int = 500,
                     rng=0, mc_samples: int = 1000) -> list[Membership]:
    """Closure-membership verdict of each step at the state where it is applied."""
    rng = as_stream(rng)
    out, state = [], x
    for steps in as_path(path, params):
        out.append(closure_membership(params, f, state, steps[None], epsilon, trials, rng, mc_samples))
        state = chain_F(params, state, steps)
    return out


def random_start(chain: str, d: int, rng, z_scale: float = 3.0):
    """A random normalized state: ``z ~ N(0, z_scale^2 I)``, ``Sigma`` from ``A A^T + 0.1 I``."""
    rng = as_stream(rng)
    z = z_scale * rng.normal(d)
    if chain == "csa":
        return NormalizedCsaState(z)
    a = rng.normal((d, d))
    s = a @ a.T + 0.1 * np.eye(d)
    vals = np.linalg.eigvalsh(s)
    return NormalizedCmaState(z, s / math.exp(np.mean(np.log(vals))))


def integrate_selection_density(params: ESParams, f, x, n_samples: int, rng, n_batches: int = 100):
    """Monte Carlo ``int p_x(v) dv`` with ``v ~ N(0, I)`` as proposal.

    Each batch draws its own ``Q`` reference sample of the batch size, so the
    between-batch spread accounts for the error of ``Q`` as well.  Returns
    ``(mean, standard_error)``.
    """
    rng = as_stream(rng)
    per = n_samples // n_batches
    if per < 1:
        raise ValueError("need at least one sample per batch")
    means = np.empty(n_batches)
    for b in range(n_batches):
        vs = rng.normal((per, params.mu, params.d))
        ref = _reference_values(f, x, per, rng)
        log_p = log_selection_density_batch(params, f, x, vs, ref)
        log_gauss = -0.5 * np.einsum("nmd,nmd->n", vs, vs) - 0.5 * params.mu * params.d * _LOG_2PI
        means[b] = np.mean(np.exp(log_p - log_gauss))
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))
