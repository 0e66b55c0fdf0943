import math

import numpy as np
import pytest

from normes.analysis import (
    EstimatorResult,
    batch_means,
    cr_estimate,
    default_lyapunov,
    default_start,
    drift_estimate,
    ergodic_average,
    log_norm_slope,
    log_progress_decomposition,
    probe_at_norms,
)
from normes.chains import cma_log_det_increment, run_normalized
from normes.es import ESParams, RawCmaState, RawCsaState
from normes.objectives import make_builtin


def zero_sampler(params, rng):
    return np.zeros((params.lam, params.d))


def test_estimator_ci():
    r = EstimatorResult(1.0, 0.5, 10)
    assert r.ci95 == pytest.approx((1.0 - 1.959963984540054 * 0.5, 1.0 + 1.959963984540054 * 0.5))


def test_batch_means_constant_and_errors():
    r = batch_means(np.full(100, 3.7))
    assert r.mean == 3.7 and r.std_error == 0.0
    with pytest.raises(ValueError):
        batch_means(np.ones(5))
    with pytest.raises(FloatingPointError):
        batch_means(np.r_[np.ones(30), np.nan])


def test_batch_means_ar1_oracle():
    # AR(1) with phi = 0.5: asymptotic SE of the mean is sqrt((1+phi)/(1-phi)/n)
    phi, n = 0.5, 20_000
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        e = rng.standard_normal(n) * math.sqrt(1 - phi**2)
        x = np.empty(n)
        x[0] = rng.standard_normal()
        for t in range(1, n):
            x[t] = phi * x[t - 1] + e[t]
        ratios.append(batch_means(x).std_error / math.sqrt((1 + phi) / (1 - phi) / n))
    assert 0.85 < np.mean(ratios) < 1.15


def test_ergodic_constant_and_det():
    p = ESParams.create(3)
    f = make_builtin("sphere", 3)
    r = ergodic_average("cma", p, f, lambda s: 3.7, 10, 200, 0)
    assert r.mean == 3.7 and r.std_error == 0.0
    r = ergodic_average("cma", p, f, lambda s: float(np.linalg.det(s.sigma)), 10, 200, 0)
    assert abs(r.mean - 1.0) < 1e-10


def test_ergodic_two_seeds_agree():
    p = ESParams.create(3)
    f = make_builtin("sphere", 3)
    g = lambda s: math.log(np.linalg.norm(s.z))  # noqa: E731
    a = ergodic_average("cma", p, f, g, 30, 4000, 1)
    b = ergodic_average("cma", p, f, g, 30, 4000, 2)
    assert abs(a.mean - b.mean) < 1.96 * math.hypot(a.std_error, b.std_error)


def test_batch_se_shrinks_with_T():
    p = ESParams.create(3)
    f = make_builtin("sphere", 3)
    g = lambda s: math.log(np.linalg.norm(s.z))  # noqa: E731
    short = [ergodic_average("cma", p, f, g, 30, 2000, s).std_error for s in range(8)]
    long = [ergodic_average("cma", p, f, g, 30, 4000, 100 + s).std_error for s in range(8)]
    assert 1.2 <= np.mean(short) / np.mean(long) <= 1.7


def test_cr_forced_zero_steps():
    p = ESParams.create(3, c=0.2)
    f = make_builtin("sphere", 3)
    r = cr_estimate("cma", p, f, burn_in=0, T=50, replicas=2, sampler=zero_sampler)
    assert r.mean == pytest.approx(-0.5 * math.log(0.8), rel=1e-14)
    assert r.std_error == 0.0


def test_cr_invariant_under_monotone_transform():
    p = ESParams.create(3)
    f = make_builtin("ellipsoid", 3)
    a = cr_estimate("cma", p, f, 20, 100, 3, seed=5)
    b = cr_estimate("cma", p, f.compose(np.sqrt), 20, 100, 3, seed=5)
    assert a.values == b.values


def test_cr_positive_and_matches_slope():
    p = ESParams.create(3)
    f = make_builtin("sphere", 3)
    cr = cr_estimate("cma", p, f, 30, 600, 6, seed=1)
    slope = log_norm_slope("cma", p, f, 30, 600, 6, seed=1)
    assert cr.ci95[0] > 0
    assert abs(cr.mean + slope.mean) < 1.96 * math.hypot(cr.std_error, slope.std_error) + 5e-3


def test_cr_csa_mu1():
    p = ESParams.create(4, mu=1)
    r = cr_estimate("csa", p, make_builtin("sphere", 4), 40, 500, 4, seed=0)
    assert r.ci95[0] > 0


def test_cr_parallel_matches_serial():
    p = ESParams.create(2)
    f = make_builtin("sphere", 2)
    a = cr_estimate("cma", p, f, 10, 50, 3, seed=4)
    b = cr_estimate("cma", p, f, 10, 50, 3, seed=4, workers=2)
    assert a.values == b.values


@pytest.mark.parametrize("seed", range(3))
def test_decomposition_identity(seed):
    p = ESParams.create(3)
    rep = log_progress_decomposition(p, make_builtin("sphere", 3), RawCmaState(np.ones(3), np.eye(3)), 200, seed)
    assert abs(rep.difference) < 1e-8
    assert rep.z_term == pytest.approx(rep.z_telescoped, abs=1e-12)


def test_decomposition_csa():
    p = ESParams.create(3, mu=1)
    rep = log_progress_decomposition(p, make_builtin("sphere", 3), RawCsaState(np.ones(3), 1.0), 40, 0)
    assert abs(rep.difference) < 1e-8


def test_small_c_log_det_term_bounded():
    p = ESParams.create(3, c=0.01)
    f = make_builtin("sphere", 3)
    for rec in run_normalized(p, f, default_start("cma", 3), 100, 0):
        if rec.selected is None:
            continue
        bound = math.log(1 - p.c + p.c * np.max(np.sum(rec.selected**2, axis=1)))
        assert math.log(1 - p.c) - 1e-12 <= rec.log_scale <= bound + 1e-12
        assert rec.log_scale == pytest.approx(cma_log_det_increment(p, rec.selected) / 3)


def test_drift_constant_V():
    p = ESParams.create(3)
    rows = drift_estimate("cma", p, make_builtin("sphere", 3), lambda s: 1.0,
                          probe_at_norms("cma", 3, [0.1, 10.0]), 50, 0)
    assert all(r.ratio == 1.0 and r.std_error == 0.0 for r in rows)


def test_drift_csa_far_probes_contract():
    p = ESParams.create(5, mu=1)
    rows = drift_estimate("csa", p, make_builtin("sphere", 5), default_lyapunov,
                          probe_at_norms("csa", 5, [1e-3, 1e3]), 500, 0)
    assert all(r.ratio + 3 * r.std_error < 1.0 for r in rows)


def test_drift_rejects_wrong_state_type():
    p = ESParams.create(2)
    with pytest.raises(TypeError):
        drift_estimate("cma", p, make_builtin("sphere", 2), None, probe_at_norms("csa", 2, [1.0]), 5, 0)
