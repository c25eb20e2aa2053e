import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgdstop import (
    ConfigError,
    Dataset,
    InputError,
    KernelMatrix,
    KernelSpec,
    RuleConfig,
    asr_stop,
    bp_stop,
    build_kernel_matrix,
    cross_kernel,
    cross_validate_constant,
    dsr_stop,
    estimate_noise_std,
    holdout_stop,
    increment_norms,
    kappa_sq,
    lp_stop,
    oracle_stop,
    w_full,
    w_prime,
)
from kgdstop.rules import EmptyGridError, holdout_split, lepskii_grid

from conftest import random_problem
from oracles import (
    EigenOracle,
    asr_scan,
    bp_scan,
    dsr_scan,
    lepskii_candidates,
    lp_scan,
    oracle_scan,
    w_full_ref,
    w_prime_ref,
)

HUGE = 1e300


# --- thresholds ---------------------------------------------------------------


def test_w_prime_unit_case():
    assert w_prime(1, 1, 0.5) == pytest.approx(190.0, rel=1e-15)


@pytest.mark.parametrize("t, n", [(1, 10), (5, 100), (40, 1000)])
def test_w_prime_eff_dim_clamp(t, n):
    assert w_prime(t, n, 0.0) == w_prime(t, n, 1.0)


def test_w_prime_rederived():
    assert w_prime(4, 100, 2.5) == pytest.approx(w_prime_ref(4, 100, 2.5), rel=1e-14)


def test_w_full_unit_case():
    assert w_full(1, 1, 1.0, 1.0, 1.0, 0.0) == pytest.approx(20 * 73 * math.sqrt(2), rel=1e-14)
    assert w_full(1, 1, 1.0, 1.0, 1.0, 0.0) == pytest.approx(2064.75, abs=0.01)


def test_w_full_linear_in_noise_constants():
    base = w_full(7, 50, 3.0, 1.3, 0.8, 0.0)
    assert w_full(7, 50, 3.0, 1.3, 1.6, 0.0) == pytest.approx(2 * base, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 2000), st.integers(1, 5000), st.floats(0, 100), st.floats(0.1, 3), st.floats(0.01, 5),
       st.floats(0, 5))
def test_w_full_rederived(t, n, eff, kappa, m, gamma):
    assert w_full(t, n, eff, kappa, m, gamma) == pytest.approx(w_full_ref(t, n, eff, kappa, m, gamma), rel=1e-12)
    assert w_prime(t, n, eff) == pytest.approx(w_prime_ref(t, n, eff), rel=1e-12)


@pytest.mark.parametrize("kernel", ["k1", "k2"])
def test_w_prime_nondecreasing_along_iterations(kernel):
    _, _, m = random_problem(3, 60, kernel)
    ts = np.arange(1, 500)
    vals = w_prime(ts, 60, m.effective_dim(1.0 / ts))
    assert np.all(np.diff(vals) >= 0)


# --- ASR --------------------------------------------------------------------------


def test_asr_zero_data_stops_at_one():
    spec, data, m = random_problem(0, 20)
    zero = Dataset(data.inputs, np.zeros(20))
    d = asr_stop(zero, m, spec, RuleConfig(c_cv=1e-6))
    assert d.t_hat == 1 and not d.truncated


def test_asr_huge_constant_stops_at_one():
    spec, data, m = random_problem(0, 20)
    assert asr_stop(data, m, spec, RuleConfig(c_cv=HUGE)).t_hat == 1


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("c_cv", [2.0**-12, 2.0**-8, 2.0**-4, 1.0])
def test_asr_matches_scan(seed, c_cv):
    spec, data, m = random_problem(seed, 40)
    beta = 1.0 / kappa_sq(spec)
    d = asr_stop(data, m, spec, RuleConfig(c_cv=c_cv))
    assert d.t_hat == asr_scan(EigenOracle(m.entries, data.outputs, beta), c_cv, 40)
    o = EigenOracle(m.entries, data.outputs, beta)
    np.testing.assert_allclose(d.coeffs_at_stop, o.coeffs(d.t_hat), rtol=1e-8, atol=1e-12)


def test_asr_truncation_flag():
    spec, data, m = random_problem(1, 30)
    d = asr_stop(data, m, spec, RuleConfig(c_cv=1e-12, t_max=5))
    assert d.truncated and d.t_hat == 5
    assert list(d.trace[:, 0]) == [1, 2, 3, 4, 5]


def test_asr_theoretical_variant():
    spec, data, m = random_problem(2, 30)
    d = asr_stop(data, m, spec, RuleConfig(theoretical=True, m_noise=0.3, gamma_noise=0.1))
    n, beta = 30, 0.5
    eff = m.effective_dim(1.0)
    rhs = 4 * (1 + beta) * w_full_ref(1, n, eff, math.sqrt(2.0), 0.3, 0.1) * math.log(16 / 0.05) ** 4
    assert d.rule_name == "asr-theory"
    assert d.trace[0, 2] == pytest.approx(rhs, rel=1e-12)


def test_asr_terminates_with_large_cap():
    spec, data, m = random_problem(5, 20)
    d = asr_stop(data, m, spec, RuleConfig(c_cv=2.0**-10, t_max=10**6))
    assert not d.truncated and d.t_hat < 10**6


def test_asr_rejects_oversized_step():
    spec, data, m = random_problem(0, 10)
    with pytest.raises(InputError):
        asr_stop(data, m, spec, RuleConfig(beta=0.9))


# --- oracle and hold-out --------------------------------------------------------------


def test_oracle_zero_target():
    spec, data, m = random_problem(0, 25)
    assert oracle_stop(data, m, spec, np.zeros(25), RuleConfig()).t_hat == 0


def test_oracle_noiseless_runs_to_cap():
    spec = KernelSpec.min_plus_one()
    x = np.linspace(0.05, 0.95, 12)
    f = np.sin(3 * x)
    m = build_kernel_matrix(spec, x)
    assert m.eigvals[-1] > 0
    d = oracle_stop(Dataset(x, f), m, spec, f, RuleConfig(t_max=200))
    err = d.trace[:, 1]
    assert np.all(np.diff(err) < 0)
    assert d.t_hat == 200


@pytest.mark.parametrize("seed", range(3))
def test_oracle_matches_rescan(seed):
    spec, data, m = random_problem(seed, 30)
    rng = np.random.default_rng(seed + 100)
    f_rho = data.outputs - rng.normal(0, 0.3, 30)
    d = oracle_stop(data, m, spec, f_rho, RuleConfig())
    t_ref, errs = oracle_scan(EigenOracle(m.entries, data.outputs, 0.5), f_rho, 30)
    assert d.t_hat == t_ref
    assert all(errs[d.t_hat] <= e + 1e-15 for e in errs)


def test_holdout_zero_data():
    spec, data, _ = random_problem(0, 20)
    assert holdout_stop(Dataset(data.inputs, np.zeros(20)), spec, RuleConfig(), 5).t_hat == 0


def test_holdout_deterministic():
    spec, data, _ = random_problem(1, 30)
    a = holdout_stop(data, spec, RuleConfig(), 123)
    b = holdout_stop(data, spec, RuleConfig(), 123)
    assert a.t_hat == b.t_hat
    np.testing.assert_array_equal(a.coeffs_at_stop, b.coeffs_at_stop)


@pytest.mark.parametrize("seed", range(3))
def test_holdout_matches_validation_scan(seed):
    spec, data, _ = random_problem(seed, 40)
    d = holdout_stop(data, spec, RuleConfig(), seed)
    tr, vl = holdout_split(40, seed)
    assert len(tr) == 20 and sorted(np.concatenate([tr, vl])) == list(range(40))
    km = np.array([[1 + min(a, b) for b in data.inputs[tr, 0]] for a in data.inputs[tr, 0]])
    kv = np.array([[1 + min(a, b) for b in data.inputs[tr, 0]] for a in data.inputs[vl, 0]])
    o = EigenOracle(km, data.outputs[tr], 0.5)
    errs = [np.mean((kv @ o.coeffs(t) - data.outputs[vl]) ** 2) for t in range(41)]
    assert d.t_hat == int(np.argmin(errs))
    np.testing.assert_array_equal(d.support, tr)


def test_holdout_needs_two_samples():
    with pytest.raises(InputError):
        holdout_stop(Dataset([0.5], [1.0]), KernelSpec.min_plus_one(), RuleConfig(), 0)


# --- balancing principle -----------------------------------------------------------


def test_bp_huge_constant():
    spec, data, m = random_problem(0, 25)
    assert bp_stop(data, m, spec, RuleConfig(c_bp=HUGE)).t_hat == 0


def test_bp_zero_data():
    spec, data, m = random_problem(0, 25)
    assert bp_stop(Dataset(data.inputs, np.zeros(25)), m, spec, RuleConfig()).t_hat == 0


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("c_bp", [2.0**-10, 2.0**-6, 2.0**-2])
def test_bp_matches_pairwise_check(seed, c_bp):
    spec, data, m = random_problem(seed, 30)
    d = bp_stop(data, m, spec, RuleConfig(c_bp=c_bp))
    assert d.t_hat == bp_scan(EigenOracle(m.entries, data.outputs, 0.5), c_bp, 30)
    assert d.t_hat <= 30


# --- Lepskii principle --------------------------------------------------------------


def test_lepskii_grid_powers_of_two():
    spec, data, m = random_problem(0, 1000)
    grid = lepskii_grid(1000, spec, m, RuleConfig(q=2))
    assert list(grid[:4]) == [1, 2, 4, 8]


def test_lepskii_grid_dedups_rounding():
    spec, data, m = random_problem(0, 400)
    grid = lepskii_grid(400, spec, m, RuleConfig(q=1.2))
    assert np.all(np.diff(grid) > 0)
    assert grid[0] == 1


def test_lp_huge_constant_returns_first_candidate():
    spec, data, m = random_problem(0, 40)
    d = lp_stop(data, m, spec, RuleConfig(c_lp=HUGE))
    assert d.t_hat == lepskii_grid(40, spec, m, RuleConfig())[0]


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("c_lp", [2.0**-6, 2.0**-3, 0.5, 2.0])
def test_lp_matches_grid_scan(seed, c_lp):
    spec, data, m = random_problem(seed, 40)
    o = EigenOracle(m.entries, data.outputs, 0.5)
    grid = lepskii_candidates(o, 2.0, 0.05, 2.0, 40)
    np.testing.assert_array_equal(lepskii_grid(40, spec, m, RuleConfig()), grid)
    assert lp_stop(data, m, spec, RuleConfig(c_lp=c_lp)).t_hat == lp_scan(o, c_lp, grid)


def test_lp_empty_grid():
    # n / (3 kappa^2 (N + 1)) < 1 for n = 4 with kappa^2 = 2, so even t = 1 is capped away
    spec, data, m = random_problem(0, 4)
    with pytest.raises(EmptyGridError):
        lp_stop(data, m, spec, RuleConfig())


def test_lp_needs_three_samples():
    spec = KernelSpec.min_plus_one()
    data = Dataset([0.1, 0.9], [0.0, 1.0])
    with pytest.raises(InputError):
        lp_stop(data, build_kernel_matrix(spec, data.inputs), spec, RuleConfig())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40), st.floats(1e-4, 10))
def test_lepskii_norm_identity(seed, n, lam):
    spec, _, m = random_problem(seed, n)
    g = np.random.default_rng(seed).normal(size=n)
    inc = increment_norms(np.zeros(n), g, m)
    s, v = np.linalg.eigh(m.entries)
    p = v.T @ g
    eig = np.sum((s / n + lam) * s * p**2)
    assert inc.d_norm**2 + lam * inc.k_norm**2 == pytest.approx(eig, rel=1e-10)


# --- DSR ----------------------------------------------------------------------------------


def test_dsr_tiny_tau_never_fires():
    spec, data, m = random_problem(0, 30)
    d = dsr_stop(data, m, spec, RuleConfig(), 1e-12)
    assert d.truncated and d.t_hat == 30


def test_dsr_single_eigenvalue():
    # one normalized eigenvalue mu = 2 >= 1/(t beta) for every t >= 1 (beta = 1/2)
    spec = KernelSpec.min_plus_one()
    data = Dataset([0.1, 0.2, 0.3, 0.4], np.ones(4))
    m = KernelMatrix.from_entries(np.diag([8.0, 0.0, 0.0, 0.0]))
    # fires at the first t with t beta > n C^2 / tau^2 = 4
    d = dsr_stop(data, m, spec, RuleConfig(c_dsr=1.0, t_max=100), 1.0)
    assert d.t_hat == 9


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("c_dsr", [0.05, 0.5, 2 * math.e])
def test_dsr_matches_scan(seed, c_dsr):
    spec, data, m = random_problem(seed, 40)
    tau = estimate_noise_std(data)
    d = dsr_stop(data, m, spec, RuleConfig(c_dsr=c_dsr), tau)
    assert d.t_hat == dsr_scan(m.entries, 0.5, c_dsr, tau, 40)


def test_dsr_rejects_nonpositive_tau():
    spec, data, m = random_problem(0, 10)
    with pytest.raises(InputError):
        dsr_stop(data, m, spec, RuleConfig(), 0.0)


# --- noise estimate -------------------------------------------------------------


def test_noise_constant_outputs():
    assert estimate_noise_std(Dataset(np.random.default_rng(0).uniform(size=50), np.full(50, 3.0))) == 0.0


def test_noise_calibration_small():
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(20):
        x = rng.uniform(size=2000)
        y = np.where(x <= 0.5, x, 1 - x) + rng.normal(0, math.sqrt(0.2), 2000)
        hits += abs(estimate_noise_std(Dataset(x, y)) - math.sqrt(0.2)) <= 0.1 * math.sqrt(0.2)
    assert hits >= 19


def test_noise_vanishes_on_smooth_grid():
    est = []
    for n in (100, 1000, 10000):
        x = np.linspace(0, 1, n)
        est.append(estimate_noise_std(Dataset(x, np.sin(2 * np.pi * x))))
    assert est[0] > est[1] > est[2]
    assert est[2] < 1e-3


def test_noise_nearest_neighbour_brute_force():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(60, 3))
    y = rng.normal(size=60)
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    nn = np.argmin(dist, axis=1)
    ref = math.sqrt(np.sum((y - y[nn]) ** 2) / (2 * 60))
    assert estimate_noise_std(Dataset(x, y)) == pytest.approx(ref, rel=1e-12)


def test_noise_needs_three_samples():
    with pytest.raises(InputError):
        estimate_noise_std(Dataset([0.1, 0.2], [0.0, 1.0]))


# --- cross-validation ---------------------------------------------------------------


def test_cv_singleton_grid():
    spec, data, _ = random_problem(0, 40)
    assert cross_validate_constant("asr", data, spec, [0.37]) == 0.37


def test_cv_empty_grid():
    spec, data, _ = random_problem(0, 40)
    with pytest.raises(InputError):
        cross_validate_constant("asr", data, spec, [])


def test_cv_unknown_rule():
    spec, data, _ = random_problem(0, 40)
    with pytest.raises(ConfigError):
        cross_validate_constant("or", data, spec, [1.0, 2.0])


def test_cv_rejects_absurd_constant():
    # low-noise tent: stopping at t=1 leaves a large bias that a moderate constant avoids
    rng = np.random.default_rng(2)
    x = rng.uniform(size=200)
    y = np.where(x <= 0.5, x, 1 - x) + 0.6 + rng.normal(0, 0.05, 200)
    spec = KernelSpec.min_plus_one()
    chosen = cross_validate_constant("asr", Dataset(x, y), spec, [2.0**-10, 1e6], seed=0)
    assert chosen == 2.0**-10


def test_cv_deterministic():
    spec, data, _ = random_problem(3, 60)
    grid = [2.0**k for k in range(-8, 2)]
    a = cross_validate_constant("bp", data, spec, grid, seed=11)
    assert a == cross_validate_constant("bp", data, spec, grid, seed=11)


def test_cv_scores_match_manual_folds():
    spec, data, _ = random_problem(6, 60)
    grid = [2.0**-9, 2.0**-5, 2.0**-1]
    sub = data.subset(np.arange(30))
    perm = np.random.default_rng(3).permutation(30)
    parts = np.array_split(perm, 5)
    scores = []
    for c in grid:
        total = 0.0
        for k in range(5):
            fit_idx = np.concatenate(parts[:k] + parts[k + 1:])
            fit, val = sub.subset(fit_idx), sub.subset(parts[k])
            m = build_kernel_matrix(spec, fit.inputs)
            d = dsr_stop(fit, m, spec, RuleConfig(c_dsr=c), estimate_noise_std(fit))
            pred = cross_kernel(spec, val.inputs, fit.inputs) @ d.coeffs_at_stop
            total += np.sum((pred - val.outputs) ** 2)
        scores.append(total)
    expected = grid[int(np.argmin(scores))]
    assert cross_validate_constant("dsr", data, spec, grid, folds=5, seed=3) == expected


# --- shared invariants --------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_rules_invariant_under_permutation(seed):
    spec, data, m = random_problem(seed, 40)
    perm = np.random.default_rng(seed).permutation(40)
    pdata = data.subset(perm)
    pm = build_kernel_matrix(spec, pdata.inputs)
    cfg = RuleConfig(c_cv=2.0**-8, c_bp=2.0**-6, c_lp=0.5)
    for rule in (asr_stop, bp_stop, lp_stop):
        assert rule(data, m, spec, cfg).t_hat == rule(pdata, pm, spec, cfg).t_hat
    tau = estimate_noise_std(data)
    assert estimate_noise_std(pdata) == pytest.approx(tau, rel=1e-12)
    assert dsr_stop(data, m, spec, cfg, tau).t_hat == dsr_stop(pdata, pm, spec, cfg, tau).t_hat
    f = data.outputs * 0.5
    assert oracle_stop(data, m, spec, f, cfg).t_hat == oracle_stop(pdata, pm, spec, f[perm], cfg).t_hat


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 40), st.integers(1, 60), st.sampled_from(["k1", "k2"]))
def test_decisions_respect_t_max(seed, n, t_max, kernel):
    spec, data, m = random_problem(seed, n, kernel)
    cfg = RuleConfig(t_max=t_max, c_cv=2.0**-8, c_bp=2.0**-8)
    for d in (asr_stop(data, m, spec, cfg), bp_stop(data, m, spec, cfg),
              dsr_stop(data, m, spec, cfg, estimate_noise_std(data))):
        assert d.t_hat <= t_max
        assert np.all(np.diff(d.trace[:, 0]) > 0)


def test_rule_config_validation():
    with pytest.raises(ConfigError):
        RuleConfig(delta=1.0)
    with pytest.raises(ConfigError):
        RuleConfig(q=1.0)
    with pytest.raises(ConfigError):
        RuleConfig(c_bp=0.0)
    with pytest.raises(ConfigError):
        RuleConfig(t_max=0)
    assert RuleConfig().c_dsr == pytest.approx(2 * math.e)
    assert replace(RuleConfig(), c_cv=3.0).c_cv == 3.0
