import math

import numpy as np
import pytest

from linattn.errors import ConfigError
from linattn.jlverify import (
    JlTrialConfig,
    inversions,
    k_bound_thm1,
    k_bound_thm2,
    random_inputs,
    sweep,
    theorem1_trial,
    theorem2_trial,
)
from linattn.numkit import gaussian_matrix, softmax_rows, svd


def test_k_bound_thm1_values():
    assert k_bound_thm1(512, 0.1) == 3466
    assert k_bound_thm1(256, 0.5) == 222
    eps = 0.3
    assert k_bound_thm1(math.exp(2), eps) == math.ceil(10 / (eps**2 - eps**3))


def test_k_bound_thm2_values():
    # first arm alone: ceil(9 * 64 * ln 64 / 0.25)
    assert math.ceil(9 * 64 * math.log(64) / 0.25) == 9583
    assert k_bound_thm2(512, 64, 0.5) == 416
    assert k_bound_thm2(10**110, 64, 0.5) == 9583


@pytest.mark.parametrize("n,d", [(2, 2), (128, 16), (4096, 64), (10**6, 3)])
def test_k_bound_thm2_monotone_in_eps(n, d):
    assert k_bound_thm2(n, d, 0.3) >= k_bound_thm2(n, d, 0.5)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_k_bounds_reject_eps(eps):
    with pytest.raises(ConfigError):
        k_bound_thm1(100, eps)
    with pytest.raises(ConfigError):
        k_bound_thm2(100, 8, eps)


def test_config_validation():
    with pytest.raises(ConfigError):
        JlTrialConfig(n=16, d=4, k=17)
    with pytest.raises(ConfigError):
        JlTrialConfig(n=16, d=4, k=4, trials=0)
    with pytest.raises(ConfigError):
        JlTrialConfig(n=16, d=4, k=4, delta=-1.0)
    assert JlTrialConfig(n=16, d=4, k=4).delta == 1 / 16


def test_theorem1_identity_hook_exact():
    inp = random_inputs(32, 4, seed=0)
    rep = theorem1_trial(JlTrialConfig(n=32, d=4, k=32, trials=3, identity_hook=True), **inp)
    assert np.all(rep.ratios == 0)
    assert rep.success_frequency == 1.0


def test_theorem2_identity_hook_not_exact():
    inp = random_inputs(32, 4, seed=0)
    rep = theorem2_trial(JlTrialConfig(n=32, d=4, k=32, trials=2, identity_hook=True), **inp)
    assert np.all(rep.ratios > 0)


def test_theorem1_median_decreases_with_k():
    inp = random_inputs(128, 16, seed=1)
    medians = [theorem1_trial(JlTrialConfig(n=128, d=16, k=k, trials=200, seed=2), **inp).median
               for k in (8, 16, 32)]
    assert medians[0] > medians[1] > medians[2]


def test_theorem1_construction_rank():
    n, k = 48, 6
    inp = random_inputs(n, 4, seed=3)
    a = (inp["q"] @ inp["wq"]) @ (inp["k"] @ inp["wk"]).T / 2.0
    p = softmax_rows(a)
    r = gaussian_matrix(k, n, 1 / k, seed=0)
    s = svd(p @ r.T @ r).s
    assert np.all(s[k:] < 1e-10 * s[0])


def test_theorem1_scale_invariance():
    inp = random_inputs(32, 4, seed=4)
    cfg = JlTrialConfig(n=32, d=4, k=8, trials=5)
    base = theorem1_trial(cfg, **inp)
    scaled = dict(inp, wv=inp["wv"] * np.array([2.0, 0.5, 3.0, 7.0]))
    np.testing.assert_allclose(theorem1_trial(cfg, **scaled).per_item, base.per_item, rtol=1e-10)


def test_theorem1_degenerate_column_skipped():
    inp = random_inputs(16, 3, seed=5)
    inp["wv"] = inp["wv"].copy()
    inp["wv"][:, 1] = 0.0
    rep = theorem1_trial(JlTrialConfig(n=16, d=3, k=4, trials=4), **inp)
    assert rep.degenerate == 1
    assert np.all(np.isnan(rep.per_item[:, 1]))
    assert np.all(np.isfinite(rep.ratios))


def test_theorem2_constant_sequence_rows_identical():
    n, d = 16, 4
    inp = random_inputs(n, d, seed=6)
    row = inp["q"][:1]
    inp = dict(inp, q=np.repeat(row, n, axis=0), k=np.repeat(row, n, axis=0))
    rep = theorem2_trial(JlTrialConfig(n=n, d=d, k=4, trials=3), **inp)
    for t in range(3):
        np.testing.assert_allclose(rep.per_item[t], rep.per_item[t, 0], rtol=1e-12)


def test_theorem2_records_both_value_norms():
    rep = theorem2_trial(JlTrialConfig(n=16, d=4, k=4, trials=2), **random_inputs(16, 4, 0))
    assert rep.extra["value_norm_spectral"] <= rep.extra["value_norm_frobenius"]


def test_seeded_determinism():
    inp = random_inputs(32, 4, seed=7)
    cfg = JlTrialConfig(n=32, d=4, k=8, trials=10, seed=3)
    for fn in (theorem1_trial, theorem2_trial):
        a, b = fn(cfg, **inp), fn(cfg, **inp)
        assert a.ratios.tobytes() == b.ratios.tobytes()
        assert a.per_item.tobytes() == b.per_item.tobytes()


def test_parallel_matches_serial():
    inp = random_inputs(32, 4, seed=8)
    cfg = JlTrialConfig(n=32, d=4, k=8, trials=12, seed=1)
    a = theorem2_trial(cfg, **inp, workers=1)
    b = theorem2_trial(cfg, **inp, workers=4)
    assert a.per_item.tobytes() == b.per_item.tobytes()


def test_capped_flag():
    rep = theorem1_trial(JlTrialConfig(n=64, d=4, k=8, trials=2), **random_inputs(64, 4, 0))
    assert rep.k_bound == k_bound_thm1(64, 0.5) and rep.capped
    assert rep.summary()["k_bound_effective"] == 64


def test_sweep_identity_hook_success():
    rows = sweep([32], JlTrialConfig(n=32, d=4, k=32, trials=3, identity_hook=True))
    assert rows[0].success_frequency == 1.0


def test_sweep_median_nonincreasing():
    ks = [4, 8, 12, 16, 24, 32, 48, 64]
    rows = sweep(ks, JlTrialConfig(n=64, d=8, k=4, trials=100, seed=0), theorem=1)
    assert inversions([r.median for r in rows]) <= 1


def test_sweep_empty():
    with pytest.raises(ConfigError):
        sweep([], JlTrialConfig(n=8, d=2, k=2))


def test_success_standard_error_halves():
    # theorem-2 construction at a k where success is neither 0 nor 1
    inp = random_inputs(64, 8, seed=0)
    small = theorem2_trial(JlTrialConfig(n=64, d=8, k=16, eps=0.6, trials=400, seed=1), **inp)
    mid = theorem2_trial(JlTrialConfig(n=64, d=8, k=16, eps=0.6, trials=800, seed=1), **inp)
    big = theorem2_trial(JlTrialConfig(n=64, d=8, k=16, eps=0.6, trials=1600, seed=1), **inp)
    p = small.success_frequency
    assert 0.05 < p < 0.95

    g = np.random.default_rng(0)

    def boot_se(x):
        return np.std([g.choice(x, x.size).mean() for _ in range(400)])

    se_small, se_mid, se_big = (boot_se(r.successes) for r in (small, mid, big))
    # quadrupling trials halves the standard error; doubling divides it by sqrt(2)
    assert abs(se_big / se_small - 0.5) <= 0.3 * 0.5
    assert abs(se_mid / se_small - 2**-0.5) <= 0.3 * 2**-0.5


def test_inversions():
    assert inversions([3, 2, 1]) == 0
    assert inversions([3, 4, 1, 2]) == 2
    assert inversions([1, 1], strict=True) == 1
