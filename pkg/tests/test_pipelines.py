import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coximpute import SurvivalDataset, fit_cox
from coximpute.errors import ParameterError, PipelineError
from coximpute.pipelines import (
    approach2_both,
    calibrate,
    combine_predictions,
    make_folds,
    pool_rubin,
    run_approach1,
    run_approach2,
    run_methods,
    run_naive,
)
from coximpute import seeding
from coximpute.survival import StepFunction

HORIZONS = (5.0, 15.0)


def _data(n=60, frac=0.3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], size=n)
    event = rng.exponential(10 * np.exp(-0.5 * X[:, 0]))
    cens = rng.uniform(5, 30, size=n)
    mask = np.zeros_like(X, dtype=bool)
    mask[:, 0] = rng.uniform(size=n) < frac
    return SurvivalDataset(np.minimum(event, cens), (event <= cens).astype(int), X, mask)


def test_folds_singletons_and_sizes():
    part = make_folds(10, 10, 3)
    assert sorted(int(f[0]) for f in part) == list(range(10))
    assert all(len(f) == 1 for f in part)
    sizes = sorted(len(f) for f in make_folds(7, 2, 0))
    assert sizes == [3, 4]
    with pytest.raises(ParameterError):
        make_folds(5, 1, 0)


@given(n=st.integers(2, 80), L=st.integers(2, 12), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_folds_partition_property(n, L, seed):
    L = min(L, n)
    part = make_folds(n, L, seed)
    allrows = np.concatenate(part.folds)
    assert np.array_equal(np.sort(allrows), np.arange(n))
    sizes = [len(f) for f in part]
    assert max(sizes) - min(sizes) <= 1
    assert all(np.array_equal(a, b) for a, b in zip(part, make_folds(n, L, seed)))


def test_pool_rubin_coefficients_and_single_fit():
    d = _data(frac=0.0)
    X = d.predictors
    f1 = fit_cox(X, d.time, d.status)
    pooled = pool_rubin([f1], "2A")
    np.testing.assert_array_equal(pooled.beta, f1.beta)
    knots = f1.baseline_cumhaz.knots
    np.testing.assert_array_equal(pooled.baseline_cumhaz(knots), f1.baseline_cumhaz(knots))

    class _Fit:
        def __init__(self, b):
            self.beta = np.array([b])
            self.baseline_cumhaz = StepFunction([1.0, 2.0], [b, 2 * b])
            self.design_spec = None

    p = pool_rubin([_Fit(0.5), _Fit(1.5)], "2A")
    assert p.beta[0] == 1.0
    np.testing.assert_allclose(p.baseline_cumhaz([1.0, 2.0]), [1.0, 2.0])


def test_pool_rubin_2A_matches_2B_on_identical_complete_fits():
    d = _data(frac=0.0)
    fit = fit_cox(d.predictors, d.time, d.status)
    a = pool_rubin([fit, fit, fit], "2A")
    b = pool_rubin([fit, fit, fit], "2B", d.predictors, d.time, d.status)
    grid = np.linspace(0.1, 30, 50)
    np.testing.assert_allclose(a.baseline_cumhaz(grid), b.baseline_cumhaz(grid), atol=1e-10)
    with pytest.raises(ParameterError):
        pool_rubin([fit], "2B")
    with pytest.raises(ParameterError):
        pool_rubin([], "2A")


def test_K1_all_approaches_coincide():
    d = _data()
    out = run_methods(d, HORIZONS, ("ap1", "ap2A", "ap2B", "nv1", "nv2A", "nv2B"), K=1, L=5, seed=11)
    assert out["ap1"].constituents.tobytes() == out["ap2A"].constituents.tobytes()
    assert out["ap1"].constituents.tobytes() == out["ap2B"].constituents.tobytes()
    assert out["nv1"].constituents.tobytes() == out["nv2A"].constituents.tobytes()
    assert out["nv1"].constituents.tobytes() == out["nv2B"].constituents.tobytes()


def test_approach2_constant_across_imputations_for_complete_rows():
    d = _data()
    both = approach2_both(d, HORIZONS, K=4, L=5, seed=2)
    complete = ~d.row_has_missing
    for ps in both.values():
        c = ps.constituents[:, complete, :]
        assert np.all(c == c[..., :1])
        assert np.any(ps.constituents[:, ~complete, :].std(axis=-1) > 0)


def test_held_out_outcome_does_not_affect_its_own_prediction():
    d = _data(seed=4)
    base = approach2_both(d, HORIZONS, K=2, L=5, seed=7)
    i = 3
    time = d.time.copy()
    status = d.status.copy()
    time[i] = time[i] * 3 + 1
    status[i] = 1 - status[i]
    d2 = SurvivalDataset(time, status, d.predictors, d.missing_mask)
    pert = approach2_both(d2, HORIZONS, K=2, L=5, seed=7)
    part = make_folds(d.n, 5, seeding.derive(7, seeding.FOLDS, 0))
    fold = next(f for f in part if i in f)
    for v in ("2A", "2B"):
        assert base[v].constituents[:, fold, :].tobytes() == pert[v].constituents[:, fold, :].tobytes()
        others = np.setdiff1d(np.arange(d.n), fold)
        assert not np.array_equal(base[v].constituents[:, others, :], pert[v].constituents[:, others, :])


def test_combined_is_row_mean_and_probabilities_are_valid():
    d = _data()
    ps = run_approach1(d, HORIZONS, K=3, L=4, seed=1)
    np.testing.assert_allclose(ps.combined, ps.constituents.mean(axis=-1), atol=1e-12)
    assert np.all((ps.constituents >= 0) & (ps.constituents <= 1))
    assert np.all(ps.constituents[1] <= ps.constituents[0])


def test_combine_rules():
    c = np.array([[0.2, 0.4, 0.9]])
    assert combine_predictions(c, "median")[0] == 0.4
    lm = combine_predictions(c, "logit-mean")[0]
    assert 0.2 < lm < 0.9
    with pytest.raises(ParameterError):
        combine_predictions(c, "mode")


def test_naive_equals_proper_when_nothing_is_missing():
    d = _data(frac=0.0)
    for v in ("2A", "2B"):
        a = run_approach2(d, HORIZONS, K=2, L=5, variant=v, seed=5)
        b = run_naive(d, HORIZONS, K=2, L=5, variant=v, seed=5)
        np.testing.assert_allclose(a.constituents, b.constituents, rtol=0, atol=1e-12)
    a1 = run_approach1(d, HORIZONS, K=2, L=5, seed=5)
    b1 = run_naive(d, HORIZONS, K=2, L=5, variant="1", seed=5)
    np.testing.assert_allclose(a1.constituents, b1.constituents, atol=1e-12)


def test_direct_validation_predictions():
    d = _data(n=80)
    new = np.array([[0.0, 0.0], [np.nan, 1.0], [1.0, -1.0]])
    ps = run_approach1(d, HORIZONS, K=3, validation=new, seed=1)
    assert ps.constituents.shape == (2, 3, 3)
    assert ps.had_missing.tolist() == [False, True, False]
    both = approach2_both(d, HORIZONS, K=3, validation=new, seed=1)
    for v in ("2A", "2B"):
        c = both[v].constituents
        assert c.shape == (2, 3, 3)
        assert np.all(c[:, [0, 2], :] == c[:, [0, 2], :1])
    with pytest.raises(ParameterError):
        run_approach1(d, HORIZONS, K=2)


def test_calibrate_returns_pooled_models():
    d = _data()
    fits, pooled, spec = calibrate(d, K=3, seed=0)
    assert len(fits) == 3
    np.testing.assert_allclose(pooled["2A"].beta, np.mean([f.beta for f in fits], axis=0))
    assert spec.width == 2


def test_pipeline_errors_carry_context():
    n = 12
    X = np.zeros((n, 1))
    X[:, 0] = np.arange(n)
    d = SurvivalDataset(np.arange(1.0, n + 1), np.zeros(n, int), X, np.zeros((n, 1), bool))
    with pytest.raises(PipelineError) as info:
        run_approach2(d, HORIZONS, K=1, L=3, variant="2A")
    assert "fold" in info.value.context


def test_bad_arguments():
    d = _data()
    with pytest.raises(ParameterError):
        run_methods(d, HORIZONS, ("ap3",), K=1, L=3)
    with pytest.raises(ParameterError):
        run_approach1(d, (-1.0,), K=1, L=3)
    with pytest.raises(ParameterError):
        run_approach1(d, HORIZONS, K=0, L=3)
