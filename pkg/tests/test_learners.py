import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.special import expit

from lmtpcr.learners import (
    GLM,
    KNN,
    Boosting,
    ConstantLearner,
    LearnerError,
    Selector,
    cv_risk,
    make_folds,
    make_learner,
    select_learner,
)

BUILTINS = [ConstantLearner(), GLM(), GLM(interactions=2), Boosting(n_rounds=20), KNN(k=5)]


def test_folds_partition_pairs():
    f = make_folds(10, 5, seed=1)
    vals = [f.validation(j) for j in range(5)]
    assert all(v.size == 2 for v in vals)
    np.testing.assert_array_equal(np.sort(np.concatenate(vals)), np.arange(10))
    for j in range(5):
        np.testing.assert_array_equal(np.sort(np.concatenate([f.training(j), f.validation(j)])),
                                      np.arange(10))


def test_folds_leave_one_out():
    f = make_folds(10, 10, seed=0)
    assert sorted(f.fold.tolist()) == list(range(10))


def test_folds_stratified_events():
    y = np.zeros(100)
    y[:30] = 1
    f = make_folds(100, 10, strata=y, seed=3)
    for j in range(10):
        v = f.validation(j)
        assert v.size == 10
        assert y[v].sum() == 3


def test_folds_errors_and_small_strata():
    with pytest.raises(ValueError):
        make_folds(3, 4)
    with pytest.raises(ValueError):
        make_folds(5, 1)
    strata = np.r_[np.zeros(18), np.ones(2)]
    with pytest.warns(UserWarning, match="strata smaller"):
        f = make_folds(20, 5, strata=strata, seed=0)
    assert np.bincount(f.fold).tolist() == [4] * 5


def test_folds_deterministic():
    a = make_folds(57, 4, strata=np.arange(57) % 3, seed=9)
    b = make_folds(57, 4, strata=np.arange(57) % 3, seed=9)
    np.testing.assert_array_equal(a.fold, b.fold)


def test_constant_learner_mean():
    X = np.zeros((3, 1))
    pred = ConstantLearner().fit(X, [0, 1, 1]).predict(np.zeros((4, 1)))
    np.testing.assert_allclose(pred, 2 / 3)


def test_glm_intercept_only():
    X = np.zeros((4, 0))
    pred = GLM().fit(X, [0, 1, 1, 1]).predict(np.zeros((2, 0)))
    np.testing.assert_allclose(pred, 0.75, atol=1e-10)


def test_glm_constant_columns_dropped():
    X = np.column_stack([np.ones(4), np.full(4, 3.0)])
    pred = GLM().fit(X, [0, 1, 1, 1]).predict(X)
    np.testing.assert_allclose(pred, 0.75, atol=1e-10)


def test_glm_recovers_logistic_coefficients():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20000, 2))
    p = expit(-0.5 + X @ np.array([1.0, -0.7]))
    y = (rng.random(20000) < p).astype(float)
    fit = GLM().fit(X, y)
    np.testing.assert_allclose(fit.predict(X), p, atol=0.03)


def test_glm_continuous_is_least_squares():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    y = X @ np.array([1.0, 2.0, -1.0]) + 0.5 + rng.normal(size=50)
    pred = GLM(family="continuous").fit(X, y).predict(X)
    D = np.column_stack([np.ones(50), X])
    ols = D @ np.linalg.lstsq(D, y, rcond=None)[0]
    np.testing.assert_allclose(pred, ols, atol=1e-6)


def test_glm_separable_terminates_within_clip():
    X = np.linspace(-1, 1, 40)[:, None]
    y = (X[:, 0] > 0).astype(float)
    pred = GLM().fit(X, y).predict(X)
    assert np.all((pred >= 1e-6) & (pred <= 1 - 1e-6))
    assert np.all(pred[y == 1] > 0.9) and np.all(pred[y == 0] < 0.1)


def test_boosted_stumps_step_function():
    # pilot run: training MSE about 1e-12 for 500 points, 200 rounds of stumps
    x = np.linspace(-1, 1, 500)[:, None]
    y = (x[:, 0] > 0).astype(float)
    fit = Boosting(n_rounds=200, max_depth=1, family="continuous").fit(x, y)
    assert np.mean((fit.predict(x) - y) ** 2) < 0.01


def test_boosting_depth_bounds():
    with pytest.raises(LearnerError):
        Boosting(max_depth=4)


def test_knn_local_average():
    X = np.arange(10.0)[:, None]
    y = np.r_[np.zeros(5), np.ones(5)]
    pred = KNN(k=3, family="continuous").fit(X, y).predict(np.array([[0.0], [9.0]]))
    np.testing.assert_allclose(pred, [0.0, 1.0])


def test_constant_response_exact():
    X = np.random.default_rng(0).normal(size=(30, 2))
    for lrn in BUILTINS:
        assert np.all(lrn.fit(X, np.ones(30)).predict(X) == 1.0)


def test_non_finite_rejected():
    X = np.array([[np.nan], [1.0]])
    with pytest.raises(LearnerError):
        GLM().fit(X, [0, 1])
    with pytest.raises(LearnerError):
        GLM().fit(np.zeros((2, 1)), [0, 2])


def test_fit_is_deterministic():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 3))
    y = (rng.random(200) < expit(X[:, 0])).astype(float)
    for lrn in BUILTINS:
        a = lrn.fit(X, y, seed=3).predict(X)
        b = lrn.fit(X, y, seed=3).predict(X)
        assert a.tobytes() == b.tobytes()


def test_select_single_candidate():
    X = np.random.default_rng(0).normal(size=(40, 1))
    y = (X[:, 0] > 0).astype(float)
    fitted, table = select_learner([GLM()], X, y, seed=0)
    assert len(table) == 1 and np.isfinite(table[0][1])


def test_select_glm_over_constant():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 2))
    y = (rng.random(500) < expit(2 * X[:, 0] - X[:, 1])).astype(float)
    folds = make_folds(500, 5, seed=0)
    fitted, table = select_learner([ConstantLearner(), GLM()], X, y, folds=folds)
    risks = [r for _, r in table]
    # compare with risks computed here by hand
    for c, r in table:
        pred = np.empty(500)
        for tr, va in folds:
            pred[va] = c.fit(X[tr], y[tr]).predict(X[va])
        assert r == pytest.approx(cv_risk("binomial", y, pred))
    assert risks[1] < risks[0]
    assert fitted.__class__.__name__ == "FittedGLM"
    assert min(risks) == risks[int(np.argmin(risks))]


def test_select_tie_goes_to_first():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(100, 1))
    y = (rng.random(100) < 0.5).astype(float)
    a, b = GLM(ridge=1e-8), GLM(ridge=1e-8, tol=1e-8)
    fitted, table = select_learner([a, b], X, y, seed=0)
    assert table[0][1] == table[1][1]
    np.testing.assert_array_equal(fitted.predict(X), a.fit(X, y).predict(X))


def test_select_all_fail():
    class Broken(ConstantLearner):
        def _fit(self, X, y, w, seed):
            raise LearnerError("boom")

    X = np.zeros((10, 1))
    y = np.r_[np.zeros(5), np.ones(5)]
    with pytest.raises(LearnerError, match="boom"):
        select_learner([Broken(), Broken()], X, y, seed=0)


def test_make_learner_specs():
    assert isinstance(make_learner("glm"), GLM)
    assert make_learner({"name": "boost", "max_depth": 3}, "continuous").family == "continuous"
    sel = make_learner(["glm", "constant"])
    assert isinstance(sel, Selector) and len(sel.candidates) == 2
    with pytest.raises(LearnerError):
        make_learner("forest")
    with pytest.raises(LearnerError):
        make_learner({"name": "glm", "depth": 2})


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(2, 40), st.integers(1, 3), st.integers(0, 10**6))
def test_binomial_predictions_in_unit_interval(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.choice([1e-3, 1.0, 1e3])
    y = rng.random(n)
    binary = rng.random(n) < 0.5
    y[binary] = np.round(y[binary])
    Xnew = rng.normal(size=(7, p)) * 10
    for lrn in BUILTINS:
        pred = lrn.fit(X, y, seed=seed).predict(Xnew)
        assert np.all((pred >= 0) & (pred <= 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 80), st.integers(1, 3), st.integers(0, 10**6))
def test_weighted_glm_score_equation(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = rng.random(n)
    lam = rng.exponential(size=n)
    fit = GLM().fit(X, y, lam)
    resid = lam * (y - fit.predict(X))
    assert abs(resid.sum()) <= 1e-8 * max(1.0, lam.sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 300), st.integers(2, 10), st.integers(0, 5), st.integers(0, 10**6))
def test_fold_invariants(n, J, n_strata, seed):
    J = min(J, n)
    strata = None if n_strata == 0 else np.random.default_rng(seed).integers(0, n_strata, n)
    with np.testing.suppress_warnings() as sup:
        sup.filter(UserWarning)
        f = make_folds(n, J, strata=strata, seed=seed)
    sizes = np.bincount(f.fold, minlength=J)
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
    if strata is not None:
        for s in np.unique(strata):
            counts = np.bincount(f.fold[strata == s], minlength=J)
            if (strata == s).sum() >= J:
                assert counts.max() - counts.min() <= 1
