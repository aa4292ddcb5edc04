import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wqte import Dataset
from wqte.errors import NothingToFitError, PositivityError, SeparationError, SingularDesignError
from wqte.models import (
    CLIP,
    DOUBLE_SAMPLING,
    LogisticDesign,
    LogisticModel,
    Stratifier,
    StratumModel,
    clip_probability,
    fit_double_sampling,
    fit_logistic,
    fit_logistic_batch,
    fit_mar_observance,
    fit_propensity,
    positivity_diagnostics,
    stratum_counts,
)

# saturated 2x2 table: x=0 has 3 of 10 positive, x=1 has 7 of 12
# closed-form MLE: log(3/7) and log(7/5) - log(3/7)
TABLE_INTERCEPT = -0.8472978603872037
TABLE_SLOPE = 1.1837700970084166


def table_design():
    x = np.r_[np.zeros(10), np.ones(12)]
    y = np.r_[np.ones(3), np.zeros(7), np.ones(7), np.zeros(5)]
    return np.column_stack([np.ones(22), x]), y


def test_two_by_two_table_log_odds():
    X, y = table_design()
    m = fit_logistic(X, y)
    assert m.converged
    np.testing.assert_allclose(m.coefficients, [TABLE_INTERCEPT, TABLE_SLOPE], rtol=0, atol=1e-10)


def test_frequency_weights_equal_replication():
    X, y = table_design()
    w = np.r_[np.full(10, 2.0), np.ones(12)]
    rep = np.r_[np.arange(22), np.arange(10)]
    a = fit_logistic(X, y, weights=w).coefficients
    b = fit_logistic(X[rep], y[rep]).coefficients
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_score_is_zero_at_solution(rng):
    X = np.column_stack([np.ones(300), rng.normal(size=(300, 2))])
    y = (rng.random(300) < 1 / (1 + np.exp(-X @ [0.2, 1.0, -0.5]))).astype(float)
    m = fit_logistic(X, y)
    p = m.predict_features(X)
    assert np.max(np.abs(X.T @ (y - p))) <= 1e-8


def test_one_class_labels():
    X, _ = table_design()
    with pytest.raises(SeparationError) as info:
        fit_logistic(X, np.zeros(22))
    assert info.value.column == "(labels)"


def test_complete_separation_names_column():
    x = np.linspace(-1, 1, 40)
    X = np.column_stack([np.ones(40), x])
    with pytest.raises(SeparationError) as info:
        fit_logistic(X, (x > 0).astype(float), column_names=["(intercept)", "age"])
    assert info.value.column == "age"


def test_rank_deficient_design():
    X, y = table_design()
    with pytest.raises(SingularDesignError):
        fit_logistic(np.column_stack([X, 2 * X[:, 1]]), y)


def test_batch_matches_single_fits(rng):
    X = np.column_stack([np.ones(200), rng.normal(size=200)])
    y = (rng.random(200) < 0.4).astype(float)
    W = np.stack([np.bincount(rng.integers(0, 200, 200), minlength=200) for _ in range(5)]).astype(float)
    beta, ok = fit_logistic_batch(X, y, W)
    assert ok.all()
    for b in range(5):
        np.testing.assert_allclose(beta[b], fit_logistic(X, y, weights=W[b]).coefficients, atol=1e-7)


def test_batch_flags_degenerate_rows():
    X, y = table_design()
    W = np.ones((2, 22))
    W[1, y == 1] = 0.0
    _, ok = fit_logistic_batch(X, y, W)
    assert ok.tolist() == [True, False]


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_clipping_bounds(v):
    p = clip_probability(1 / (1 + np.exp(-np.array(v))))
    assert np.all((p >= CLIP) & (p <= 1 - CLIP))


def sim_data(rng, n=400):
    x = rng.uniform(0, 2, size=(n, 2))
    z = (rng.random(n) < 0.5).astype(int)
    y = x.sum(axis=1) + z + rng.normal(size=n)
    r = (rng.random(n) < 0.7).astype(int)
    s = ((r == 0) & (rng.random(n) < 0.4)).astype(int)
    return Dataset(np.ma.MaskedArray(y, mask=(r + s) == 0), z, x, r, s)


def test_propensity_design_excludes_z(rng):
    d = sim_data(rng)
    m = fit_propensity(d)
    assert m.design.matrix(d).shape[1] == 3
    assert m.design.names(d) == ["(intercept)", "x1", "x2"]
    with pytest.raises(ValueError):
        fit_propensity(d, design=LogisticDesign(include_z=True))


def test_known_model_is_not_estimated(rng):
    d = sim_data(rng)
    m = LogisticModel.known([0.0, 0.0, 0.0], LogisticDesign())
    assert not m.estimated
    np.testing.assert_allclose(m.predict(d), 0.5)


def test_logistic_double_sampling_fits_on_missing_only(rng):
    d = sim_data(rng)
    m = fit_double_sampling(d)
    sub = d.r == 0
    ref = fit_logistic(LogisticDesign(True).matrix(d)[sub], d.s[sub]).coefficients
    np.testing.assert_allclose(m.coefficients, ref, atol=1e-8)
    assert m.target == DOUBLE_SAMPLING


def test_mar_observance_model(rng):
    d = sim_data(rng)
    m = fit_mar_observance(d)
    assert m.design.include_z


def test_double_sampling_needs_missing_records(rng):
    d = sim_data(rng)
    full = d.replace(y=d.outcome_values() + 0.0, r=np.ones(d.n, dtype=int), s=np.zeros(d.n, dtype=int))
    with pytest.raises(NothingToFitError):
        fit_double_sampling(full)


def test_no_double_sampling_is_a_positivity_failure(rng):
    d = sim_data(rng)
    y = np.ma.MaskedArray(d.outcome_values(), mask=d.r == 0)
    none = d.replace(y=y, s=np.zeros(d.n, dtype=int))
    with pytest.raises(PositivityError):
        fit_double_sampling(none)
    with pytest.raises(PositivityError):
        fit_double_sampling(none, design="saturated", stratifier=Stratifier())


def test_stratifier_codes_and_keys():
    d = Dataset([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1], [[0.2, 1.5], [0.7, 0.1], [0.5, 1.0], [0.1, 0.0]], [1] * 4, [0] * 4)
    st_ = Stratifier(((0, 0.5), (1, 1.0)))
    assert st_.codes(d).tolist() == [1, 2, 7, 4]
    assert st_.size == 8
    assert st_.key(7) == (1, 1, 1) and st_.key(2) == (0, 1, 0)


def test_saturated_proportions(rng):
    d = sim_data(rng, 600)
    st_ = Stratifier(((0, 1.0),))
    m = fit_double_sampling(d, design="saturated", stratifier=st_)
    codes = st_.codes(d)
    for c in range(4):
        sel = np.sum((d.r == 0) & (d.s == 1) & (codes == c))
        eli = np.sum((d.r == 0) & (codes == c))
        assert m.proportions[c] == sel / eli
    assert isinstance(m, StratumModel)
    assert m.score_features(d).shape == (d.n, 4)


def test_census_stratum_needs_permission():
    # stratum z=1 has its single missing record double-sampled
    d = Dataset([1.0, None, 2.0, 3.0, 4.0], [0, 0, 0, 1, 1], np.zeros((5, 1)), [1, 0, 0, 1, 0], [0, 0, 1, 0, 1])
    with pytest.raises(PositivityError):
        fit_double_sampling(d, design="saturated", stratifier=Stratifier())
    m = fit_double_sampling(d, design="saturated", stratifier=Stratifier(), allow_census=True)
    assert m.proportions.tolist() == [0.5, 1.0]
    assert m.informative().tolist() == [0]


def test_weighted_stratum_counts(rng):
    d = sim_data(rng)
    st_ = Stratifier(((0, 1.0),))
    w = rng.integers(0, 3, size=(3, d.n)).astype(float)
    sel, eli = stratum_counts(st_, d, w)
    for b in range(3):
        s1, e1 = stratum_counts(st_, d.take(np.repeat(np.arange(d.n), w[b].astype(int))))
        np.testing.assert_allclose(sel[b], s1)
        np.testing.assert_allclose(eli[b], e1)


def test_positivity_report_flags_extremes(rng):
    d = sim_data(rng)
    m = LogisticModel.known([0.0, 8.0, 0.0], LogisticDesign())
    rep = positivity_diagnostics(m, d, c=0.01)
    p = m.predict_raw(d)
    assert rep.above == int(np.sum(p > 0.99)) and rep.below == 0
    assert not rep.ok
    assert rep.as_dict()["checked"] == d.n


def test_double_sampling_diagnostics_use_missing_records(rng):
    d = sim_data(rng)
    m = fit_double_sampling(d)
    assert positivity_diagnostics(m, d).checked == int(np.sum(d.r == 0))
