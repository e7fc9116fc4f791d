import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from lmtpcr.data import History
from lmtpcr.policy import (
    AdditiveShift,
    DelayIntubation,
    GracePeriod,
    Identity,
    IPSIRiskRatio,
    MultiplicativeShift,
    PolicyError,
    Static,
    TabularPolicy,
    continuous_post_intervention_density,
    discrete_post_intervention_pmf,
    draw_randomizer,
    policy_from_config,
    randomizer,
)


def hist(n=1, t=1, L=None, A=None):
    if L is None:
        L = np.zeros((n, t, 1))
    if A is None:
        A = np.zeros((n, t - 1, 1))
    return History(t=t, baseline=np.zeros((n, 0)), L=np.asarray(L, float), A=np.asarray(A, float))


def test_identity():
    assert Identity().apply(1, np.array([7.3]), hist())[0] == 7.3


def test_additive_shift_examples():
    pol = AdditiveShift(1.0, upper=4.0)
    np.testing.assert_array_equal(pol.apply(1, np.array([2.0, 4.0]), hist(2)), [3.0, 4.0])


def test_additive_shift_callable_bound():
    pol = AdditiveShift(1.0, upper=lambda t, h: h.L[:, -1, 0])
    h = hist(2, L=[[[5.0]], [[2.0]]])
    np.testing.assert_array_equal(pol.apply(1, np.array([3.0, 3.0]), h), [4.0, 3.0])


def test_multiplicative_shift_examples():
    pol = MultiplicativeShift(0.5, lower=3.0)
    np.testing.assert_array_equal(pol.apply(1, np.array([10.0, 4.0, 6.0]), hist(3)), [5.0, 4.0, 3.0])


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.2, 1.5])
def test_multiplicative_shift_range(delta):
    with pytest.raises(PolicyError):
        MultiplicativeShift(delta)


def test_ipsi_examples():
    pol = IPSIRiskRatio(0.5)
    out = pol.apply(1, np.array([1.0, 1.0, 0.0, 0.0]), hist(4), eps=np.array([0.3, 0.7, 0.1, 0.9]))
    np.testing.assert_array_equal(out, [1, 0, 0, 0])


def test_ipsi_rejects_nonbinary_and_large_delta():
    with pytest.raises(PolicyError):
        IPSIRiskRatio(0.5).apply(1, np.array([2.0]), hist(), eps=np.array([0.1]))
    with pytest.raises(PolicyError):
        IPSIRiskRatio(1.2)
    with pytest.raises(PolicyError):
        IPSIRiskRatio(0.5).apply(1, np.array([1.0]), hist())


def test_grace_period_examples():
    L = np.zeros((2, 5, 1))
    L[0, 2, 0] = 1          # l'_3 = 1 for unit 0
    h = hist(2, t=5, L=L, A=np.zeros((2, 4, 1)))
    np.testing.assert_array_equal(GracePeriod(2).apply(5, np.array([0.0, 0.0]), h), [1, 0])


def test_grace_period_early_times_unchanged():
    L = np.ones((1, 2, 1))
    h = hist(1, t=2, L=L, A=np.zeros((1, 1, 1)))
    assert GracePeriod(2).apply(2, np.array([0.0]), h)[0] == 0


def test_grace_period_missing_column():
    with pytest.raises(PolicyError, match="absent"):
        GracePeriod(1, column=3).apply(2, np.array([0.0]), hist(1, t=2))


def test_delay_intubation_examples():
    pol = DelayIntubation()
    A = np.array([[[0.0], [1.0]], [[0.0], [2.0]], [[0.0], [0.0]]])
    h = hist(3, t=3, L=np.zeros((3, 3, 1)), A=A)
    np.testing.assert_array_equal(pol.apply(3, np.array([2.0, 2.0, 1.0]), h), [1, 2, 1])
    with pytest.raises(PolicyError):
        pol.apply(3, np.array([3.0, 0.0, 0.0]), h)


def test_static_policy():
    np.testing.assert_array_equal(Static(1).apply(2, np.array([0.0, 1.0]), hist(2, t=2)), [1, 1])


def test_pmf_ipsi_example():
    g = discrete_post_intervention_pmf(IPSIRiskRatio(0.6), [[0.5, 0.5]], (0, 1), 1, hist())
    np.testing.assert_allclose(g, [[0.7, 0.3]], atol=1e-15)


def test_pmf_identity():
    base = np.array([[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]])
    g = discrete_post_intervention_pmf(Identity(), base, (0, 1, 2), 1, hist(2))
    np.testing.assert_array_equal(g, base)


def test_pmf_delay_intubation_first_intubation():
    # enumerating the three natural values by hand: 0 -> 0, 1 -> 1, 2 -> 1
    h = hist(1, t=3, L=np.zeros((1, 3, 1)), A=[[[0.0], [1.0]]])
    g = discrete_post_intervention_pmf(DelayIntubation(), [[0.2, 0.3, 0.5]], (0, 1, 2), 3, h)
    np.testing.assert_allclose(g, [[0.2, 0.8, 0.0]], atol=1e-15)


def test_pmf_needs_support():
    with pytest.raises(PolicyError):
        discrete_post_intervention_pmf(Identity(), [[1.0]], None, 1, hist())


def test_density_additive_interior():
    pol = AdditiveShift(0.5, upper=10.0)

    def base(u, t, h):
        return norm.pdf(u)

    a = np.array([1.3])
    # 1.3 has one natural preimage (0.8); 1.3 itself would shift to 1.8 and is not a fixed point
    np.testing.assert_allclose(continuous_post_intervention_density(pol, base, 1, hist(), a),
                               norm.pdf(0.8), rtol=1e-14)


def test_density_multiplicative():
    d, lo = 0.5, 1.0
    pol = MultiplicativeShift(d, lower=lo)

    def base(u, t, h):
        return norm.pdf(u, loc=2.0)

    a = np.linspace(-1, 4, 11)
    expected = norm.pdf(a, 2.0) * (a * d < lo) + norm.pdf(a / d, 2.0) / d * (a >= lo)
    got = np.array([continuous_post_intervention_density(pol, base, 1, hist(), np.array([x]))[0]
                    for x in a])
    np.testing.assert_allclose(got, expected, rtol=1e-13)


def test_density_identity():
    a = np.array([0.4])
    got = continuous_post_intervention_density(Identity(), lambda u, t, h: norm.pdf(u), 1, hist(), a)
    np.testing.assert_allclose(got, norm.pdf(0.4))


def test_density_integrates_to_one():
    pol = MultiplicativeShift(0.6, lower=0.5)

    def dens(x):
        return continuous_post_intervention_density(
            pol, lambda u, t, hh: norm.pdf(u, loc=1.5), 1, hist(), np.array([x]))[0]

    # jumps at the bound and at bound / delta
    total, _ = quad(dens, -10, 14, points=[0.5, 0.5 / 0.6], limit=200)
    assert abs(total - 1) < 1e-8


def test_tabular_policy_first_match_wins(tmp_path):
    path = tmp_path / "rules.csv"
    path.write_text("t,L1_0,a,a_d\n1,1,1,0\n*,*,1,2\n", encoding="utf-8")
    pol = TabularPolicy.from_csv(path, support=(0, 1, 2))
    h = hist(2, L=[[[1.0]], [[0.0]]])
    np.testing.assert_array_equal(pol.apply(1, np.array([1.0, 1.0]), h), [0, 2])


def test_policy_from_config():
    assert isinstance(policy_from_config("identity"), Identity)
    assert policy_from_config({"kind": "ipsi_rr", "delta": 0.4}).delta == 0.4
    assert policy_from_config({"kind": "grace", "m": 2}).m == 2
    with pytest.raises(PolicyError):
        policy_from_config({"kind": "nope"})


def test_randomizer_is_counter_based():
    full = draw_randomizer(7, 50, 3)
    assert full.shape == (50, 3)
    assert np.all((full > 0) & (full < 1))
    # a single key gives the same bits whatever else is requested
    assert randomizer(7, [31], 2)[0] == full[31, 1]
    assert not np.array_equal(draw_randomizer(8, 50, 3), full)


def test_randomizer_roughly_uniform():
    u = draw_randomizer(0, 20000, 1).ravel()
    assert abs(u.mean() - 0.5) < 0.01
    assert abs(np.mean(u < 0.3) - 0.3) < 0.01


probs = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(probs, probs, probs), min_size=1, max_size=10), st.floats(0.01, 1.0))
def test_pmf_sums_to_one(rows, delta):
    base3 = np.array(rows) + 1e-3
    base3 /= base3.sum(axis=1, keepdims=True)
    n = base3.shape[0]
    h3 = hist(n, t=2, L=np.zeros((n, 2, 1)), A=np.zeros((n, 1, 1)))
    base2 = base3[:, :2] / base3[:, :2].sum(axis=1, keepdims=True)
    cases = [
        (Identity(), base3, (0, 1, 2)),
        (DelayIntubation(), base3, (0, 1, 2)),
        (IPSIRiskRatio(delta), base2, (0, 1)),
        (GracePeriod(1), base2, (0, 1)),
        (Static(1), base2, (0, 1)),
    ]
    for pol, base, support in cases:
        g = discrete_post_intervention_pmf(pol, base, support, 2, h3)
        assert np.all(g >= 0)
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_ipsi_zero_probability_is_kept(delta, g1):
    g = discrete_post_intervention_pmf(IPSIRiskRatio(delta), [[1.0, 0.0], [1 - g1, g1]], (0, 1), 1,
                                       hist(2))
    assert g[0, 1] == 0.0
    np.testing.assert_allclose(g[1, 1], delta * g1, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(0.1, 5.0),
       st.floats(-10, 10))
def test_shift_images_respect_bounds(a, delta, bound):
    a = np.array(a)
    h = hist(a.size)
    up = AdditiveShift(delta, upper=bound).apply(1, a, h)
    shifted = up != a
    assert np.all(up[shifted] <= bound)
    lo = MultiplicativeShift(min(delta / 6, 0.9), lower=bound).apply(1, a, h)
    scaled = lo != a
    assert np.all(lo[scaled] >= bound)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**63), st.integers(0, 10**6), st.integers(1, 50))
def test_apply_reproducible(seed, unit, t):
    e1 = randomizer(seed, [unit], t)
    e2 = randomizer(seed, [unit], t)
    assert e1.tobytes() == e2.tobytes()
    pol = IPSIRiskRatio(0.5)
    a = np.array([1.0])
    assert pol.apply(t, a, hist(), e1).tobytes() == pol.apply(t, a, hist(), e2).tobytes()
