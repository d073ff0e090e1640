import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats as sps

from pgg.design_space import sobol_design
from pgg.stats import (
    EffectEstimate,
    InfiniteWeightError,
    SeUndefinedError,
    SingularDesignError,
    UndefinedTestError,
    bootstrap_rmse_ci,
    chi_square_sf,
    cluster_features,
    cochran_q,
    diff_means_effect,
    frt_max_p,
    gammaincc,
    heterogeneity_report,
    i_squared,
    kmeans,
    ks_two_sample,
    ols_fit,
)
from pgg.stats.ks import Z_999

# scipy's asymptotic K-S p-value divides by zero on tiny samples; only its statistic is used
pytestmark = pytest.mark.filterwarnings("ignore:divide by zero:RuntimeWarning")


def est(t, se, label=""):
    return EffectEstimate(t, se, 10, 10, label)


# ---- effect estimates and meta-analysis ----------------------------------------


def test_diff_means_examples():
    assert diff_means_effect([1, 2, 3], [1, 2, 3]).T == 0
    e = diff_means_effect([1, 1], [0, 0])
    assert (e.T, e.se, e.degenerate) == (1, 0, True)
    e = diff_means_effect([0.8, 0.6], [0.5, 0.3])
    assert e.T == pytest.approx(0.3)
    assert e.se == pytest.approx(math.sqrt(0.02 / 2 + 0.02 / 2))
    with pytest.raises(SeUndefinedError):
        diff_means_effect([1], [0, 1])


def test_cochran_q_examples():
    assert cochran_q([est(0.2, 0.1), est(0.2, 0.3)]).Q == 0
    assert cochran_q([est(0.2, 0.1), est(0.2, 0.3)]).p == 1
    cq = cochran_q([est(0, 1), est(1, 1)])
    assert (cq.mean, cq.Q, cq.df) == (0.5, 0.5, 1)
    with pytest.raises(InfiniteWeightError):
        cochran_q([est(0, 0), est(1, 1)])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(0.01, 1)), min_size=2, max_size=12), st.randoms())
def test_q_invariant_to_order_and_nonnegative(pairs, rnd):
    ests = [est(t, s) for t, s in pairs]
    q = cochran_q(ests).Q
    shuffled = ests[:]
    rnd.shuffle(shuffled)
    assert cochran_q(shuffled).Q == pytest.approx(q, rel=1e-9, abs=1e-12)
    assert q >= 0
    r = heterogeneity_report(ests)
    assert 0 <= r.i_squared < 1 and 0 <= r.p_q <= 1


def test_i_squared_examples():
    assert i_squared(10, 20) == 0
    assert i_squared(0, 5) == 0
    assert i_squared(29.01, 20) == pytest.approx(0.345, abs=5e-4)
    assert i_squared(30.29, 20) == pytest.approx(0.373, abs=5e-4)


# ---- chi-square tail -----------------------------------------------------------------


@pytest.mark.parametrize("x", [0.0, 1e-6, 0.3, 1.0, 3.84, 10.0, 40.0, 120.0])
def test_chi_square_closed_forms(x):
    assert abs(chi_square_sf(x, 1) - math.erfc(math.sqrt(x / 2))) <= 1e-10
    assert abs(chi_square_sf(x, 2) - math.exp(-x / 2)) <= 1e-10


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 300), st.integers(1, 200))
def test_chi_square_matches_reference(x, df):
    assert abs(chi_square_sf(x, df) - sps.chi2.sf(x, df)) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 100), st.floats(0, 200))
def test_gammaincc_matches_reference(a, x):
    assert abs(gammaincc(a, x) - special.gammaincc(a, x)) <= 1e-8


def test_chi_square_decreasing_and_reported_values():
    xs = np.linspace(0, 80, 400)
    vals = [chi_square_sf(x, 19) for x in xs]
    assert vals[0] == 1.0
    assert all(b < a for a, b in zip(vals, vals[1:]) if a > 1e-300)
    assert chi_square_sf(29.01, 19) == pytest.approx(0.066, abs=0.002)
    assert chi_square_sf(30.29, 19) == pytest.approx(0.048, abs=0.002)
    assert chi_square_sf(59.34, 39) == pytest.approx(0.019, abs=0.002)


# ---- Kolmogorov-Smirnov ----------------------------------------------------------------


def test_ks_examples():
    assert ks_two_sample([1, 2, 2, 5], [5, 2, 1, 2]) == 0
    assert ks_two_sample([0, 1], [2, 3]) == 1
    assert ks_two_sample([1, 2, 3], [1.5, 2.5, 3.5]) == pytest.approx(1 / 3)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=30),
    st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=30),
)
def test_ks_matches_reference_with_ties(a, b):
    d = ks_two_sample(a, b)
    assert d == pytest.approx(sps.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)
    assert d == ks_two_sample(b, a)
    assert 0 <= d <= 1


# ---- randomization test -------------------------------------------------------------------


def frt_oracle(control, treatment, grid_size, permutations, seed):
    """Direct transcription of the procedure with scipy's K-S; no early exits."""
    yc, yt = np.asarray(control, float), np.asarray(treatment, float)
    tau_hat = yt.mean() - yc.mean()
    se = math.sqrt(yt.var(ddof=1) / yt.size + yc.var(ddof=1) / yc.size)
    y = np.concatenate([yt, yc])
    z = np.concatenate([np.ones(yt.size, int), np.zeros(yc.size, int)])
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(z) for _ in range(permutations)]

    def shifted(yv, zv):
        t, c = yv[zv == 1], yv[zv == 0]
        return sps.ks_2samp(t - (t.mean() - c.mean()), c, method="asymp").statistic

    d_obs = shifted(y, z)
    best = 0.0
    for tau in np.linspace(tau_hat - Z_999 * se, tau_hat + Z_999 * se, grid_size):
        y0 = y - tau * z
        count = 0
        for zp in perms:
            yp = y0 + tau * zp
            if shifted(yp, zp) >= d_obs - 1e-12:
                count += 1
        best = max(best, count / permutations)
    return best


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_frt_matches_direct_oracle(seed):
    rng = np.random.default_rng(seed)
    control = rng.normal(0, 1, 9)
    treatment = rng.normal(0.4, 1.5, 8)
    ours = frt_max_p(control, treatment, grid_size=7, permutations=60, seed=seed)
    assert ours.max_p == frt_oracle(control, treatment, 7, 60, seed)


def test_frt_exact_shift_gives_one():
    rng = np.random.default_rng(4)
    control = rng.normal(size=40)
    res = frt_max_p(control, control + 0.7, grid_size=31, permutations=200, seed=1)
    assert res.observed_statistic == 0
    assert res.max_p == 1.0


def test_frt_deterministic_and_in_range():
    rng = np.random.default_rng(5)
    c, t = rng.normal(size=30), rng.normal(size=30)
    a = frt_max_p(c, t, grid_size=20, permutations=100, seed=9)
    b = frt_max_p(c, t, grid_size=20, permutations=100, seed=9)
    assert a.max_p == b.max_p and np.array_equal(a.pvalues, b.pvalues)
    assert np.all((a.pvalues >= 0) & (a.pvalues <= 1))
    assert a.taus.size == 20
    assert a.taus[0] == pytest.approx(a.tau_hat - Z_999 * a.se)


def test_frt_errors():
    with pytest.raises(UndefinedTestError):
        frt_max_p([1.0], [1.0, 2.0])
    with pytest.raises(UndefinedTestError):
        frt_max_p([1.0, 1.0], [2.0, 2.0])


def test_frt_detects_two_effect_mixture():
    rng = np.random.default_rng(8)
    c = rng.normal(0, 0.05, 200)
    t = c + np.where(np.arange(200) % 2 == 0, 0.5, -0.5)
    assert frt_max_p(c, t, seed=3).max_p < 0.01


# ---- k-means -------------------------------------------------------------------------------


def test_kmeans_k_equals_n():
    pts = np.random.default_rng(0).random((12, 3))
    res = kmeans(pts, 12, seed=1)
    assert res.inertia == 0 and len(set(res.labels.tolist())) == 12


def test_kmeans_k_one_is_mean():
    pts = np.random.default_rng(1).random((30, 4))
    res = kmeans(pts, 1, seed=0)
    assert np.allclose(res.centroids[0], pts.mean(axis=0))


def test_kmeans_errors_and_determinism():
    pts = np.random.default_rng(2).random((10, 2))
    with pytest.raises(ValueError):
        kmeans(pts, 11)
    a, b = kmeans(pts, 3, seed=4), kmeans(pts, 3, seed=4)
    assert np.array_equal(a.labels, b.labels)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_kmeans_inertia_non_increasing(seed, k):
    pts = np.random.default_rng(seed).random((40, 3))
    res = kmeans(pts, k, seed=seed)
    h = res.inertia_history
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    assert len(set(res.labels.tolist())) == k


def test_kmeans_matches_reference_on_separated_blobs():
    from sklearn.cluster import KMeans

    rng = np.random.default_rng(3)
    centres = np.array([[0, 0], [10, 0], [0, 10], [10, 10]])
    pts = np.vstack([c + rng.normal(0, 0.3, (25, 2)) for c in centres])
    ours = kmeans(pts, 4, seed=0)
    ref = KMeans(4, n_init=10, random_state=0).fit(pts)
    assert ours.inertia == pytest.approx(ref.inertia_, rel=1e-9)


def test_cluster_features_scaling_and_twenty_clusters():
    with pytest.warns(UserWarning, match="power of 2"):
        cfgs = sobol_design(150, seed=1)
    X = cluster_features(cfgs)
    assert X.shape == (150, 12)
    assert X.min() >= 0 and X.max() <= 1
    res = kmeans(X, 20, seed=7)
    assert len(set(res.labels.tolist())) == 20


# ---- OLS and bootstrap ---------------------------------------------------------------------


def test_ols_exact_line():
    x = np.arange(10.0)
    res = ols_fit(x, 2 * x)
    assert res.coef == pytest.approx([0, 2], abs=1e-12)
    assert np.allclose(res.residuals, 0)


def test_ols_binary_regressor_is_difference_in_means():
    rng = np.random.default_rng(1)
    d = np.repeat([0.0, 1.0], [30, 20])
    y = rng.normal(size=50) + d
    res = ols_fit(d, y)
    assert res.coef[1] == pytest.approx(y[d == 1].mean() - y[d == 0].mean(), abs=1e-12)
    ref = sps.linregress(d, y)
    assert res.se[1] == pytest.approx(ref.stderr, rel=1e-10)
    assert res.se[0] == pytest.approx(ref.intercept_stderr, rel=1e-10)


def test_ols_singular():
    x = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(SingularDesignError):
        ols_fit(x, np.arange(5.0))
    with pytest.raises(SingularDesignError):
        ols_fit(np.ones((2, 3)), np.ones(2))


def test_bootstrap_examples():
    errs = {"a": np.full(20, 2.0), "b": np.full(20, 2.0)}
    out = bootstrap_rmse_ci(errs, seed=1)
    assert out["rmse_ci"]["a"] == [2.0, 2.0]
    assert out["diff_ci"]["a - b"] == [0.0, 0.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_bootstrap_self_difference_is_zero(seed):
    e = np.random.default_rng(seed).normal(size=20)
    out = bootstrap_rmse_ci({"m": e, "same": e.copy()}, resamples=200, seed=seed, baseline="m")
    assert out["diff_ci"]["m - same"] == [0.0, 0.0]
    lo, hi = out["rmse_ci"]["m"]
    assert 0 <= lo <= hi
    assert out["ratio_to_baseline_ci"]["same"] == [1.0, 1.0]


def test_bootstrap_deterministic():
    rng = np.random.default_rng(2)
    errs = {"a": rng.normal(size=20), "b": rng.normal(size=20)}
    assert bootstrap_rmse_ci(errs, seed=5) == bootstrap_rmse_ci(errs, seed=5)
