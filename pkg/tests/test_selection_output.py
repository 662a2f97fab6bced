import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prvfln import _kernels as K
from prvfln import _rows
from prvfln.chebyshev import expand
from prvfln.output import OutputNode, combine, fwgrls_update, new_node
from prvfln.selection import (ErrorTrend, FeatureMask, feature_score, gofs_full_step, gofs_partial_step,
                              gradient, inclusion_probabilities, observe_partial, project_weights,
                              rescaled_expansion)


def bank_of(weights, psi_scale=1e5):
    weights = np.asarray(weights, dtype=float)
    return _rows.stack([new_node(weights.shape[1], weights.shape[2], w, psi_scale) for w in weights])


# -- feature scores and masks ------------------------------------------------

def test_zero_weights_score_zero():
    assert feature_score(np.zeros((2, 7, 1)), 3).tolist() == [0.0, 0.0, 0.0]


def test_score_single_feature_example():
    w = np.zeros((1, 5, 1))
    w[0, 1, 0], w[0, 2, 0] = 0.5, -0.25
    assert feature_score(w, 2).tolist() == [0.75, 0.0]


def test_score_matches_double_sum(rng):
    w = rng.normal(size=(3, 9, 2))
    oracle = [sum(abs(w[i, 2 * j + 1, o]) + abs(w[i, 2 * j + 2, o]) for i in range(3) for o in range(2))
              for j in range(4)]
    np.testing.assert_allclose(feature_score(w, 4), oracle, rtol=1e-12)


def test_full_mask_and_budget_validation():
    mask = FeatureMask.full(4, budget=2)
    assert mask.bits() == "1111" and mask.budget == 2
    with pytest.raises(ValueError):
        FeatureMask.full(4, budget=5)


def test_error_trend_growth_test():
    trend = ErrorTrend()
    trend.update(1.0)
    assert not trend.growing()
    trend.update(1.0)
    assert not trend.growing()
    trend.update(10.0)
    assert trend.growing()
    for _ in range(30):
        trend.update(0.01)
    assert not trend.growing()


# -- gradient, decay, projection -------------------------------------------

def _loss(weights, x_e, target, norm):
    return 0.5 * np.sum((target - combine(norm, x_e, weights)) ** 2)


def test_gradient_matches_central_differences(rng):
    for _ in range(5):
        nodes = bank_of(rng.normal(size=(3, 7, 2)))
        x_e = expand(rng.normal(size=3))
        target = rng.normal(size=2)
        norm = rng.dirichlet(np.ones(3), size=2)
        grad = gradient(nodes, x_e, target, norm)
        numeric = np.zeros_like(grad)
        h = 1e-6
        for idx in np.ndindex(grad.shape):
            w = nodes.weights.copy()
            w[idx] += h
            up = _loss(w, x_e, target, norm)
            w[idx] -= 2 * h
            numeric[idx] = (up - _loss(w, x_e, target, norm)) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


def test_projection_radius_is_ten_for_default_chi(rng):
    nodes = bank_of(100 * rng.normal(size=(2, 5, 1)))
    project_weights(nodes, 0.01)
    np.testing.assert_allclose(np.linalg.norm(nodes.weights.reshape(2, -1), axis=1), 10.0)


@given(st.integers(1, 4), st.integers(1, 4), st.floats(1e-3, 1.0), st.floats(0.01, 1e4),
       st.integers(0, 2 ** 16))
def test_projected_norms_are_bounded(r, n, chi, scale, seed):
    nodes = bank_of(scale * np.random.default_rng(seed).normal(size=(r, 2 * n + 1, 2)))
    small = np.linalg.norm(nodes.weights.reshape(r, -1), axis=1) <= 1 / np.sqrt(chi)
    before = nodes.weights.copy()
    project_weights(nodes, chi)
    norms = np.linalg.norm(nodes.weights.reshape(r, -1), axis=1)
    assert np.all(norms <= 1 / np.sqrt(chi) + 1e-12)
    assert np.array_equal(nodes.weights[small], before[small])


def test_quiet_step_only_decays(rng):
    nodes = bank_of(rng.normal(size=(2, 7, 1)))
    before = nodes.weights.copy()
    mask = FeatureMask.full(3, budget=1)
    gofs_full_step(nodes, rng.normal(size=3), [0.0], np.full((1, 2), 0.5), mask, fired=False)
    np.testing.assert_allclose(nodes.weights, (1 - 0.2 * 0.01) * before)
    assert mask.bits() == "111" and not mask.triggered


def test_quiet_step_without_decay_changes_nothing(rng):
    nodes = bank_of(rng.normal(size=(2, 7, 1)))
    before = nodes.weights.copy()
    gofs_full_step(nodes, rng.normal(size=3), [0.0], np.full((1, 2), 0.5), FeatureMask.full(3, 1),
                   fired=False, decay=False)
    assert np.array_equal(nodes.weights, before)


@given(st.integers(2, 8), st.integers(0, 2 ** 16))
def test_triggered_step_keeps_exactly_budget_features(n, seed):
    r = np.random.default_rng(seed)
    budget = int(r.integers(1, n + 1))
    nodes = bank_of(r.normal(size=(2, 2 * n + 1, 1)))
    mask = FeatureMask.full(n, budget)
    gofs_full_step(nodes, r.normal(size=n), r.normal(size=1), r.dirichlet(np.ones(2))[None], mask, True)
    assert mask.active.sum() == budget and mask.triggered
    xs = r.normal(size=n)
    x_e = K.expand_masked(xs, mask.active)
    off = np.flatnonzero(~mask.active)
    assert x_e[0] == 1.0
    assert np.all(x_e[2 * off + 1] == 0) and np.all(x_e[2 * off + 2] == 0)
    on = np.flatnonzero(mask.active)
    np.testing.assert_array_equal(x_e[2 * on + 1], xs[on])


# -- partial observation ----------------------------------------------------

def test_full_exploration_with_full_budget_is_full_mode(rng):
    x = rng.normal(size=5)
    observed, prob = observe_partial(rng, np.zeros(5), 5, 1.0)
    assert observed.all() and np.all(prob == 1.0)
    np.testing.assert_array_equal(rescaled_expansion(x, observed, prob), expand(x))


def test_full_exploration_with_small_budget_has_flat_probability(rng):
    for _ in range(20):
        observed, prob = observe_partial(rng, rng.uniform(size=6), 2, 1.0)
        assert observed.sum() == 2
        np.testing.assert_allclose(prob, 2 / 6)


def test_inclusion_probability_formula():
    prob, greedy = inclusion_probabilities(np.array([3.0, 1.0, 2.0, 0.0]), 2, 0.2)
    assert greedy.tolist() == [True, False, True, False]
    np.testing.assert_allclose(prob, [0.1 + 0.8, 0.1, 0.1 + 0.8, 0.1])


def test_rescaled_expansion_divides_observed_slots(rng):
    x = rng.normal(size=3)
    observed = np.array([True, False, True])
    prob = np.array([0.5, 0.2, 0.25])
    out = rescaled_expansion(x, observed, prob)
    base = expand(x)
    np.testing.assert_allclose(out[[1, 2]], base[[1, 2]] / 0.5)
    np.testing.assert_allclose(out[[5, 6]], base[[5, 6]] / 0.25)
    assert out[3] == 0 and out[4] == 0 and out[0] == 1


@pytest.mark.parametrize("epsilon", [0.0, -0.1, 1.5])
def test_epsilon_outside_unit_interval_is_rejected(rng, epsilon):
    with pytest.raises(ValueError):
        observe_partial(rng, np.zeros(3), 1, epsilon)


def test_partial_step_without_trigger_carries_weights_over(rng):
    nodes = bank_of(rng.normal(size=(2, 7, 1)))
    before = nodes.weights.copy()
    observed = np.array([True, False, True])
    gofs_partial_step(nodes, rng.normal(size=3), [0.0], np.full((1, 2), 0.5), FeatureMask.full(3, 2),
                      False, observed, np.full(3, 0.5))
    assert np.array_equal(nodes.weights, before)


# -- output learning ---------------------------------------------------------

def _textbook_rls(P, w, x, t):
    k = P @ x / (1.0 + x @ P @ x)
    P = P - np.outer(k, x @ P)
    w = w + k * (t - x @ w)
    return P, w


@pytest.mark.parametrize("update", ["reference", "kernel"])
def test_unit_firing_without_decay_is_textbook_rls(rng, update):
    d = 5
    node = _rows.stack([new_node(d, 1)])
    P, w = 1e5 * np.eye(d), np.zeros(d)
    for _ in range(200):
        x, t = rng.normal(size=d), rng.normal()
        if update == "reference":
            fwgrls_update(node, x, [t], [1.0], decay_rate=0.0)
        else:
            K.fwgrls(node.psi, node.weights, x, np.array([t]), np.ones(1), np.ones(1), 0.5, 0.0)
        P, w = _textbook_rls(P, w, x, t)
        np.testing.assert_allclose(node.weights[0, :, 0], w, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(node.psi[0], P, rtol=1e-9, atol=1e-9 * np.abs(P).max())


def test_stationary_stream_reaches_batch_least_squares(rng):
    d = 7
    true = rng.normal(size=d)
    X = rng.normal(size=(500, d))
    T = X @ true + 0.1 * rng.normal(size=500)
    node = new_node(d, 1)
    for x, t in zip(X, T):
        fwgrls_update(node, x, [t], 1.0, decay_rate=0.0)
    batch = np.linalg.lstsq(X, T, rcond=None)[0]
    np.testing.assert_allclose(node.weights[:, 0], batch, atol=1e-3)


def test_repeated_sample_reaches_fixed_point(rng):
    x = expand(rng.normal(size=3))
    node = new_node(len(x), 1)
    s = 1e5 * x @ x
    for k in range(1, 51):
        fwgrls_update(node, x, [2.5], 1.0, decay_rate=0.0)
        # k identical updates leave the prediction at t * k s / (1 + k s)
        assert x @ node.weights[:, 0] == pytest.approx(2.5 * k * s / (1 + k * s), rel=1e-10)
    assert x @ node.weights[:, 0] == pytest.approx(2.5, rel=1e-6)


def test_decay_on_zero_error_stream_shrinks_weights(rng):
    d = 5
    node = new_node(d, 1, weights=rng.normal(size=(d, 1)))
    norm = np.linalg.norm(node.weights)
    for _ in range(100):
        x = rng.normal(size=d)
        fwgrls_update(node, x, x @ node.weights, 1.0, decay_rate=1e-5)
        now = np.linalg.norm(node.weights)
        assert now < norm
        norm = now


def test_non_finite_update_is_skipped_and_counted(rng):
    node = _rows.stack([new_node(3, 1), new_node(3, 1)])
    before = _rows.copy(node)
    faults = fwgrls_update(node, np.array([1.0, np.inf, 0.0]), [1.0], [1.0, 1.0])
    assert faults == 2 and _rows.equal(node, before)
    assert K.fwgrls(node.psi, node.weights, np.array([1.0, 0.0, 0.0]), np.array([np.nan]),
                    np.ones(2), np.ones(2), 0.5, 1e-5) == 2
    assert _rows.equal(node, before)


@given(st.integers(1, 6), st.floats(1e-3, 1.0), st.floats(0.0, 1e-3), st.integers(0, 2 ** 16))
def test_covariance_stays_symmetric_and_semidefinite(d, firing, decay, seed):
    r = np.random.default_rng(seed)
    node = _rows.stack([new_node(d, 2)])
    for _ in range(30):
        x = r.normal(size=d) * r.uniform(0.1, 10)
        K.fwgrls(node.psi, node.weights, x, r.normal(size=2), np.array([firing]), np.array([firing]), 0.5,
                 decay)
        P = node.psi[0]
        assert np.array_equal(P, P.T)
        probe = r.normal(size=d)
        assert probe @ P @ probe >= -1e-9 * np.abs(P).max()


def test_kernel_matches_reference_update_on_a_bank(rng):
    R, d, m = 3, 9, 2
    weights = rng.normal(size=(R, d, m))
    ref = bank_of(weights)
    ker = bank_of(weights)
    fire_lo, fire_hi, q_mean = rng.uniform(0.1, 1, R), rng.uniform(0.1, 1, R), 0.4
    for _ in range(50):
        x_e, t = expand(rng.normal(size=4)), rng.normal(size=m)
        f = (1 - q_mean) * fire_hi + q_mean * fire_lo
        fwgrls_update(ref, x_e, t, f / f.sum(), decay_rate=1e-4)
        K.fwgrls(ker.psi, ker.weights, x_e, t, fire_lo, fire_hi, q_mean, 1e-4)
    np.testing.assert_allclose(ker.weights, ref.weights, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(ker.psi, ref.psi, rtol=1e-7, atol=1e-9 * np.abs(ref.psi).max())


# -- prediction --------------------------------------------------------------

def _forward(xs, clouds, q, weights, mem=None):
    a, mean_lo, mean_hi, sqlen_lo, sqlen_hi, lam = clouds
    mem = np.zeros(len(a)) if mem is None else mem
    return K.forward(xs, np.ones(len(xs), dtype=bool), a, np.zeros_like(a), mean_lo, mean_hi, sqlen_lo,
                     sqlen_hi, lam, mem, mem, q, weights)


def test_single_cloud_output_ignores_firing(rng):
    xs = rng.normal(size=3)
    w = rng.normal(size=(1, 7, 2))
    clouds = (rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), np.array([5.0]),
              np.array([6.0]), np.array([0.3]))
    y = _forward(xs, clouds, rng.uniform(size=2), w)[0]
    np.testing.assert_allclose(y, expand(xs) @ w[0])


def test_zero_design_factor_uses_upper_firing_only(rng):
    xs = rng.normal(size=2)
    w = rng.normal(size=(2, 5, 1))
    a = np.ones((2, 2))
    mean_hi = rng.normal(size=(2, 2))
    clouds = (a, rng.normal(size=(2, 2)), mean_hi, rng.uniform(3, 4, 2), np.einsum("ij,ij->i", mean_hi, mean_hi),
              np.ones(2))
    y, *_ = _forward(xs, clouds, np.zeros(1), w)
    hi = 1 / (1 + ((xs - mean_hi) ** 2).sum(1))
    np.testing.assert_allclose(y, [(hi / hi.sum()) @ (expand(xs) @ w[:, :, 0].T)], rtol=1e-12)


def test_hand_traced_two_cloud_model():
    xs = np.array([0.5, -1.0])
    a = np.array([[1.0, 2.0], [0.5, 1.0]])
    mean_lo = np.array([[0.4, -2.1], [0.2, -0.9]])
    mean_hi = np.array([[0.6, -1.9], [0.3, -0.8]])
    sqlen_lo = np.array([4.5, 0.9])
    sqlen_hi = np.array([4.0, 0.95])
    lam = np.array([0.5, 1.0])
    mem = np.array([0.2, 0.7])
    q = np.array([0.25])
    w = np.zeros((2, 5, 1))
    w[0, :, 0] = [1.0, 2.0, 0.0, 0.0, 1.0]
    w[1, :, 0] = [-1.0, 0.0, 1.0, 3.0, 0.0]
    # z1 = [0.5, -2], z2 = [0.25, -1]; x_e = [1, 0.5, -0.5, -1, 1]
    # cloud 1 lo: |z-mu|^2 = 0.01 + 0.01, spread = 4.5 - (0.16 + 4.41) < 0 -> 0
    lo1 = 1 / (1 + 0.02)
    hi1 = 1 / (1 + 0.01 + 0.01 + max(4.0 - (0.36 + 3.61), 0.0))
    lo2 = 1 / (1 + 0.0025 + 0.01 + max(0.9 - (0.04 + 0.81), 0.0))
    hi2 = 1 / (1 + 0.0025 + 0.04 + max(0.95 - (0.09 + 0.64), 0.0))
    t_lo = np.array([0.5 * lo1 + 0.5 * 0.2, lo2])
    t_hi = np.array([0.5 * hi1 + 0.5 * 0.2, hi2])
    g = 0.75 * t_hi + 0.25 * t_lo
    g = g / g.sum()
    local = np.array([1.0 + 1.0 + 1.0, -1.0 - 0.5 - 3.0])
    y, lo_s, hi_s, lo_t, hi_t, norm, x_e = _forward(
        xs, (a, mean_lo, mean_hi, sqlen_lo, sqlen_hi, lam), q, w, mem)
    np.testing.assert_allclose(x_e, [1.0, 0.5, -0.5, -1.0, 1.0])
    np.testing.assert_allclose(lo_s, [lo1, lo2], rtol=1e-12)
    np.testing.assert_allclose(hi_s, [hi1, hi2], rtol=1e-12)
    np.testing.assert_allclose(lo_t, t_lo, rtol=1e-12)
    np.testing.assert_allclose(y, [g @ local], rtol=1e-12)


def test_combine_matches_kernel_output(rng):
    w = rng.normal(size=(3, 7, 2))
    norm = rng.dirichlet(np.ones(3), size=2)
    x_e = expand(rng.normal(size=3))
    oracle = [sum(norm[o, i] * x_e @ w[i, :, o] for i in range(3)) for o in range(2)]
    np.testing.assert_allclose(combine(norm, x_e, w), oracle, rtol=1e-12)


def test_output_node_length():
    assert len(OutputNode(np.zeros((7, 1)), np.eye(7))) == 7
