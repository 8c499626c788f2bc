import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfe import mllr
from robustfe.gmm import GaussianMixture, log_likelihood, posteriors
from robustfe.mllr import MllrTransform


def _gmm(rng, m=4, d=2):
    return GaussianMixture(np.full(m, 1.0 / m), rng.normal(0, 3, (m, d)), rng.uniform(0.5, 2.0, (m, d)))


def test_identity_at_own_means(rng):
    g = _gmm(rng, 5, 3)
    t = mllr.estimate_global_mllr(g, g.means, post=np.eye(5))
    np.testing.assert_allclose(t.matrix, MllrTransform.identity(3).matrix, atol=1e-6)


def test_apply_identity_and_translation(rng):
    g = _gmm(rng)
    same = mllr.apply_mllr(g, MllrTransform.identity(2))
    np.testing.assert_array_equal(same.means, g.means)
    shift = np.array([1.5, -0.5])
    moved = mllr.apply_mllr(g, MllrTransform(np.hstack([shift[:, None], np.eye(2)])))
    np.testing.assert_allclose(moved.means, g.means + shift)
    np.testing.assert_array_equal(moved.weights, g.weights)
    np.testing.assert_array_equal(moved.covariances, g.covariances)


def test_apply_matches_direct_product(rng):
    g = _gmm(rng, 6, 3)
    t = MllrTransform(rng.normal(size=(3, 4)))
    got = mllr.apply_mllr(g, t).means
    for m in range(6):
        xi = np.concatenate([[1.0], g.means[m]])
        expect = [sum(t.matrix[i, j] * xi[j] for j in range(4)) for i in range(3)]
        np.testing.assert_allclose(got[m], expect, rtol=0, atol=1e-12)


def test_closed_form_beats_identity_and_raises_likelihood(rng):
    g = _gmm(rng)
    data = g.sample(3000, rng)[0] * 1.2 + np.array([0.5, -1.0])
    post = posteriors(g, data)
    t = mllr.estimate_global_mllr(g, data, post)
    assert mllr.auxiliary(g, data, t, post) >= mllr.auxiliary(g, data, MllrTransform.identity(2), post)
    assert log_likelihood(mllr.apply_mllr(g, t), data) >= log_likelihood(g, data) - 1e-6


def test_invariant_to_duplicating_data(rng):
    g = _gmm(rng)
    data = g.sample(500, rng)[0] + 0.3
    a = mllr.estimate_global_mllr(g, data)
    b = mllr.estimate_global_mllr(g, np.vstack([data, data]))
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-10)


def test_row_solution_against_weighted_least_squares(rng):
    g = _gmm(rng, 5, 2)
    data = g.sample(800, rng)[0] @ np.array([[1.1, 0.3], [0.0, 0.9]]).T
    post = posteriors(g, data)
    t = mllr.estimate_global_mllr(g, data, post)
    xi = np.hstack([np.ones((5, 1)), g.means])
    for d in range(2):
        # normal equations of sum_n sum_m p (y_nd - w.xi_m)^2 / var_md
        wts = post / g.covariances[:, d]
        lhs = (xi * wts.sum(axis=0)[:, None]).T @ xi
        rhs = xi.T @ (wts.T @ data[:, d])
        np.testing.assert_allclose(t.matrix[d], np.linalg.solve(lhs, rhs), rtol=1e-10)


def test_full_covariance_rejected(rng):
    g = GaussianMixture(np.ones(1), np.zeros((1, 2)), np.eye(2)[None], "full")
    with pytest.raises(ValueError):
        mllr.estimate_global_mllr(g, np.zeros((5, 2)))


def test_transform_validation_and_roundtrip(tmp_path, rng):
    with pytest.raises(ValueError):
        MllrTransform(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        MllrTransform(np.full((1, 2), np.inf))
    t = MllrTransform(rng.normal(size=(3, 4)))
    t.save(tmp_path / "t.rftm")
    np.testing.assert_allclose(MllrTransform.load(tmp_path / "t.rftm").matrix, t.matrix, rtol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16), st.floats(0.5, 2.0), st.floats(-3, 3))
def test_adapted_likelihood_never_drops(seed, scale, offset):
    rng = np.random.default_rng(seed)
    g = _gmm(rng, 3, 2)
    data = g.sample(400, rng)[0] * scale + offset
    t = mllr.estimate_global_mllr(g, data)
    assert log_likelihood(mllr.apply_mllr(g, t), data) >= log_likelihood(g, data) - 1e-6
