import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfe import compensation as comp
from robustfe.gmm import GaussianMixture, em_fit, em_refine, posteriors, variance_floor


def _separated(rng, m=3, d=2, n=3000, gap=20.0):
    means = np.zeros((m, d))
    means[:, 0] = gap * np.arange(m)
    gmm = GaussianMixture(np.full(m, 1.0 / m), means, np.ones((m, d)))
    y, labels = gmm.sample(n, rng)
    return gmm, y, labels


def test_identity_stereo_gives_identity_maps(rng):
    gmm, y, _ = _separated(rng)
    model = comp.train_splice(comp.StereoBatch(y, y), gmm)
    np.testing.assert_allclose(model.transforms, np.broadcast_to(np.eye(2), (3, 2, 2)), atol=1e-8)
    np.testing.assert_allclose(model.biases, 0.0, atol=1e-8)


def test_constant_offset_recovered(rng):
    gmm, y, _ = _separated(rng)
    c = np.array([1.5, -2.0])
    model = comp.train_splice(comp.StereoBatch(y + c, y), gmm)
    np.testing.assert_allclose(model.transforms, np.broadcast_to(np.eye(2), (3, 2, 2)), atol=1e-8)
    np.testing.assert_allclose(model.biases, np.broadcast_to(c, (3, 2)), atol=1e-8)


def test_single_mixture_affine_recovery(rng):
    y = rng.normal(size=(2000, 3))
    a = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    b = rng.normal(size=3)
    gmm = em_fit(y, 1, 1)
    model = comp.train_splice(comp.StereoBatch(y @ a.T + b, y), gmm)
    np.testing.assert_allclose(model.transforms[0], a, atol=1e-6)
    np.testing.assert_allclose(model.biases[0], b, atol=1e-6)


def test_splice_matches_weighted_least_squares(rng):
    gmm = GaussianMixture(np.full(2, 0.5), np.array([[0.0, 0.0], [2.0, 1.0]]), np.ones((2, 2)))
    y = gmm.sample(600, rng)[0]
    x = np.tanh(y) + rng.normal(0, 0.1, y.shape)
    model = comp.train_splice(comp.StereoBatch(x, y), gmm)
    post = posteriors(gmm, y)
    yp = np.hstack([np.ones((600, 1)), y])
    for m in range(2):
        sw = np.sqrt(post[:, m])[:, None]
        w, *_ = np.linalg.lstsq(yp * sw, x * sw, rcond=None)
        np.testing.assert_allclose(model.biases[m], w[0], atol=1e-8)
        np.testing.assert_allclose(model.transforms[m], w[1:].T, atol=1e-8)


def test_equal_covariances_give_identity_whitening(rng):
    gmm, y, _ = _separated(rng)
    c = np.array([3.0, 1.0])
    model = comp.train_msplice(comp.StereoBatch(y + c, y), gmm)
    np.testing.assert_allclose(model.transforms, np.broadcast_to(np.eye(2), (3, 2, 2)), atol=1e-8)
    mu_x, mu_y, *_ = comp.moments(comp.stereo_stats(comp.StereoBatch(y + c, y), gmm))
    np.testing.assert_allclose(model.biases, mu_x - mu_y, atol=1e-10)


def test_scalar_case_is_std_ratio(rng):
    y = rng.normal(0, 2.0, (5000, 1))
    x = 0.5 * y + rng.normal(0, 0.3, y.shape)
    gmm = em_fit(y, 1, 1)
    batch = comp.StereoBatch(x, y)
    full = comp.train_msplice(batch, gmm)
    diag = comp.train_msplice_diag(batch, gmm)
    ratio = x.std() / y.std()
    assert full.transforms[0, 0, 0] == pytest.approx(ratio, rel=1e-10)
    assert diag.transforms[0, 0] == pytest.approx(ratio, rel=1e-10)
    np.testing.assert_allclose(comp.enhance(y, full), comp.enhance(y, diag), atol=1e-10)


def test_diag_unit_ratio_when_variances_match(rng):
    gmm, y, _ = _separated(rng)
    model = comp.train_msplice_diag(comp.StereoBatch(y - 4.0, y), gmm)
    np.testing.assert_allclose(model.transforms, 1.0, atol=1e-10)


def test_zero_noisy_variance_is_floored(rng):
    # mixture 0 sees a constant noisy channel, the pooled data does not
    y0 = np.hstack([rng.normal(size=(500, 1)), np.zeros((500, 1))])
    y1 = rng.normal(size=(500, 2)) + 30.0
    y = np.vstack([y0, y1])
    x = rng.normal(size=(1000, 2))
    gmm = GaussianMixture(np.full(2, 0.5), np.array([[0.0, 0.0], [30.0, 30.0]]), np.ones((2, 2)))
    bound = np.sqrt(x.var(axis=0).max() / variance_floor(y).min())
    for trainer in (comp.train_msplice, comp.train_msplice_diag):
        model = trainer(comp.StereoBatch(x, y), gmm)
        assert np.all(np.isfinite(model.transforms))
        assert np.abs(model.transforms).max() <= 1.5 * bound


def test_enhance_single_mixture_is_affine(rng):
    gmm = GaussianMixture(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)))
    c, d = rng.normal(size=(1, 2, 2)), rng.normal(size=(1, 2))
    model = comp.SpliceModel(comp.SpliceKind.MSPLICE, c, d, gmm, d.copy())
    y = rng.normal(size=(10, 2))
    np.testing.assert_allclose(comp.enhance(y, model), y @ c[0].T + d[0], atol=1e-12)
    np.testing.assert_allclose(comp.enhance(y[0], model), c[0] @ y[0] + d[0], atol=1e-12)
    ident = comp.SpliceModel.identity(gmm)
    np.testing.assert_array_equal(comp.enhance(y, ident), y)
    np.testing.assert_array_equal(comp.pseudo_clean(y, ident), y)


def test_enhance_deep_in_basin(rng):
    gmm = GaussianMixture(np.full(2, 0.5), np.array([[0.0], [20.0]]), np.ones((2, 1)))
    c = np.array([[[2.0]], [[0.5]]])
    d = np.array([[1.0], [-3.0]])
    model = comp.SpliceModel(comp.SpliceKind.SPLICE, c, d, gmm, np.zeros((2, 1)))
    y = np.array([21.0])
    assert np.abs(comp.enhance(y, model) - (0.5 * y - 3.0)).max() < 1e-3


def test_mean_mapping_identity_all_kinds(rng):
    gmm, y, _ = _separated(rng)
    x = 0.7 * y + rng.normal(0, 0.4, y.shape) + 1.0
    batch = comp.StereoBatch(x, y)
    mu_x, mu_y, *_ = comp.moments(comp.stereo_stats(batch, gmm))
    for trainer in (comp.train_splice, comp.train_msplice, comp.train_msplice_diag):
        model = trainer(batch, gmm)
        np.testing.assert_allclose(model.apply_transform(mu_y) + model.biases, mu_x, atol=1e-9)


def test_starved_mixture_gets_identity(rng):
    gmm = GaussianMixture(np.full(2, 0.5), np.array([[0.0, 0.0], [1e4, 1e4]]), np.ones((2, 2)))
    y = rng.normal(size=(300, 2))
    with pytest.warns(RuntimeWarning, match="no frames"):
        model = comp.train_splice(comp.StereoBatch(2 * y, y), gmm)
    np.testing.assert_allclose(model.transforms[1], np.eye(2))
    np.testing.assert_allclose(model.transforms[0], 2 * np.eye(2), atol=1e-8)
    with pytest.warns(RuntimeWarning):
        m2 = comp.train_msplice(comp.StereoBatch(2 * y, y), gmm)
    np.testing.assert_allclose(m2.transforms[1], np.eye(2), atol=1e-8)


def test_sym_power_and_non_psd():
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    r = comp.sym_power(a, 0.5)
    np.testing.assert_allclose(r @ r, a, atol=1e-12)
    np.testing.assert_allclose(r, r.T)
    np.testing.assert_allclose(comp.sym_power(a, -0.5) @ a @ comp.sym_power(a, -0.5), np.eye(2), atol=1e-12)
    with pytest.raises(comp.StatisticsError):
        comp.sym_power(np.array([[1.0, 0.0], [0.0, -1.0]]), 0.5)


def test_correspondence_identical_models(rng):
    gmm, y, _ = _separated(rng)
    v = comp.correspondence_matrix(gmm, gmm, comp.StereoBatch(y, y))
    assert v.total == pytest.approx(len(y))
    assert v.diagonal_fraction() > 0.999
    one = comp.correspondence_matrix(gmm, gmm, comp.StereoBatch(y[:1], y[:1] + 0.3))
    assert one.total == pytest.approx(1.0)


def test_hypothetical_clean_gmm_is_diagonal(rng):
    gmm, y, labels = _separated(rng, m=4)
    x = y * 0.5 + rng.normal(0, 0.2, y.shape)
    stats = comp.stereo_stats(comp.StereoBatch(x, y), gmm, full=False)
    mu_x, _, var_x, _, _ = comp.moments(stats)
    clean = GaussianMixture(stats.gamma / stats.gamma.sum(), mu_x, var_x)
    v = comp.correspondence_matrix(clean, gmm, comp.StereoBatch(x, y))
    assert v.diagonal_fraction() > 0.99


def test_nonstereo_degenerate_case(rng):
    gmm, y, _ = _separated(rng, m=3, n=6000)
    converged = em_refine(gmm, y, 50)
    res = comp.train_nonstereo(y, y, noisy_gmm=converged, return_details=True)
    assert res.clean_gmm.n_mixtures == res.noisy_gmm.n_mixtures == 3
    np.testing.assert_allclose(res.clean_gmm.means, res.noisy_gmm.means, atol=1e-3)
    np.testing.assert_allclose(res.model.transforms, 1.0, atol=1e-3)
    np.testing.assert_allclose(res.model.biases, 0.0, atol=1e-2)
    assert res.model.kind == comp.SpliceKind.NONSTEREO


def test_runtime_adapt_changes_only_biases(rng):
    gmm, y, _ = _separated(rng)
    model = comp.train_msplice(comp.StereoBatch(0.5 * y + 1.0, y), gmm)
    adapted = comp.runtime_adapt(model, y + np.array([0.8, -0.4]))
    np.testing.assert_array_equal(adapted.transforms, model.transforms)
    assert not np.array_equal(adapted.biases, model.biases)
    # C mu^(a) + d^(a) = mu_x for every mixture
    np.testing.assert_allclose(adapted.apply_transform(adapted.gmm.means) + adapted.biases, model.clean_means, atol=1e-10)
    kept = comp.runtime_adapt(model, y + 0.8, use_adapted_posteriors=False)
    np.testing.assert_array_equal(kept.gmm.means, model.gmm.means)


def test_runtime_adapt_skips_tiny_sets(rng):
    gmm, y, _ = _separated(rng)
    model = comp.train_splice(comp.StereoBatch(y, y), gmm)
    with pytest.warns(RuntimeWarning, match="skipped"):
        same = comp.runtime_adapt(model, y[:2])
    assert same is model


def test_runtime_adapt_full_covariance_model(rng):
    gmm, y, _ = _separated(rng)
    full = GaussianMixture(gmm.weights, gmm.means, gmm.full_covariances(), "full")
    model = comp.train_msplice(comp.StereoBatch(y + 1.0, y), full)
    adapted = comp.runtime_adapt(model, y + 0.5)
    assert adapted.gmm.covariance_kind == "full"
    np.testing.assert_allclose(adapted.gmm.means, gmm.means + 0.5, atol=0.1)


def test_model_roundtrip(tmp_path, rng):
    gmm, y, _ = _separated(rng)
    for trainer in (comp.train_splice, comp.train_msplice_diag):
        model = trainer(comp.StereoBatch(0.9 * y, y), gmm)
        model.save(tmp_path / "m.rfts")
        back = comp.SpliceModel.load(tmp_path / "m.rfts")
        assert back.kind == model.kind and back.diagonal == model.diagonal
        np.testing.assert_allclose(comp.enhance(y[:50], back), comp.enhance(y[:50], model), rtol=1e-5, atol=1e-4)


def test_stereo_batch_shape_check():
    with pytest.raises(ValueError):
        comp.StereoBatch(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        comp.StereoBatch.concat([])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16))
def test_splice_routes_agree_on_random_data(seed):
    rng = np.random.default_rng(seed)
    gmm = GaussianMixture(np.full(3, 1 / 3), rng.normal(0, 3, (3, 2)), rng.uniform(0.5, 2, (3, 2)))
    y = gmm.sample(400, rng)[0]
    x = np.sin(y) + 0.5 * y
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = comp.stereo_stats(comp.StereoBatch(x, y), gmm)
        a1, b1 = comp.splice_joint_solution(stats)
        a2, b2 = comp.splice_mmse_solution(stats)
    scale = 1.0 + np.abs(a1).max() + np.abs(b1).max()
    assert np.abs(a1 - a2).max() < 1e-8 * scale
    assert np.abs(b1 - b2).max() < 1e-8 * scale
