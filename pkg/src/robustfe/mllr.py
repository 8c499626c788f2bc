"""Global MLLR mean transform for diagonal-covariance mixtures.

Adapted means are mu~_m = T [1; mu_m] with T of shape D x (D+1).  With
diagonal covariances the EM auxiliary function separates over output
dimensions, so each row of T is a weighted least-squares solve:

    G_d = sum_m gamma_m / var_{m,d} xi_m xi_m^T
    k_d = sum_m o_{m,d} / var_{m,d} xi_m          (o_m = sum_n p(m|y_n) y_n)
    row_d = G_d^-1 k_d
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import formats
from .gmm import GaussianMixture, LOG_2PI, posteriors

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class MllrTransform:
    matrix: np.ndarray  # D x (D+1); column 0 is the bias

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != mat.shape[0] + 1:
            raise ValueError(f"MLLR transform must be D x (D+1), got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("MLLR transform has non-finite entries")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls, d: int) -> "MllrTransform":
        return cls(np.hstack([np.zeros((d, 1)), np.eye(d)]))

    @property
    def bias(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, 1:]

    def apply(self, means: np.ndarray) -> np.ndarray:
        means = np.atleast_2d(means)
        return means @ self.linear.T + self.bias

    def save(self, path):
        formats._write(path, formats.transform_to_bytes(self.matrix))

    @classmethod
    def load(cls, path) -> "MllrTransform":
        return cls(formats.read_transform_raw(path))


def extended_means(means: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((means.shape[0], 1)), means])


def _check_diag(gmm: GaussianMixture):
    if gmm.covariance_kind != "diag":
        raise ValueError("global MLLR is defined here for diagonal-covariance mixtures")


def mllr_accumulators(gmm: GaussianMixture, data, post=None):
    """(G, K): G (D, D+1, D+1) and K (D, D+1), additive over data chunks."""
    _check_diag(gmm)
    data = np.asarray(data, dtype=np.float64)
    post = posteriors(gmm, data) if post is None else np.asarray(post, dtype=np.float64)
    gamma = post.sum(axis=0)
    first = post.T @ data  # (M, D)
    xi = extended_means(gmm.means)
    inv_var = 1.0 / gmm.covariances  # (M, D)
    g = np.einsum("md,mi,mj->dij", gamma[:, None] * inv_var, xi, xi)
    k = np.einsum("md,mi->di", first * inv_var, xi)
    return g, k


def solve_rows(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-wise solve; ill-conditioned rows get a ridge that pulls the linear part toward identity.

    The ridge (1e-8 trace(G_d)) acts on the linear block only, leaving the
    bias free, so an under-determined problem resolves to the pure
    translation rather than the minimum-norm transform.
    """
    d = g.shape[0]
    rows = np.empty((d, d + 1))
    for i in range(d):
        gi = g[i]
        if np.linalg.cond(gi) > _COND_LIMIT:
            lam = 1e-8 * np.trace(gi)
            warnings.warn(f"MLLR accumulator for dimension {i} is singular; applying ridge {lam:.3g}", RuntimeWarning, stacklevel=3)
            penalty = np.eye(d + 1) * lam
            penalty[0, 0] = 0.0
            target = np.zeros(d + 1)
            target[i + 1] = lam
            rows[i] = np.linalg.solve(gi + penalty, k[i] + target)
        else:
            rows[i] = np.linalg.solve(gi, k[i])
    return rows


def estimate_global_mllr(gmm: GaussianMixture, data, post=None) -> MllrTransform:
    """One-pass global mean transform; posteriors come from the unadapted model unless given."""
    g, k = mllr_accumulators(gmm, data, post)
    return MllrTransform(solve_rows(g, k))


def apply_mllr(gmm: GaussianMixture, t: MllrTransform) -> GaussianMixture:
    """Replace means by T [1; mu]; weights, covariances and order are untouched."""
    if t.matrix.shape[0] != gmm.dim:
        raise ValueError(f"{t.matrix.shape[0]}-dim transform for {gmm.dim}-dim mixture")
    return replace(gmm, means=t.apply(gmm.means))


def auxiliary(gmm: GaussianMixture, data, t: MllrTransform, post=None) -> float:
    """EM auxiliary sum_n sum_m p(m|y_n) log N(y_n; T xi_m, Sigma_m), posteriors from gmm."""
    _check_diag(gmm)
    data = np.asarray(data, dtype=np.float64)
    post = posteriors(gmm, data) if post is None else post
    means = t.apply(gmm.means)
    total = 0.0
    for m in range(gmm.n_mixtures):
        var = gmm.covariances[m]
        diff = data - means[m]
        logn = -0.5 * (gmm.dim * LOG_2PI + np.sum(np.log(var)) + np.sum(diff * diff / var, axis=1))
        total += float(post[:, m] @ logn)
    return total
