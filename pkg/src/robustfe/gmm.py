"""Gaussian mixtures: densities, posteriors, EM and sufficient statistics."""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import formats

LOG_2PI = np.log(2.0 * np.pi)
VAR_FLOOR_FRACTION = 1e-4
EMPTY_MIXTURE = 1e-8


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, D)
    covariances: np.ndarray  # (M, D) diagonal or (M, D, D) full
    covariance_kind: str = "diag"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        cov = np.asarray(self.covariances, dtype=np.float64)
        m, d = mu.shape
        if self.covariance_kind not in ("diag", "full"):
            raise ValueError(f"covariance_kind must be 'diag' or 'full', got {self.covariance_kind!r}")
        if w.shape != (m,):
            raise ValueError(f"{w.size} weights for {m} means")
        want = (m, d) if self.covariance_kind == "diag" else (m, d, d)
        cov = cov.reshape(want)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
            raise ValueError("weights must lie on the simplex")
        if abs(w.sum() - 1.0) > 1e-12:
            w = w / w.sum()
        if self.covariance_kind == "diag":
            if np.any(cov <= 0):
                raise ValueError("diagonal variances must be positive")
        else:
            cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def n_mixtures(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def variances(self) -> np.ndarray:
        """Per-dimension variances (the diagonal for full covariances)."""
        if self.covariance_kind == "diag":
            return self.covariances
        return np.diagonal(self.covariances, axis1=1, axis2=2).copy()

    def full_covariances(self) -> np.ndarray:
        if self.covariance_kind == "full":
            return self.covariances
        return np.stack([np.diag(v) for v in self.covariances])

    def to_bytes(self) -> bytes:
        return formats.gmm_to_bytes(self.weights, self.means, self.covariances, self.covariance_kind)

    @classmethod
    def from_bytes(cls, blob) -> "GaussianMixture":
        fh = blob if hasattr(blob, "read") else io.BytesIO(blob)
        w, mu, cov, kind = formats.read_gmm_raw(fh)
        return cls(w / w.sum(), mu, cov, kind)

    def save(self, path):
        formats._write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "GaussianMixture":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh)

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Draw n frames; returns (frames, component labels)."""
        labels = rng.choice(self.n_mixtures, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        if self.covariance_kind == "diag":
            out = self.means[labels] + z * np.sqrt(self.covariances[labels])
        else:
            chol = np.linalg.cholesky(self.covariances)
            out = self.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)
        return out, labels


def _as_frames(gmm: GaussianMixture, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    frames = y.reshape(1, -1) if y.ndim == 1 else y
    if frames.ndim != 2 or frames.shape[1] != gmm.dim:
        raise ValueError(f"expected {gmm.dim}-dim frames, got shape {y.shape}")
    return frames


def component_log_densities(gmm: GaussianMixture, y) -> np.ndarray:
    """log pi_m + log N(y_n; mu_m, Sigma_m) as an (N, M) matrix."""
    y = _as_frames(gmm, y)
    n, d = y.shape
    out = np.empty((n, gmm.n_mixtures))
    for m in range(gmm.n_mixtures):
        diff = y - gmm.means[m]
        if gmm.covariance_kind == "diag":
            var = gmm.covariances[m]
            maha = np.sum(diff * diff / var, axis=1)
            logdet = np.sum(np.log(var))
        else:
            chol = np.linalg.cholesky(gmm.covariances[m])
            z = solve_triangular(chol, diff.T, lower=True)
            maha = np.sum(z * z, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, m] = -0.5 * (d * LOG_2PI + logdet + maha)
    with np.errstate(divide="ignore"):
        return out + np.log(gmm.weights)


def log_density(gmm: GaussianMixture, y):
    """log p(y) for one frame (scalar) or each row of a matrix."""
    vals = logsumexp(component_log_densities(gmm, y), axis=1)
    return float(vals[0]) if np.ndim(y) == 1 else vals


def log_likelihood(gmm: GaussianMixture, data) -> float:
    return float(np.sum(log_density(gmm, _as_frames(gmm, data))))


def posteriors(gmm: GaussianMixture, y) -> np.ndarray:
    """p(m | y); a length-M vector for one frame or (N, M) for a matrix."""
    logp = component_log_densities(gmm, y)
    post = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    post /= post.sum(axis=1, keepdims=True)
    return post[0] if np.ndim(y) == 1 else post


# ---------------------------------------------------------------------------
# Sufficient statistics


@dataclass
class SufficientStats:
    """Posterior-weighted moments; second moments are outer products or squares."""

    gamma: np.ndarray
    sum_y: np.ndarray
    sum_yy: np.ndarray
    sum_x: np.ndarray | None = None
    sum_xx: np.ndarray | None = None
    sum_xy: np.ndarray | None = None  # sum gamma x y^T
    full: bool = True
    n_frames: int = 0

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        if self.full != other.full or (self.sum_x is None) != (other.sum_x is None):
            raise ValueError("cannot merge statistics of different layouts")

        def add(a, b):
            return None if a is None else a + b

        return SufficientStats(
            self.gamma + other.gamma,
            self.sum_y + other.sum_y,
            self.sum_yy + other.sum_yy,
            add(self.sum_x, other.sum_x),
            add(self.sum_xx, other.sum_xx),
            add(self.sum_xy, other.sum_xy),
            self.full,
            self.n_frames + other.n_frames,
        )


def _weighted_outer(post, a, b):
    return np.stack([(post[:, m, None] * a).T @ b for m in range(post.shape[1])])


def stats_from_posteriors(post: np.ndarray, ys, xs=None, full: bool = True) -> SufficientStats:
    ys = np.asarray(ys, dtype=np.float64)
    if xs is not None:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[0] != ys.shape[0]:
            raise ValueError(f"{xs.shape[0]} clean frames for {ys.shape[0]} noisy frames")
    gamma = post.sum(axis=0)
    sum_y = post.T @ ys
    if full:
        sum_yy = _weighted_outer(post, ys, ys)
    else:
        sum_yy = post.T @ (ys * ys)
    sum_x = sum_xx = sum_xy = None
    if xs is not None:
        sum_x = post.T @ xs
        if full:
            sum_xx = _weighted_outer(post, xs, xs)
            sum_xy = _weighted_outer(post, xs, ys)
        else:
            sum_xx = post.T @ (xs * xs)
            sum_xy = post.T @ (xs * ys)
    return SufficientStats(gamma, sum_y, sum_yy, sum_x, sum_xx, sum_xy, full, ys.shape[0])


def accumulate_stats(gmm: GaussianMixture, ys, xs=None, full: bool = True) -> SufficientStats:
    """Accumulate moments of ys (and paired xs) using p(m | y_n) for both streams."""
    ys = _as_frames(gmm, ys)
    return stats_from_posteriors(posteriors(gmm, ys), ys, xs, full)


# ---------------------------------------------------------------------------
# EM


def variance_floor(data) -> np.ndarray:
    return VAR_FLOOR_FRACTION * np.maximum(np.var(data, axis=0), 1e-12)


def _floor_full(cov: np.ndarray, floor: np.ndarray) -> np.ndarray:
    # constrained ML optimum of Sigma >= diag(floor): eigen-floor in floor-whitened coordinates
    s = np.sqrt(floor)
    white = cov / np.outer(s, s)
    lam, u = np.linalg.eigh(0.5 * (white + white.T))
    if lam.min() >= 1.0:
        return cov
    white = (u * np.maximum(lam, 1.0)) @ u.T
    return white * np.outer(s, s)


def _kmeanspp(data: np.ndarray, m: int, rng) -> np.ndarray:
    n = data.shape[0]
    centres = [data[rng.integers(n)]]
    d2 = np.sum((data - centres[0]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centres.append(data[idx])
        d2 = np.minimum(d2, np.sum((data - data[idx]) ** 2, axis=1))
    return np.array(centres)


def _global_cov(data, kind, floor):
    if kind == "diag":
        return np.maximum(np.var(data, axis=0), floor)
    cov = np.atleast_2d(np.cov(data, rowvar=False, bias=True))
    return _floor_full(cov, floor)


def em_step(gmm: GaussianMixture, data, floor=None) -> tuple[GaussianMixture, float]:
    """One EM iteration; returns (updated model, log-likelihood of the input model).

    Components whose soft count falls below EMPTY_MIXTURE are re-seeded in
    place at the data point with the lowest likelihood, so the component
    order never changes.
    """
    data = _as_frames(gmm, data)
    n, d = data.shape
    floor = variance_floor(data) if floor is None else floor
    logp = component_log_densities(gmm, data)
    frame_ll = logsumexp(logp, axis=1)
    post = np.exp(logp - frame_ll[:, None])
    nk = post.sum(axis=0)
    weights = np.empty(gmm.n_mixtures)
    means = np.empty_like(gmm.means)
    covs = np.empty_like(gmm.covariances)
    worst = None
    for k in range(gmm.n_mixtures):
        if nk[k] < EMPTY_MIXTURE:
            if worst is None:
                worst = np.argsort(frame_ll)
            idx = worst[0]
            worst = worst[1:] if worst.size > 1 else worst
            weights[k] = 1.0 / n
            means[k] = data[idx]
            covs[k] = _global_cov(data, gmm.covariance_kind, floor)
            continue
        weights[k] = nk[k] / n
        means[k] = post[:, k] @ data / nk[k]
        diff = data - means[k]
        if gmm.covariance_kind == "diag":
            covs[k] = np.maximum(post[:, k] @ (diff * diff) / nk[k], floor)
        else:
            cov = (post[:, k, None] * diff).T @ diff / nk[k]
            covs[k] = _floor_full(0.5 * (cov + cov.T), floor)
    weights /= weights.sum()
    return GaussianMixture(weights, means, covs, gmm.covariance_kind), float(frame_ll.sum())


def em_refine(gmm: GaussianMixture, data, iters: int = 3, return_trace: bool = False):
    """EM from an existing model, keeping component order."""
    data = _as_frames(gmm, data)
    floor = variance_floor(data)
    trace = []
    for _ in range(iters):
        gmm, ll = em_step(gmm, data, floor)
        trace.append(ll)
    if return_trace:
        trace.append(log_likelihood(gmm, data))
        return gmm, trace
    return gmm


def em_fit(data, m: int, iters: int = 20, covariance_kind: str = "diag", seed: int = 0, return_trace: bool = False):
    """Fit an m-component mixture: k-means++ seeded means, global covariance, uniform weights, then EM."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or not np.all(np.isfinite(data)):
        raise ValueError("data must be a finite N x D matrix")
    if data.shape[0] < m:
        raise ValueError(f"need at least {m} frames for {m} mixtures, got {data.shape[0]}")
    rng = np.random.default_rng(seed)
    floor = variance_floor(data)
    means = _kmeanspp(data, m, rng)
    cov = _global_cov(data, covariance_kind, floor)
    init = GaussianMixture(np.full(m, 1.0 / m), means, np.repeat(cov[None], m, axis=0), covariance_kind)
    return em_refine(init, data, iters, return_trace)


def with_means(gmm: GaussianMixture, means) -> GaussianMixture:
    return replace(gmm, means=np.asarray(means, dtype=np.float64))
