"""SPLICE-family piecewise-linear feature compensation.

Every model maps a noisy frame y to

    x^ = sum_m p(m | y) (C_m y + d_m)

with posteriors from a noisy-side mixture.  The kinds differ in how the
per-mixture transforms are estimated:

    SPLICE        C_m = A_m = Sigma_xy Sigma_y^-1              (stereo, MMSE)
    MSPLICE       C_m = Sigma_x^1/2 Sigma_y^-1/2               (stereo, whitening)
    MSPLICE_DIAG  c_m = sigma_x / sigma_y, elementwise         (stereo)
    NONSTEREO     whitening between order-matched noisy and clean mixtures

and in all cases d_m = mu_x,m - C_m mu_y,m.  Clean-side statistics always
use the noisy-frame alignments p(m | y_n).
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import formats
from .gmm import GaussianMixture, SufficientStats, accumulate_stats, em_fit, em_refine, posteriors, variance_floor, _floor_full
from .mllr import apply_mllr, estimate_global_mllr


_COND_LIMIT = 1e12
_STARVED = 1e-10
EIG_FLOOR = 1e-8


class StatisticsError(ArithmeticError):
    """Accumulated statistics cannot produce a valid transform."""


class SpliceKind(enum.IntEnum):
    SPLICE = 0
    MSPLICE = 1
    MSPLICE_DIAG = 2
    NONSTEREO = 3


@dataclass(frozen=True)
class SpliceModel:
    kind: SpliceKind
    transforms: np.ndarray  # (M, D, D), or (M, D) when diagonal
    biases: np.ndarray  # (M, D)
    gmm: GaussianMixture  # noisy-side mixture used for posteriors
    clean_means: np.ndarray  # (M, D)

    def __post_init__(self):
        object.__setattr__(self, "kind", SpliceKind(self.kind))
        m, d = self.gmm.n_mixtures, self.gmm.dim
        tr = np.asarray(self.transforms, dtype=np.float64)
        if tr.shape not in ((m, d), (m, d, d)):
            raise ValueError(f"transforms of shape {tr.shape} do not fit a {m}-mixture {d}-dim model")
        for name in ("biases", "clean_means"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (m, d):
                raise ValueError(f"{name} must be ({m}, {d}), got {arr.shape}")
            object.__setattr__(self, name, arr)
        if not (np.all(np.isfinite(tr)) and np.all(np.isfinite(self.biases))):
            raise ValueError("non-finite transform parameters")
        object.__setattr__(self, "transforms", tr)

    @property
    def diagonal(self) -> bool:
        return self.transforms.ndim == 2

    @property
    def n_mixtures(self) -> int:
        return self.gmm.n_mixtures

    @property
    def dim(self) -> int:
        return self.gmm.dim

    def apply_transform(self, values: np.ndarray) -> np.ndarray:
        """C_m v_m for an (M, D) stack of vectors."""
        if self.diagonal:
            return self.transforms * values
        return np.einsum("mij,mj->mi", self.transforms, values)

    def to_bytes(self) -> bytes:
        return formats.splice_to_bytes(int(self.kind), self.diagonal, self.gmm.to_bytes(), self.transforms, self.biases, self.clean_means)

    def save(self, path):
        formats._write(path, self.to_bytes())

    @classmethod
    def load(cls, src) -> "SpliceModel":
        kind, _, (w, mu, cov, ckind), tr, b, cm = formats.read_splice_raw(src)
        return cls(kind, tr, b, GaussianMixture(w / w.sum(), mu, cov, ckind), cm)

    @classmethod
    def identity(cls, gmm: GaussianMixture, kind=SpliceKind.SPLICE, diagonal: bool = False) -> "SpliceModel":
        m, d = gmm.n_mixtures, gmm.dim
        tr = np.ones((m, d)) if diagonal else np.repeat(np.eye(d)[None], m, axis=0)
        return cls(kind, tr, np.zeros((m, d)), gmm, gmm.means.copy())


@dataclass(frozen=True)
class StereoBatch:
    clean: np.ndarray  # N x D
    noisy: np.ndarray  # N x D
    pair_id: str = ""

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.clean, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.noisy, dtype=np.float64))
        if x.shape != y.shape:
            raise ValueError(f"stereo streams differ in shape: clean {x.shape}, noisy {y.shape} ({self.pair_id})")
        object.__setattr__(self, "clean", x)
        object.__setattr__(self, "noisy", y)

    @classmethod
    def concat(cls, batches) -> "StereoBatch":
        batches = list(batches)
        if not batches:
            raise ValueError("no stereo batches")
        return cls(np.vstack([b.clean for b in batches]), np.vstack([b.noisy for b in batches]), "+".join(b.pair_id for b in batches))

    def __len__(self):
        return self.clean.shape[0]


def _batch(batch) -> StereoBatch:
    if isinstance(batch, StereoBatch):
        return batch
    return StereoBatch.concat(batch)


# ---------------------------------------------------------------------------
# Matrix helpers


def sym_power(a: np.ndarray, power: float, floor: float = EIG_FLOOR, label: str = "") -> np.ndarray:
    """Symmetric PSD power via eigendecomposition, eigenvalues floored at floor * max."""
    a = 0.5 * (a + a.T)
    lam, u = np.linalg.eigh(a)
    top = lam.max()
    if top <= 0 or lam.min() < -1e-8 * abs(top):
        raise StatisticsError(f"covariance{label} is not positive semi-definite (eigenvalues {lam.min():.3g} .. {top:.3g})")
    lam = np.maximum(lam, floor * top)
    return (u * lam**power) @ u.T


def _ridge_solve_right(lhs: np.ndarray, mat: np.ndarray, label: str) -> np.ndarray:
    """lhs @ mat^-1 with a 1e-8 trace ridge when mat is ill-conditioned."""
    if np.linalg.cond(mat) > _COND_LIMIT:
        lam = 1e-8 * np.trace(mat)
        warnings.warn(f"starved statistics for mixture {label}; applying ridge {lam:.3g}", RuntimeWarning, stacklevel=3)
        mat = mat + lam * np.eye(mat.shape[0])
    return np.linalg.solve(mat.T, lhs.T).T


# ---------------------------------------------------------------------------
# Stereo SPLICE


def stereo_stats(batch, gmm_y: GaussianMixture, full: bool = True) -> SufficientStats:
    batch = _batch(batch)
    if batch.noisy.shape[1] != gmm_y.dim:
        raise ValueError(f"{batch.noisy.shape[1]}-dim features for a {gmm_y.dim}-dim mixture")
    return accumulate_stats(gmm_y, batch.noisy, batch.clean, full=full)


def _starved(stats: SufficientStats) -> list[int]:
    idx = np.flatnonzero(stats.gamma <= _STARVED).tolist()
    if idx:
        warnings.warn(f"mixtures {idx} received no frames; they get identity transforms", RuntimeWarning, stacklevel=3)
    return idx


def splice_joint_solution(stats: SufficientStats) -> tuple[np.ndarray, np.ndarray]:
    """W_m = [sum p x y'^T][sum p y' y'^T]^-1 with y' = [1; y]; returns (A, b)."""
    m, d = stats.sum_y.shape
    a = np.empty((m, d, d))
    b = np.empty((m, d))
    for k in range(m):
        g = stats.gamma[k]
        yy = np.empty((d + 1, d + 1))
        yy[0, 0] = g
        yy[0, 1:] = yy[1:, 0] = stats.sum_y[k]
        yy[1:, 1:] = stats.sum_yy[k]
        xy = np.hstack([stats.sum_x[k][:, None], stats.sum_xy[k]])
        w = _ridge_solve_right(xy, yy, str(k))
        b[k], a[k] = w[:, 0], w[:, 1:]
    return a, b


def moments(stats: SufficientStats):
    """Per-mixture means and centred (co)variances of both streams."""
    g = stats.gamma[:, None]
    mu_y = stats.sum_y / g
    mu_x = stats.sum_x / g
    if stats.full:
        cov_y = stats.sum_yy / g[:, :, None] - np.einsum("mi,mj->mij", mu_y, mu_y)
        cov_x = stats.sum_xx / g[:, :, None] - np.einsum("mi,mj->mij", mu_x, mu_x)
        cov_xy = stats.sum_xy / g[:, :, None] - np.einsum("mi,mj->mij", mu_x, mu_y)
    else:
        cov_y = stats.sum_yy / g - mu_y**2
        cov_x = stats.sum_xx / g - mu_x**2
        cov_xy = stats.sum_xy / g - mu_x * mu_y
    return mu_x, mu_y, cov_x, cov_y, cov_xy


def splice_mmse_solution(stats: SufficientStats) -> tuple[np.ndarray, np.ndarray]:
    """A_m = Sigma_xy Sigma_y^-1, b_m = mu_x - A_m mu_y from centred moments."""
    mu_x, mu_y, _, cov_y, cov_xy = moments(stats)
    a = np.stack([_ridge_solve_right(cov_xy[k], cov_y[k], str(k)) for k in range(len(mu_x))])
    b = mu_x - np.einsum("mij,mj->mi", a, mu_y)
    return a, b


def train_splice(batch, gmm_y: GaussianMixture) -> SpliceModel:
    stats = stereo_stats(batch, gmm_y, full=True)
    starved = _starved(stats)
    safe = _fill_starved(stats, gmm_y, starved)
    a, b = splice_joint_solution(safe)
    mu_x = safe.sum_x / safe.gamma[:, None]
    for k in starved:
        a[k], b[k] = np.eye(gmm_y.dim), 0.0
    return SpliceModel(SpliceKind.SPLICE, a, b, gmm_y, mu_x)


def _fill_starved(stats: SufficientStats, gmm: GaussianMixture, idx) -> SufficientStats:
    # unit pseudo-count at the mixture's own parameters keeps the algebra finite
    if not idx:
        return stats
    s = replace(stats, gamma=stats.gamma.copy(), sum_y=stats.sum_y.copy(), sum_yy=stats.sum_yy.copy(),
                sum_x=stats.sum_x.copy(), sum_xx=stats.sum_xx.copy(), sum_xy=stats.sum_xy.copy())
    cov = gmm.full_covariances() if s.full else gmm.variances()
    for k in idx:
        mu = gmm.means[k]
        second = cov[k] + (np.outer(mu, mu) if s.full else mu * mu)
        s.gamma[k] = 1.0
        s.sum_y[k] = s.sum_x[k] = mu
        s.sum_yy[k] = s.sum_xx[k] = s.sum_xy[k] = second
    return s


def whitening_transform(cov_x: np.ndarray, cov_y: np.ndarray, label: str = "") -> np.ndarray:
    """C = Sigma_x^1/2 Sigma_y^-1/2 with symmetric roots."""
    return sym_power(cov_x, 0.5, label=f" x{label}") @ sym_power(cov_y, -0.5, label=f" y{label}")


def train_msplice(batch, gmm_y: GaussianMixture) -> SpliceModel:
    batch = _batch(batch)
    stats = stereo_stats(batch, gmm_y, full=True)
    starved = _starved(stats)
    mu_x, mu_y, cov_x, cov_y, _ = moments(_fill_starved(stats, gmm_y, starved))
    # floor Sigma_y in floor-whitened coordinates and add the same increment to
    # Sigma_x, so identical streams still whiten to the identity
    floor = variance_floor(batch.noisy)
    c = np.empty_like(cov_x)
    for k in range(len(mu_x)):
        cy = _floor_full(cov_y[k], floor)
        c[k] = whitening_transform(cov_x[k] + (cy - cov_y[k]), cy, f" of mixture {k}")
    d = mu_x - np.einsum("mij,mj->mi", c, mu_y)
    return SpliceModel(SpliceKind.MSPLICE, c, d, gmm_y, mu_x)


def train_msplice_diag(batch, gmm_y: GaussianMixture) -> SpliceModel:
    batch = _batch(batch)
    stats = stereo_stats(batch, gmm_y, full=False)
    starved = _starved(stats)
    mu_x, mu_y, var_x, var_y, _ = moments(_fill_starved(stats, gmm_y, starved))
    vy = np.maximum(var_y, variance_floor(batch.noisy))
    c = np.sqrt(np.maximum(var_x + (vy - var_y), 0.0) / vy)
    d = mu_x - c * mu_y
    return SpliceModel(SpliceKind.MSPLICE_DIAG, c, d, gmm_y, mu_x)


# ---------------------------------------------------------------------------
# Enhancement


def enhance(y, model: SpliceModel) -> np.ndarray:
    """Posterior-weighted sum of per-mixture affine maps; one frame or an N x D matrix."""
    frames = np.atleast_2d(np.asarray(y, dtype=np.float64))
    post = posteriors(model.gmm, frames)
    out = np.zeros_like(frames)
    for m in range(model.n_mixtures):
        if model.diagonal:
            mapped = frames * model.transforms[m] + model.biases[m]
        else:
            mapped = frames @ model.transforms[m].T + model.biases[m]
        out += post[:, m, None] * mapped
    return out[0] if np.ndim(y) == 1 else out


def pseudo_clean(clean, model: SpliceModel) -> np.ndarray:
    """Pass clean features through the same map used on noisy test data."""
    return enhance(clean, model)


# ---------------------------------------------------------------------------
# Mixture correspondence and non-stereo training


@dataclass(frozen=True)
class CorrespondenceMatrix:
    counts: np.ndarray  # (M_clean, M_noisy)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def diagonal_fraction(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())


def correspondence_matrix(gmm_x: GaussianMixture, gmm_y: GaussianMixture, batch) -> CorrespondenceMatrix:
    """V_ij = sum_n p(i | x_n) p(j | y_n)."""
    batch = _batch(batch)
    if gmm_x.dim != gmm_y.dim:
        raise ValueError("clean and noisy mixtures differ in dimension")
    return CorrespondenceMatrix(posteriors(gmm_x, batch.clean).T @ posteriors(gmm_y, batch.noisy))


def whitening_between(gmm_y: GaussianMixture, gmm_x: GaussianMixture, diagonal: bool):
    """Transforms mapping mixture m of gmm_y onto mixture m of gmm_x."""
    if diagonal:
        c = np.sqrt(gmm_x.variances() / gmm_y.variances())
        return c, gmm_x.means - c * gmm_y.means
    cx, cy = gmm_x.full_covariances(), gmm_y.full_covariances()
    c = np.stack([whitening_transform(cx[k], cy[k], f" of mixture {k}") for k in range(gmm_y.n_mixtures)])
    return c, gmm_x.means - np.einsum("mij,mj->mi", c, gmm_y.means)


@dataclass(frozen=True)
class NonStereoResult:
    model: SpliceModel
    noisy_gmm: GaussianMixture
    adapted_gmm: GaussianMixture  # noisy mixture after the MLLR step
    clean_gmm: GaussianMixture


def _stack(seqs) -> np.ndarray:
    if isinstance(seqs, np.ndarray):
        return np.atleast_2d(seqs)
    return np.vstack([getattr(s, "frames", s) for s in seqs])


def train_nonstereo(clean, noisy, m: int = 128, em_iters: int = 20, refine_iters: int = 3, seed: int = 0,
                    noisy_gmm: GaussianMixture | None = None, return_details: bool = False):
    """Mixture-corresponded whitening from unpaired clean and noisy data.

    1. fit the noisy mixture (unless given);
    2. move its means to the clean data with one global MLLR transform;
    3. refine on the clean data with order-preserving EM;
    4. whiten mixture m of the noisy model onto mixture m of the clean model.
    """
    x = _stack(clean)
    y = _stack(noisy)
    gmm_y = noisy_gmm if noisy_gmm is not None else em_fit(y, m, em_iters, "diag", seed)
    if gmm_y.covariance_kind != "diag":
        raise ValueError("the non-stereo extension needs a diagonal-covariance noisy mixture")
    adapted = apply_mllr(gmm_y, estimate_global_mllr(gmm_y, x))
    gmm_x = em_refine(adapted, x, refine_iters)
    c, d = whitening_between(gmm_y, gmm_x, diagonal=True)
    model = SpliceModel(SpliceKind.NONSTEREO, c, d, gmm_y, gmm_x.means)
    if return_details:
        return NonStereoResult(model, gmm_y, adapted, gmm_x)
    return model


# ---------------------------------------------------------------------------
# Run-time adaptation


def runtime_adapt(model: SpliceModel, test_noisy, use_adapted_posteriors: bool = True) -> SpliceModel:
    """Re-estimate noisy means by global MLLR on test data and recompute the biases.

    d_m^(a) = mu_x,m - C_m mu_y,m^(a).  Transforms are unchanged.  With
    use_adapted_posteriors the returned model scores frames against the
    adapted mixture; otherwise the original mixture is kept.
    """
    y = _stack(test_noisy)
    d = model.dim
    if y.shape[0] < d + 1:
        warnings.warn(f"only {y.shape[0]} adaptation frames for {d}-dim features; adaptation skipped", RuntimeWarning, stacklevel=2)
        return model
    gmm = model.gmm
    if gmm.covariance_kind != "diag":
        gmm_diag = GaussianMixture(gmm.weights, gmm.means, gmm.variances(), "diag")
    else:
        gmm_diag = gmm
    t = estimate_global_mllr(gmm_diag, y)
    adapted_means = t.apply(gmm.means)
    biases = model.clean_means - model.apply_transform(adapted_means)
    new_gmm = replace(gmm, means=adapted_means) if use_adapted_posteriors else gmm
    return replace(model, biases=biases, gmm=new_gmm)

