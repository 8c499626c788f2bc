"""KL-divergence NMF and the two subspace-projection feature pipelines.

V (D x N, non-negative LMFB frames as columns) ~ W (D x R) H (R x N).
Learning alternates the multiplicative W and H updates with column
normalisation of W; projection keeps W fixed and only updates H.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import formats, heq
from .frontend import FeatureKind, FeatureSequence, FrontendConfig, cepstral_matrix

log = logging.getLogger(__name__)

EPS = 1e-12


class DegenerateDictionaryError(ValueError):
    """A dictionary column is entirely zero."""


class TrainingError(ValueError):
    """NMF training cannot proceed on the given data."""


@dataclass
class Dictionary:
    basis: np.ndarray
    iterations_trained: int = 0
    trace: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.basis.ndim != 2:
            raise ValueError("basis must be D x R")
        if np.any(self.basis < 0):
            raise ValueError("dictionary entries must be non-negative")

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def r(self) -> int:
        return self.basis.shape[1]

    def save(self, path):
        formats._write(path, formats.dictionary_to_bytes(self.basis, self.iterations_trained))

    @classmethod
    def load(cls, path) -> "Dictionary":
        basis, iters = formats.read_dictionary_raw(path)
        return cls(basis, iters)


def _as_basis(w):
    return w.basis if isinstance(w, Dictionary) else np.asarray(w, dtype=np.float64)


def _check_shapes(v, w, h):
    if v.ndim != 2 or w.ndim != 2 or h.ndim != 2 or w.shape[0] != v.shape[0] or w.shape[1] != h.shape[0] or h.shape[1] != v.shape[1]:
        raise ValueError(f"shape mismatch: V {v.shape}, W {w.shape}, H {h.shape}")


def kl_divergence(v, w, h) -> float:
    """sum(V log(V/WH) - V + WH) with 0 log 0 = 0."""
    v = np.asarray(v, dtype=np.float64)
    w = _as_basis(w)
    h = np.asarray(h, dtype=np.float64)
    _check_shapes(v, w, h)
    wh = w @ h
    pos = v > 0
    div = np.sum(wh) - np.sum(v)
    div += np.sum(v[pos] * (np.log(v[pos]) - np.log(wh[pos] + EPS)))
    return float(max(div, 0.0))


def update_h(v, w, h) -> np.ndarray:
    w = _as_basis(w)
    ratio = v / (w @ h + EPS)
    return h * (w.T @ ratio) / (w.sum(axis=0)[:, None] + EPS)


def update_w(v, w, h) -> np.ndarray:
    w = _as_basis(w)
    ratio = v / (w @ h + EPS)
    return w * (ratio @ h.T) / (h.sum(axis=1)[None, :] + EPS)


def normalize_columns(w):
    """Scale columns of W to sum to 1.

    Returns (W_normalised, scales); multiply row r of H by scales[r] to
    leave WH unchanged.
    """
    basis = _as_basis(w)
    scales = basis.sum(axis=0)
    if np.any(scales <= 0):
        bad = np.flatnonzero(scales <= 0).tolist()
        raise DegenerateDictionaryError(f"all-zero dictionary columns {bad}")
    return basis / scales, scales


def learn_dictionary(v, r: int = 20, iters: int = 500, seed: int = 0, tol: float | None = None):
    """Jointly learn W and H on the training matrix V.

    W starts from r distinct random non-zero columns of V, H from U[0, 1].
    Each iteration: update W, normalise its columns (rescaling H rows),
    update H.  `tol` enables a relative-divergence early stop.
    Returns (Dictionary, H); Dictionary.trace holds the divergence before
    the first and after every iteration.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise TrainingError("V must be a finite non-negative D x N matrix")
    d, n = v.shape
    if r < 1 or r >= n:
        raise TrainingError(f"rank {r} must satisfy 1 <= r < N = {n}")
    nonzero = np.flatnonzero(v.sum(axis=0) > 0)
    if nonzero.size < r:
        raise TrainingError(f"only {nonzero.size} non-zero frames for rank {r}")
    if r >= d:
        log.warning("rank %d >= dimension %d: the dictionary spans the whole space", r, d)
    rng = np.random.default_rng(seed)
    w = v[:, rng.choice(nonzero, size=r, replace=False)].copy()
    h = rng.uniform(0.0, 1.0, size=(r, n))
    trace = [kl_divergence(v, w, h)]
    done = 0
    for _ in range(iters):
        w = update_w(v, w, h)
        w, scales = normalize_columns(w)
        h = h * scales[:, None]
        h = update_h(v, w, h)
        done += 1
        trace.append(kl_divergence(v, w, h))
        if tol is not None and trace[-2] > 0 and (trace[-2] - trace[-1]) / trace[-2] < tol:
            break
    return Dictionary(w, done, trace), h


def initial_activations(v, w) -> np.ndarray:
    """Constant-per-frame start whose reconstruction has the same column sums as V."""
    basis = _as_basis(w)
    col = np.asarray(v, dtype=np.float64).sum(axis=0) / basis.sum()
    return np.repeat(col[None, :], basis.shape[1], axis=0) + EPS


def project(v, w, iters: int = 500, h0=None, trace: list | None = None) -> np.ndarray:
    """Estimate H for fixed W by repeated H updates.

    The default start is permutation-symmetric in the dictionary columns, so
    the reconstruction does not depend on column order.
    """
    v = np.asarray(v, dtype=np.float64)
    basis = _as_basis(w)
    h = initial_activations(v, basis) if h0 is None else np.asarray(h0, dtype=np.float64).copy()
    _check_shapes(v, basis, h)
    if trace is not None:
        trace.append(kl_divergence(v, basis, h))
    for _ in range(iters):
        h = update_h(v, basis, h)
        if trace is not None:
            trace.append(kl_divergence(v, basis, h))
    return h


def reconstruct(w, h) -> np.ndarray:
    return _as_basis(w) @ np.asarray(h, dtype=np.float64)


@dataclass
class RobustWResult:
    dictionary: Dictionary  # W~, columns normalised
    activations: np.ndarray  # H~
    plain: Dictionary  # W from the joint learning stage
    plain_activations: np.ndarray
    reference: list  # per-row quantile tables of H
    refit_trace: list = field(repr=False)  # D(V || W H~) during the W refit, before normalisation


def robustw_train(v, r: int = 20, iters: int = 500, n_quantiles: int = 100, seed: int = 0, refit_iters: int | None = None) -> RobustWResult:
    """Learn the equalised-activation dictionary.

    1. learn (W, H) jointly;
    2. build one reference table per row of H and equalise each row of H
       against it, giving H~;
    3. hold V and H~ fixed and refit W by W updates alone;
    4. normalise the columns of the refit W, leaving H~ as is.
    """
    v = np.asarray(v, dtype=np.float64)
    plain, h = learn_dictionary(v, r, iters, seed)
    reference = heq.build_tables(h.T, n_quantiles)
    h_eq = np.empty_like(h)
    for k in range(r):
        test = heq.build_table(h[k], n_quantiles)
        h_eq[k] = heq.equalize(h[k], test, reference[k])
    np.clip(h_eq, 0.0, None, out=h_eq)
    w = plain.basis.copy()
    refit_trace = [kl_divergence(v, w, h_eq)]
    for _ in range(iters if refit_iters is None else refit_iters):
        w = update_w(v, w, h_eq)
        refit_trace.append(kl_divergence(v, w, h_eq))
    w, _ = normalize_columns(w)
    robust = Dictionary(w, plain.iterations_trained + len(refit_trace) - 1)
    return RobustWResult(robust, h_eq, plain, h, reference, refit_trace)


def subspace_mfcc(v_hat, cfg: FrontendConfig | None = None) -> np.ndarray:
    """C = L D V^ for reconstructed LMFB columns; returns N x n_cepstra."""
    return (cepstral_matrix(cfg or FrontendConfig()) @ np.asarray(v_hat)).T


def project_utterance(seq: FeatureSequence, w, iters: int = 500, cfg: FrontendConfig | None = None):
    """Test-time pipeline for one utterance: project onto W, reconstruct, DCT + lifter.

    Returns (MFCC FeatureSequence, final divergence).
    """
    if seq.kind != FeatureKind.LMFB:
        raise TypeError(f"projection needs LMFB features, got {seq.kind.name}")
    v = seq.frames.T
    h = project(v, w, iters)
    cep = subspace_mfcc(reconstruct(w, h), cfg)
    return FeatureSequence(cep, FeatureKind.MFCC, seq.frame_period_ms), kl_divergence(v, w, h)
