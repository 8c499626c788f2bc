"""Quantile-based histogram equalisation.

A table holds the empirical quantiles of one scalar stream at cdf levels
q/n, q = 1..n (linear interpolation between order statistics).  Because a
test table and a reference table share the cdf grid, the map
F_ref^-1(F_test(x)) is the piecewise-linear curve through the points
(test_q, ref_q), extended linearly past the outermost breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import formats
from .frontend import FeatureSequence


class EstimationError(ValueError):
    """Too little data to estimate a quantile table."""


@dataclass(frozen=True)
class QuantileTable:
    values: np.ndarray  # non-decreasing feature values at the cdf grid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise ValueError("quantile table needs at least one breakpoint")
        if np.any(np.diff(values) < 0):
            raise ValueError("quantile values must be non-decreasing")
        object.__setattr__(self, "values", values)

    @property
    def n_quantiles(self) -> int:
        return self.values.size

    @property
    def cdf(self) -> np.ndarray:
        return np.arange(1, self.n_quantiles + 1) / self.n_quantiles

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.cdf.tolist(), self.values.tolist()))


def build_table(samples, n_quantiles: int = 100) -> QuantileTable:
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < 2:
        raise EstimationError(f"need at least 2 samples to build a quantile table, got {samples.size}")
    if n_quantiles < 1:
        raise ValueError("n_quantiles must be >= 1")
    levels = np.arange(1, n_quantiles + 1) / n_quantiles
    values = np.quantile(samples, levels, method="linear")
    # np.quantile can wobble by an ulp on ties; the table contract is monotone
    return QuantileTable(np.maximum.accumulate(values))


def build_tables(frames, n_quantiles: int = 100) -> list[QuantileTable]:
    """One table per column of an N x D matrix."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise EstimationError(f"need at least 2 frames to build quantile tables, got shape {frames.shape}")
    return [build_table(frames[:, d], n_quantiles) for d in range(frames.shape[1])]


def _knots(test: QuantileTable, reference: QuantileTable):
    if test.n_quantiles != reference.n_quantiles:
        raise ValueError("test and reference tables must use the same number of quantiles")
    t, r = test.values, reference.values
    # tied test values collapse to one knot carrying the mean reference value
    uniq, start = np.unique(t, return_index=True)
    if uniq.size == t.size:
        return t, r
    sums = np.add.reduceat(r, start)
    counts = np.diff(np.append(start, t.size))
    return uniq, sums / counts


def _pwl(x, kx, ky):
    x = np.asarray(x, dtype=np.float64)
    if kx.size == 1:
        return np.full_like(x, ky[0])
    out = np.interp(x, kx, ky)
    lo_slope = (ky[1] - ky[0]) / (kx[1] - kx[0])
    hi_slope = (ky[-1] - ky[-2]) / (kx[-1] - kx[-2])
    below = x < kx[0]
    above = x > kx[-1]
    out[below] = ky[0] + lo_slope * (x[below] - kx[0])
    out[above] = ky[-1] + hi_slope * (x[above] - kx[-1])
    return out


def equalize(x, test: QuantileTable, reference: QuantileTable):
    """g(x) = F_ref^-1(F_test(x)); accepts a scalar or an array."""
    kx, ky = _knots(test, reference)
    out = _pwl(np.atleast_1d(x), kx, ky)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def equalize_sequence(seq: FeatureSequence, reference, mode: str = "per-utterance", test_tables=None) -> FeatureSequence:
    """Equalise every dimension of seq onto its reference table.

    mode "per-utterance" builds the test tables from seq itself;
    mode "given" uses test_tables (e.g. corpus-level tables).
    """
    if len(reference) != seq.dim:
        raise ValueError(f"{len(reference)} reference tables for {seq.dim}-dim features")
    if mode == "per-utterance":
        test_tables = build_tables(seq.frames, reference[0].n_quantiles)
    elif mode == "given":
        if test_tables is None or len(test_tables) != seq.dim:
            raise ValueError("mode 'given' needs one test table per dimension")
    else:
        raise ValueError(f"unknown equalisation mode {mode!r}")
    out = np.empty_like(seq.frames)
    for d in range(seq.dim):
        out[:, d] = equalize(seq.frames[:, d], test_tables[d], reference[d])
    return FeatureSequence(out, seq.kind, seq.frame_period_ms)


def save_tables(path, tables: list[QuantileTable]):
    formats._write(path, formats.quantiles_to_bytes(np.vstack([t.values for t in tables])))


def load_tables(path) -> list[QuantileTable]:
    return [QuantileTable(np.maximum.accumulate(row)) for row in formats.read_quantiles_raw(path)]
