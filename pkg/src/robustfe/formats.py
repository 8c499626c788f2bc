"""Little-endian binary containers and text exports.

    RFT1  feature archive      u32 n_frames, dim, kind, frame_period_us; f32 frames (row-major)
    RFTW  NMF dictionary       u32 d, r; u64 iterations; f32 basis (column-major)
    RFTQ  quantile tables      u32 n_dims, n_quantiles; f32 values per dimension
    RFTG  Gaussian mixture     u32 m, d, covariance_kind; f32 weights, means, covariances
    RFTM  MLLR transform       u32 d; f32 d*(d+1) row-major
    RFTS  SPLICE model         u32 kind, m, d, diag_flag; RFTG blob; f32 transforms, biases, clean means
"""

from __future__ import annotations

import io
import struct
import wave
from pathlib import Path

import numpy as np

from .frontend import AudioBuffer, FeatureKind, FeatureSequence


class FormatError(ValueError):
    """File does not match the expected container layout."""


_F32 = np.dtype("<f4")


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _expect_magic(fh, magic: bytes):
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")


def _read_f32(fh, count: int) -> np.ndarray:
    return np.frombuffer(_read_exact(fh, 4 * count), dtype=_F32).astype(np.float64)


def _f32_bytes(a) -> bytes:
    return np.ascontiguousarray(a, dtype=np.float64).astype(_F32).tobytes()


def _open_read(src):
    if isinstance(src, (bytes, bytearray)):
        return io.BytesIO(src)
    if hasattr(src, "read"):
        return src
    return open(src, "rb")


def _write(path, payload: bytes):
    if hasattr(path, "write"):
        path.write(payload)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)


# ---------------------------------------------------------------------------
# RFT1 feature archives


def features_to_bytes(seq: FeatureSequence) -> bytes:
    period_us = int(round(seq.frame_period_ms * 1000))
    header = b"RFT1" + struct.pack("<4I", seq.n_frames, seq.dim, int(seq.kind), period_us)
    return header + _f32_bytes(seq.frames)


def write_features(path, seq: FeatureSequence):
    _write(path, features_to_bytes(seq))


def read_features(src) -> FeatureSequence:
    fh = _open_read(src)
    try:
        _expect_magic(fh, b"RFT1")
        n, d, kind, period_us = struct.unpack("<4I", _read_exact(fh, 16))
        if kind not in (0, 1, 2):
            raise FormatError(f"unknown feature kind {kind}")
        frames = _read_f32(fh, n * d).reshape(n, d)
    finally:
        if fh is not src:
            fh.close()
    return FeatureSequence(frames, FeatureKind(kind), period_us / 1000.0)


def write_csv(path, matrix, header=None):
    """One row per line; used for features, dictionaries and correspondence counts."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, matrix, delimiter=",", fmt="%.9g", header=header or "", comments="")


# ---------------------------------------------------------------------------
# RFTW dictionaries


def dictionary_to_bytes(basis: np.ndarray, iterations: int) -> bytes:
    d, r = basis.shape
    return b"RFTW" + struct.pack("<2IQ", d, r, int(iterations)) + _f32_bytes(np.asarray(basis).T)


def read_dictionary_raw(src) -> tuple[np.ndarray, int]:
    fh = _open_read(src)
    try:
        _expect_magic(fh, b"RFTW")
        d, r, iters = struct.unpack("<2IQ", _read_exact(fh, 16))
        basis = _read_f32(fh, d * r).reshape(r, d).T.copy()
    finally:
        if fh is not src:
            fh.close()
    return basis, iters


# ---------------------------------------------------------------------------
# RFTQ quantile tables


def quantiles_to_bytes(values: np.ndarray) -> bytes:
    """values: (n_dims, n_quantiles) feature values on the implicit grid q/n, q = 1..n."""
    n_dims, nq = values.shape
    return b"RFTQ" + struct.pack("<2I", n_dims, nq) + _f32_bytes(values)


def read_quantiles_raw(src) -> np.ndarray:
    fh = _open_read(src)
    try:
        _expect_magic(fh, b"RFTQ")
        n_dims, nq = struct.unpack("<2I", _read_exact(fh, 8))
        return _read_f32(fh, n_dims * nq).reshape(n_dims, nq)
    finally:
        if fh is not src:
            fh.close()


# ---------------------------------------------------------------------------
# RFTG mixtures, RFTM transforms, RFTS models (object-level wrappers live in
# the owning modules so this file stays free of model logic)

COV_CODES = {"diag": 0, "full": 1}
COV_NAMES = {v: k for k, v in COV_CODES.items()}


def gmm_to_bytes(weights, means, covariances, covariance_kind: str) -> bytes:
    m, d = means.shape
    head = b"RFTG" + struct.pack("<3I", m, d, COV_CODES[covariance_kind])
    return head + _f32_bytes(weights) + _f32_bytes(means) + _f32_bytes(covariances)


def read_gmm_raw(fh):
    _expect_magic(fh, b"RFTG")
    m, d, code = struct.unpack("<3I", _read_exact(fh, 12))
    if code not in COV_NAMES:
        raise FormatError(f"unknown covariance kind {code}")
    kind = COV_NAMES[code]
    weights = _read_f32(fh, m)
    means = _read_f32(fh, m * d).reshape(m, d)
    shape = (m, d) if kind == "diag" else (m, d, d)
    covs = _read_f32(fh, int(np.prod(shape))).reshape(shape)
    return weights, means, covs, kind


def transform_to_bytes(matrix: np.ndarray) -> bytes:
    d = matrix.shape[0]
    if matrix.shape != (d, d + 1):
        raise FormatError(f"MLLR transform must be d x (d+1), got {matrix.shape}")
    return b"RFTM" + struct.pack("<I", d) + _f32_bytes(matrix)


def read_transform_raw(src) -> np.ndarray:
    fh = _open_read(src)
    try:
        _expect_magic(fh, b"RFTM")
        (d,) = struct.unpack("<I", _read_exact(fh, 4))
        return _read_f32(fh, d * (d + 1)).reshape(d, d + 1)
    finally:
        if fh is not src:
            fh.close()


def splice_to_bytes(kind: int, diag: bool, gmm_blob: bytes, transforms, biases, clean_means) -> bytes:
    m, d = np.asarray(biases).shape
    head = b"RFTS" + struct.pack("<4I", kind, m, d, int(diag))
    return head + gmm_blob + _f32_bytes(transforms) + _f32_bytes(biases) + _f32_bytes(clean_means)


def read_splice_raw(src):
    fh = _open_read(src)
    try:
        _expect_magic(fh, b"RFTS")
        kind, m, d, diag = struct.unpack("<4I", _read_exact(fh, 16))
        gmm_parts = read_gmm_raw(fh)
        shape = (m, d) if diag else (m, d, d)
        transforms = _read_f32(fh, int(np.prod(shape))).reshape(shape)
        biases = _read_f32(fh, m * d).reshape(m, d)
        clean_means = _read_f32(fh, m * d).reshape(m, d)
    finally:
        if fh is not src:
            fh.close()
    return kind, bool(diag), gmm_parts, transforms, biases, clean_means


# ---------------------------------------------------------------------------
# Portable graymap


def write_pgm(path, counts: np.ndarray):
    """Binary PGM of log(1 + counts), darkest where counts are largest."""
    counts = np.asarray(counts, dtype=np.float64)
    logc = np.log1p(np.maximum(counts, 0.0))
    top = logc.max()
    scaled = logc / top if top > 0 else logc
    pixels = np.round(255 * (1.0 - scaled)).astype(np.uint8)
    rows, cols = pixels.shape
    _write(path, f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())


# ---------------------------------------------------------------------------
# WAV


def read_wav(path) -> AudioBuffer:
    """Mono 16-bit PCM WAV, normalised by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(path, audio: AudioBuffer):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())
