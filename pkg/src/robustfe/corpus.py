"""Manifests, SNR-controlled noise mixing and batch feature extraction.

Manifest lines are tab-separated UTF-8:

    id <TAB> audio_path <TAB> stereo_peer_id <TAB> condition <TAB> snr

with "-" for absent fields.  Relative audio paths resolve against the
manifest's directory.  In a stereo pair the member whose snr field is
"clean" is the clean side; if that is ambiguous the earlier line is.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import formats
from .compensation import StereoBatch
from .frontend import AudioBuffer, FeatureSequence, FrontendConfig, extract_composite, extract_lmfb, extract_mfcc

log = logging.getLogger(__name__)

CLEAN = "clean"


class ManifestError(ValueError):
    pass


class MixingError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class Stage(str, enum.Enum):
    LMFB = "lmfb"
    MFCC13 = "mfcc13"
    COMPOSITE = "composite"


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio_path: Path
    stereo_peer_id: str | None = None
    condition_tag: str | None = None
    snr_tag: str | None = None

    @property
    def is_clean(self) -> bool:
        return self.snr_tag == CLEAN

    @property
    def group(self) -> tuple[str, str]:
        return (self.condition_tag or "-", self.snr_tag or "-")


class Manifest:
    def __init__(self, entries, check_files: bool = False):
        self.entries: list[ManifestEntry] = list(entries)
        self._by_id = {}
        for e in self.entries:
            if e.utterance_id in self._by_id:
                raise ManifestError(f"duplicate utterance id {e.utterance_id!r}")
            self._by_id[e.utterance_id] = e
        for e in self.entries:
            if e.stereo_peer_id is None:
                continue
            peer = self._by_id.get(e.stereo_peer_id)
            if peer is None:
                raise ManifestError(f"{e.utterance_id}: stereo peer {e.stereo_peer_id!r} not in manifest")
            if peer.stereo_peer_id != e.utterance_id:
                raise ManifestError(f"{e.utterance_id}: stereo peer {peer.utterance_id} does not point back")
        if check_files:
            missing = [e.utterance_id for e in self.entries if not e.audio_path.is_file()]
            if missing:
                raise ManifestError(f"missing audio for {missing}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, utt_id: str) -> ManifestEntry:
        return self._by_id[utt_id]

    @property
    def is_stereo(self) -> bool:
        return bool(self.entries) and all(e.stereo_peer_id is not None for e in self.entries)

    def stereo_pairs(self) -> list[tuple[ManifestEntry, ManifestEntry]]:
        """(clean, noisy) pairs in manifest order."""
        order = {e.utterance_id: i for i, e in enumerate(self.entries)}
        seen = set()
        pairs = []
        for e in self.entries:
            if e.stereo_peer_id is None:
                raise ManifestError(f"{e.utterance_id} has no stereo peer")
            if e.utterance_id in seen:
                continue
            peer = self._by_id[e.stereo_peer_id]
            seen.update((e.utterance_id, peer.utterance_id))
            if e.is_clean != peer.is_clean:
                pairs.append((e, peer) if e.is_clean else (peer, e))
            else:
                first, second = sorted((e, peer), key=lambda x: order[x.utterance_id])
                pairs.append((first, second))
        return pairs

    def groups(self, entries=None) -> dict[tuple[str, str], list[ManifestEntry]]:
        out: dict[tuple[str, str], list[ManifestEntry]] = {}
        for e in self.entries if entries is None else entries:
            out.setdefault(e.group, []).append(e)
        return out

    @classmethod
    def load(cls, path, check_files: bool = False) -> "Manifest":
        path = Path(path)
        base = path.parent
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ManifestError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(fields)}")
            uid, audio, peer, cond, snr = (None if f == "-" else f for f in fields)
            if uid is None or audio is None:
                raise ManifestError(f"{path}:{lineno}: id and audio path are required")
            audio_path = Path(audio)
            entries.append(ManifestEntry(uid, audio_path if audio_path.is_absolute() else base / audio_path, peer, cond, snr))
        return cls(entries, check_files)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = []
        for e in self.entries:
            try:
                audio = e.audio_path.relative_to(path.parent)
            except ValueError:
                audio = e.audio_path
            fields = [e.utterance_id, str(audio), e.stereo_peer_id, e.condition_tag, e.snr_tag]
            lines.append("\t".join("-" if f is None else f for f in fields))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Noise mixing


def power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x)) if x.size else 0.0


def measured_snr(clean, noise) -> float:
    return 10.0 * math.log10(power(clean) / power(noise))


def noise_segment(noise: np.ndarray, n: int, seed) -> np.ndarray:
    """n noise samples starting at a seeded offset, wrapping around the end when noise is short."""
    rng = np.random.default_rng(seed)
    if noise.size >= n:
        start = int(rng.integers(0, noise.size - n + 1))
        return noise[start : start + n]
    start = int(rng.integers(0, noise.size))
    return np.take(noise, np.arange(start, start + n), mode="wrap")


def mix_noise(clean: AudioBuffer, noise: AudioBuffer, snr_db: float, seed=0, clip: bool = True) -> AudioBuffer:
    """clean + g * noise_segment with utterance-level powers at the target SNR; inf returns clean."""
    if clean.sample_rate != noise.sample_rate:
        raise MixingError(f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}")
    if math.isinf(snr_db) and snr_db > 0:
        return AudioBuffer(clean.samples.copy(), clean.sample_rate)
    if not math.isfinite(snr_db):
        raise MixingError(f"invalid SNR {snr_db}")
    seg = noise_segment(noise.samples, len(clean), seed)
    p_clean, p_noise = power(clean.samples), power(seg)
    if p_clean <= 0 or p_noise <= 0:
        raise MixingError("clean and noise signals must have non-zero power")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = clean.samples + gain * seg
    if clip:
        over = float(np.mean(np.abs(mixed) > 1.0))
        if over > 0.01:
            warnings.warn(f"{100 * over:.1f}% of mixed samples clipped", RuntimeWarning, stacklevel=2)
        mixed = np.clip(mixed, -1.0, 1.0)
    return AudioBuffer(mixed, clean.sample_rate)


def parse_snr(tag) -> float:
    if tag is None or str(tag).lower() in (CLEAN, "inf", "+inf"):
        return math.inf
    return float(tag)


# ---------------------------------------------------------------------------
# Synthetic material for experiments and tests


def _resonator(freq, bw, sr):
    r = math.exp(-math.pi * bw / sr)
    theta = 2 * math.pi * freq / sr
    return [1.0 - r], [1.0, -2 * r * math.cos(theta), r * r]


def synth_speech(duration_s: float, sample_rate: int = 8000, seed=0, level: float = 0.1) -> AudioBuffer:
    """Speech-like test signal: voiced segments (glottal pulse train through
    three formant resonators), fricative segments (high-passed noise) and
    short pauses, each 60-200 ms with smooth onsets."""
    rng = np.random.default_rng(seed)
    total = int(round(duration_s * sample_rate))
    out = np.zeros(total)
    pos = 0
    while pos < total:
        n = min(total - pos, int(rng.uniform(0.06, 0.2) * sample_rate))
        kind = rng.choice(3, p=[0.6, 0.25, 0.15])
        if kind == 0:
            f0 = rng.uniform(90, 240)
            src = np.zeros(n)
            src[(np.arange(0, n, sample_rate / f0)).astype(int)] = 1.0
            seg = src
            for fc, bw in zip(sorted(rng.uniform([250, 900, 2000], [900, 2200, 3500])), (80, 120, 180)):
                b, a = _resonator(fc, bw, sample_rate)
                seg = lfilter(b, a, seg)
        elif kind == 1:
            seg = lfilter([1.0, -0.95], [1.0], rng.standard_normal(n)) * 0.3
        else:
            seg = rng.standard_normal(n) * 1e-3
        env = np.sqrt(np.abs(np.sin(np.pi * np.arange(n) / max(n - 1, 1))))
        seg = seg * env
        rms = math.sqrt(power(seg)) or 1.0
        out[pos : pos + n] = seg / rms * (level if kind != 2 else level * 0.01) * rng.uniform(0.5, 1.5)
        pos += n
    return AudioBuffer(np.clip(out, -1, 1), sample_rate)


def synth_noise(duration_s: float, sample_rate: int = 8000, seed=0, color: str = "pink", level: float = 0.05) -> AudioBuffer:
    """Stationary coloured noise ("white", "pink", "brown") or "hum" (low tones plus white noise)."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    white = rng.standard_normal(n)
    if color == "white":
        x = white
    elif color == "pink":
        # Kellet-style 1/f approximation
        x = lfilter([0.049922035, -0.095993537, 0.050612699, -0.004408786], [1, -2.494956002, 2.017265875, -0.522189400], white)
    elif color == "brown":
        x = lfilter([1.0], [1.0, -0.98], white)
    elif color == "hum":
        t = np.arange(n) / sample_rate
        x = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) / k for k, f in enumerate((100, 200, 300, 450), 1))
        x = x + 0.3 * white
    else:
        raise ValueError(f"unknown noise colour {color!r}")
    x = x / math.sqrt(power(x)) * level
    return AudioBuffer(x, sample_rate)


def make_stereo_corpus(root, n_utterances: int, snrs=(20, 10, 5, 0), noise: str = "pink", duration_s: float = 1.0,
                       sample_rate: int = 8000, seed: int = 0, condition: str = "synthetic", prefix: str = "u",
                       speech_level: float = 0.2) -> Manifest:
    """Write clean/noisy WAV pairs and a manifest; SNRs cycle over utterances.

    An infinite SNR gives a clean/clean pair tagged "inf".
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    noise_audio = synth_noise(max(4 * duration_s, 5.0), sample_rate, int(rng.integers(2**31)), noise)
    entries = []
    for i in range(n_utterances):
        snr = snrs[i % len(snrs)]
        uid = f"{prefix}{i:04d}"
        clean = synth_speech(duration_s, sample_rate, int(rng.integers(2**31)), speech_level)
        noisy = mix_noise(clean, noise_audio, float(snr), seed=int(rng.integers(2**31)))
        cpath, npath = root / "wav" / f"{uid}_clean.wav", root / "wav" / f"{uid}_noisy.wav"
        formats.write_wav(cpath, clean)
        formats.write_wav(npath, noisy)
        entries.append(ManifestEntry(f"{uid}_clean", cpath, f"{uid}_noisy", condition, CLEAN))
        entries.append(ManifestEntry(f"{uid}_noisy", npath, f"{uid}_clean", condition, str(snr)))
    manifest = Manifest(entries)
    manifest.save(root / "manifest.tsv")
    return manifest


# ---------------------------------------------------------------------------
# Feature extraction


def extract(audio: AudioBuffer, cfg: FrontendConfig, stage: Stage) -> FeatureSequence:
    stage = Stage(stage)
    if stage == Stage.LMFB:
        return extract_lmfb(audio, cfg)
    if stage == Stage.MFCC13:
        return extract_mfcc(audio, cfg)
    return extract_composite(audio, cfg)


def build_stereo_batch(manifest: Manifest, cfg: FrontendConfig, stage: Stage = Stage.MFCC13) -> list[StereoBatch]:
    out = []
    for clean_e, noisy_e in manifest.stereo_pairs():
        x = extract(formats.read_wav(clean_e.audio_path), cfg, stage)
        y = extract(formats.read_wav(noisy_e.audio_path), cfg, stage)
        if x.n_frames != y.n_frames:
            raise AlignmentError(f"pair {clean_e.utterance_id}/{noisy_e.utterance_id}: {x.n_frames} vs {y.n_frames} frames")
        out.append(StereoBatch(x.frames, y.frames, f"{clean_e.utterance_id}/{noisy_e.utterance_id}"))
    return out


def archive_path(out_dir, utt_id: str) -> Path:
    return Path(out_dir) / f"{utt_id}.rft"


def extract_corpus(manifest: Manifest, cfg: FrontendConfig, stage: Stage, out_dir, workers: int = 1) -> dict:
    """One RFT1 archive per utterance; failures are recorded and the batch continues."""
    stage = Stage(stage)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    def one(entry):
        try:
            seq = extract(formats.read_wav(entry.audio_path), cfg, stage)
            formats.write_features(archive_path(out_dir, entry.utterance_id), seq)
            return entry.utterance_id, seq.n_frames, None
        except (OSError, ValueError) as exc:
            return entry.utterance_id, 0, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, manifest.entries))
    else:
        results = [one(e) for e in manifest.entries]
    failures = [{"id": uid, "error": err} for uid, _, err in results if err]
    for f in failures:
        log.error("extraction failed for %s: %s", f["id"], f["error"])
    return {
        "stage": stage.value,
        "n_utterances": len(results),
        "n_ok": len(results) - len(failures),
        "n_failed": len(failures),
        "n_frames": int(sum(n for _, n, _ in results)),
        "failures": failures,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }


def load_archives(manifest: Manifest, features_dir, entries=None) -> dict[str, FeatureSequence]:
    return {e.utterance_id: formats.read_features(archive_path(features_dir, e.utterance_id)) for e in (entries or manifest.entries)}


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True)
