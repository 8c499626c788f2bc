"""Synthetic experiments shared by the acceptance suite and scripts/.

Every function here is deterministic given its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import compensation as comp
from . import corpus
from .frontend import FrontendConfig
from .gmm import GaussianMixture, em_fit

INF = math.inf


@dataclass(frozen=True)
class DenoisingSetup:
    n_train: int = 300
    n_test: int = 40
    duration_s: float = 2.0
    mixtures: int = 128
    em_iters: int = 20
    # multi-condition training keeps clean/clean pairs next to the noisy ones
    train_snrs: tuple = (INF, 20, 15, 10, 5, 0)
    test_snrs: tuple = (20, 10, 5, 0)
    noise: str = "pink"
    test_noise: str | None = None
    seed: int = 0
    frontend: FrontendConfig = field(default_factory=FrontendConfig)


@dataclass
class DenoisingResult:
    setup: DenoisingSetup
    models: dict
    # tag -> {"frames": n, "unprocessed": msd, <method>: msd}
    table: dict
    test_batches: dict  # tag -> StereoBatch

    def reduction(self, method: str, tag) -> float:
        row = self.table[str(tag)]
        return 100.0 * (row["unprocessed"] - row[method]) / row["unprocessed"]


def msd(estimate: np.ndarray, clean: np.ndarray) -> float:
    """Mean over frames of the squared Euclidean distance."""
    return float(np.mean(np.sum((estimate - clean) ** 2, axis=1)))


def stereo_corpus_batches(root, n, snrs, noise, seed, prefix, setup: DenoisingSetup):
    manifest = corpus.make_stereo_corpus(root, n, snrs, noise, setup.duration_s, seed=seed, prefix=prefix)
    batches = corpus.build_stereo_batch(manifest, setup.frontend, corpus.Stage.MFCC13)
    tags = [noisy.snr_tag for _, noisy in manifest.stereo_pairs()]
    return manifest, batches, tags


def denoising_experiment(root, setup: DenoisingSetup | None = None, methods=("splice", "msplice", "msplice_diag")) -> DenoisingResult:
    """Train compensation on a synthetic stereo corpus and score a held-out one per SNR tag."""
    setup = setup or DenoisingSetup()
    root = Path(root)
    _, train, _ = stereo_corpus_batches(root / "train", setup.n_train, setup.train_snrs, setup.noise, setup.seed + 1, "tr", setup)
    _, test, tags = stereo_corpus_batches(root / "test", setup.n_test, setup.test_snrs, setup.test_noise or setup.noise,
                                          setup.seed + 2, "te", setup)
    batch = comp.StereoBatch.concat(train)
    gmm = em_fit(batch.noisy, setup.mixtures, setup.em_iters, "diag", setup.seed)
    trainers = {"splice": comp.train_splice, "msplice": comp.train_msplice, "msplice_diag": comp.train_msplice_diag}
    models = {name: trainers[name](batch, gmm) for name in methods}
    by_tag: dict[str, list] = {}
    for tag, b in zip(tags, test):
        by_tag.setdefault(tag, []).append(b)
    test_batches = {tag: comp.StereoBatch.concat(bs) for tag, bs in by_tag.items()}
    table = {}
    for tag, b in test_batches.items():
        row = {"frames": len(b), "unprocessed": msd(b.noisy, b.clean)}
        for name, model in models.items():
            row[name] = msd(comp.enhance(b.noisy, model), b.clean)
        table[tag] = row
    return DenoisingResult(setup, models, table, test_batches)


def shift_adaptation(model: comp.SpliceModel, batch: comp.StereoBatch, shift: np.ndarray) -> dict:
    """Error of the unadapted and run-time adapted model on noisy features moved by `shift`."""
    shifted = batch.noisy + shift
    adapted = comp.runtime_adapt(model, shifted)
    return {
        "unprocessed": msd(shifted, batch.clean),
        "unadapted": msd(comp.enhance(shifted, model), batch.clean),
        "adapted": msd(comp.enhance(shifted, adapted), batch.clean),
    }


# ---------------------------------------------------------------------------
# Log-energy surrogate for the non-stereo correspondence experiment


@dataclass(frozen=True)
class SurrogateSetup:
    mixtures: int = 32
    dim: int = 23
    spread: float = 1.5  # std of component means in natural-log energy units
    n_train: int = 30000
    n_test: int = 20000
    snr_db: float = 10.0
    noise_jitter: float = 0.3
    seed: int = 0


def surrogate_clean_gmm(setup: SurrogateSetup) -> GaussianMixture:
    rng = np.random.default_rng(setup.seed)
    means = rng.normal(0.0, setup.spread, (setup.mixtures, setup.dim))
    return GaussianMixture(np.full(setup.mixtures, 1.0 / setup.mixtures), means, np.ones_like(means), "diag")


def add_log_noise(x: np.ndarray, clean: GaussianMixture, snr_db: float, jitter: float, rng) -> np.ndarray:
    """y = log(e^x + e^n) per channel, noise level set from the mean clean power."""
    speech_power = np.log(clean.weights @ np.exp(clean.means + 0.5 * clean.variances()))
    n = speech_power - snr_db / 10.0 * math.log(10.0) + rng.normal(0.0, jitter, x.shape)
    return np.logaddexp(x, n)


def correspondence_experiment(setup: SurrogateSetup | None = None):
    """Non-stereo training on unpaired halves, V_ij measured on held-out stereo pairs."""
    setup = setup or SurrogateSetup()
    clean = surrogate_clean_gmm(setup)
    rng = np.random.default_rng(setup.seed + 1)
    x_train = clean.sample(setup.n_train, rng)[0]
    y_train = add_log_noise(clean.sample(setup.n_train, rng)[0], clean, setup.snr_db, setup.noise_jitter, rng)
    result = comp.train_nonstereo(x_train, y_train, setup.mixtures, seed=setup.seed, return_details=True)
    x_test = clean.sample(setup.n_test, rng)[0]
    y_test = add_log_noise(x_test, clean, setup.snr_db, setup.noise_jitter, rng)
    v = comp.correspondence_matrix(result.clean_gmm, result.noisy_gmm, comp.StereoBatch(x_test, y_test))
    return v, result
