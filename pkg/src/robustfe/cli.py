"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 partial data
failure, 3 numerical failure.  JSON summaries go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import compensation as comp
from . import corpus, formats, heq, nmf
from .config import RunConfig, load_config
from .frontend import ConfigError, FeatureKind, FeatureSequence
from .gmm import GaussianMixture, em_fit

log = logging.getLogger("robustfe")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _emit(summary: dict):
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))


def _archive_files(inputs) -> list[Path]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*.rft")))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"no such archive or directory: {p}")
    if not files:
        raise UsageError("no feature archives given")
    return files


def _read_archives(inputs, kind: FeatureKind | None = None) -> list[tuple[Path, FeatureSequence]]:
    out = []
    for f in _archive_files(inputs):
        seq = formats.read_features(f)
        if kind is not None and seq.kind != kind:
            raise UsageError(f"{f}: expected {kind.name} archives, got {seq.kind.name}")
        out.append((f, seq))
    return out


def _out_dir(args) -> Path:
    if args.out_dir is None:
        raise UsageError("--out-dir is required for this command")
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _out_file(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return _out_dir(args) / default_name


def _stereo_manifest(args) -> corpus.Manifest:
    manifest = corpus.Manifest.load(args.manifest)
    if not manifest.is_stereo:
        raise UsageError(f"{args.manifest} is not a stereo manifest (every entry needs a stereo peer)")
    return manifest


def _stereo_batches(args, cfg: RunConfig) -> list[comp.StereoBatch]:
    manifest = _stereo_manifest(args)
    batches = []
    for clean_e, noisy_e in manifest.stereo_pairs():
        x = formats.read_features(corpus.archive_path(args.features, clean_e.utterance_id))
        y = formats.read_features(corpus.archive_path(args.features, noisy_e.utterance_id))
        if x.frames.shape != y.frames.shape:
            raise corpus.AlignmentError(f"pair {clean_e.utterance_id}/{noisy_e.utterance_id}: {x.frames.shape} vs {y.frames.shape}")
        batches.append(comp.StereoBatch(x.frames, y.frames, f"{clean_e.utterance_id}/{noisy_e.utterance_id}"))
    return batches


def _noisy_gmm(args, cfg: RunConfig, noisy: np.ndarray) -> GaussianMixture:
    if getattr(args, "gmm", None):
        return GaussianMixture.load(args.gmm)
    return em_fit(noisy, cfg.gmm.mixtures, cfg.gmm.em_iters, cfg.gmm.covariance_kind, cfg.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args, cfg: RunConfig) -> int:
    manifest = corpus.Manifest.load(args.manifest)
    summary = corpus.extract_corpus(manifest, cfg.frontend, corpus.Stage(args.stage), _out_dir(args), cfg.workers)
    summary["seed"] = cfg.seed
    _emit(summary)
    return EXIT_PARTIAL if summary["n_failed"] else EXIT_OK


def cmd_mix(args, cfg: RunConfig) -> int:
    clean = formats.read_wav(args.clean)
    noise = formats.read_wav(args.noise)
    snr = corpus.parse_snr(args.snr)
    noisy = corpus.mix_noise(clean, noise, snr, seed=cfg.seed)
    formats.write_wav(args.out, noisy)
    resid = noisy.samples - clean.samples
    measured = corpus.measured_snr(clean.samples, resid) if corpus.power(resid) > 0 else float("inf")
    _emit({"out": args.out, "target_snr_db": snr, "measured_snr_db": measured, "seed": cfg.seed})
    return EXIT_OK


def _train_matrix(archives) -> np.ndarray:
    return np.vstack([seq.frames for _, seq in archives]).T


def cmd_nmf(args, cfg: RunConfig) -> int:
    c = cfg.nmf
    if args.nmf_cmd in ("train-plain", "train-robustw"):
        archives = _read_archives(args.archives, FeatureKind.LMFB)
        v = _train_matrix(archives)
        out = _out_file(args, "dictionary.rftw")
        if args.nmf_cmd == "train-plain":
            dictionary, h = nmf.learn_dictionary(v, c.rank, c.iters, cfg.seed, c.tol)
            final = dictionary.trace[-1]
        else:
            res = nmf.robustw_train(v, c.rank, c.iters, c.n_quantiles, cfg.seed)
            dictionary, h = res.dictionary, res.activations
            final = nmf.kl_divergence(v, dictionary, h)
        dictionary.save(out)
        _emit({
            "command": f"nmf {args.nmf_cmd}", "dictionary": str(out), "rank": c.rank, "iterations": dictionary.iterations_trained,
            "n_frames": v.shape[1], "divergence": final, "relative_divergence": final / float(v.sum()), "seed": cfg.seed,
        })
        return EXIT_OK
    dictionary = nmf.Dictionary.load(args.dictionary)
    out_dir = _out_dir(args)
    total = 0.0
    per = {}
    for path, seq in _read_archives(args.archives, FeatureKind.LMFB):
        mfcc, div = nmf.project_utterance(seq, dictionary, c.project_iters, cfg.frontend)
        formats.write_features(out_dir / path.name, mfcc)
        per[path.stem] = {"frames": seq.n_frames, "divergence": div}
        total += div
    _emit({"command": "nmf apply", "divergence": total, "utterances": per})
    return EXIT_OK


def cmd_heq(args, cfg: RunConfig) -> int:
    archives = _read_archives(args.archives)
    if args.heq_cmd == "build":
        frames = np.vstack([seq.frames for _, seq in archives])
        tables = heq.build_tables(frames, cfg.heq.n_quantiles)
        out = _out_file(args, "reference.rftq")
        heq.save_tables(out, tables)
        _emit({"command": "heq build", "tables": str(out), "n_dims": len(tables), "n_quantiles": cfg.heq.n_quantiles, "n_frames": frames.shape[0]})
        return EXIT_OK
    reference = heq.load_tables(args.tables)
    test_tables = heq.load_tables(args.test_tables) if args.test_tables else None
    mode = "given" if test_tables is not None else cfg.heq.mode
    out_dir = _out_dir(args)
    skipped = []
    for path, seq in archives:
        try:
            eq = heq.equalize_sequence(seq, reference, mode, test_tables)
        except heq.EstimationError:
            skipped.append(path.stem)
            eq = seq
        formats.write_features(out_dir / path.name, eq)
    _emit({"command": "heq apply", "n_utterances": len(archives), "passed_through": skipped})
    return EXIT_OK


def cmd_gmm(args, cfg: RunConfig) -> int:
    frames = np.vstack([seq.frames for _, seq in _read_archives(args.archives)])
    g, trace = em_fit(frames, cfg.gmm.mixtures, cfg.gmm.em_iters, cfg.gmm.covariance_kind, cfg.seed, return_trace=True)
    out = _out_file(args, "gmm.rftg")
    g.save(out)
    _emit({"command": "gmm fit", "gmm": str(out), "mixtures": g.n_mixtures, "dim": g.dim, "n_frames": frames.shape[0],
           "log_likelihood_per_frame": trace[-1] / frames.shape[0], "seed": cfg.seed})
    return EXIT_OK


_TRAINERS = {
    "train": comp.train_splice,
    "train-m": comp.train_msplice,
    "train-m-diag": comp.train_msplice_diag,
}


def cmd_splice(args, cfg: RunConfig) -> int:
    sub = args.splice_cmd
    if sub in _TRAINERS:
        batch = comp.StereoBatch.concat(_stereo_batches(args, cfg))
        model = _TRAINERS[sub](batch, _noisy_gmm(args, cfg, batch.noisy))
        out = _out_file(args, "splice.rfts")
        model.save(out)
        _emit({"command": f"splice {sub}", "model": str(out), "kind": model.kind.name, "mixtures": model.n_mixtures,
               "n_frames": len(batch), "seed": cfg.seed})
        return EXIT_OK
    if sub == "train-nonstereo":
        clean = np.vstack([s.frames for _, s in _read_archives(args.clean)])
        noisy = np.vstack([s.frames for _, s in _read_archives(args.noisy)])
        given = GaussianMixture.load(args.gmm) if args.gmm else None
        model = comp.train_nonstereo(clean, noisy, cfg.gmm.mixtures, cfg.gmm.em_iters, cfg.splice.refine_iters, cfg.seed, noisy_gmm=given)
        out = _out_file(args, "nonstereo.rfts")
        model.save(out)
        _emit({"command": "splice train-nonstereo", "model": str(out), "mixtures": model.n_mixtures,
               "n_clean_frames": clean.shape[0], "n_noisy_frames": noisy.shape[0], "seed": cfg.seed})
        return EXIT_OK
    model = comp.SpliceModel.load(args.model)
    if sub == "enhance":
        out_dir = _out_dir(args)
        archives = _read_archives(args.archives)
        for path, seq in archives:
            formats.write_features(out_dir / path.name, FeatureSequence(comp.enhance(seq.frames, model), seq.kind, seq.frame_period_ms))
        _emit({"command": "splice enhance", "n_utterances": len(archives)})
        return EXIT_OK
    return _splice_adapt(args, cfg, model)


def _splice_adapt(args, cfg: RunConfig, model: comp.SpliceModel) -> int:
    manifest = corpus.Manifest.load(args.manifest)
    entries = [e for e in manifest if not e.is_clean]
    out_dir = _out_dir(args)
    groups = []
    for (cond, snr), members in manifest.groups(entries).items():
        seqs = {e.utterance_id: formats.read_features(corpus.archive_path(args.features, e.utterance_id)) for e in members}
        frames = np.vstack([s.frames for s in seqs.values()])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            adapted = comp.runtime_adapt(model, frames, cfg.splice.use_adapted_posteriors)
        skipped = adapted is model
        for w in caught:
            log.warning("%s/%s: %s", cond, snr, w.message)
        adapted.save(out_dir / "models" / f"{cond}_{snr}.rfts")
        for uid, seq in seqs.items():
            formats.write_features(corpus.archive_path(out_dir, uid), FeatureSequence(comp.enhance(seq.frames, adapted), seq.kind, seq.frame_period_ms))
        groups.append({"condition": cond, "snr": snr, "n_utterances": len(seqs), "n_frames": frames.shape[0],
                       "status": "skipped" if skipped else "adapted"})
    _emit({"command": "splice adapt", "groups": groups})
    return EXIT_OK


def _msd(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.sum((a - b) ** 2, axis=1))) if a.size else 0.0


def cmd_eval(args, cfg: RunConfig) -> int:
    manifest = corpus.Manifest.load(args.manifest)
    noisy_dir = args.noisy_dir or args.clean_dir
    rows: dict[tuple[str, str], dict] = {}
    for clean_e, noisy_e in manifest.stereo_pairs():
        x = formats.read_features(corpus.archive_path(args.clean_dir, clean_e.utterance_id)).frames
        y = formats.read_features(corpus.archive_path(noisy_dir, noisy_e.utterance_id)).frames
        p = formats.read_features(corpus.archive_path(args.processed_dir, noisy_e.utterance_id)).frames
        if not (x.shape == y.shape == p.shape):
            raise UsageError(f"shape mismatch for {noisy_e.utterance_id}: clean {x.shape}, noisy {y.shape}, processed {p.shape}")
        r = rows.setdefault(noisy_e.group, {"frames": 0, "processed": 0.0, "noisy": 0.0})
        r["frames"] += x.shape[0]
        r["processed"] += float(np.sum((p - x) ** 2))
        r["noisy"] += float(np.sum((y - x) ** 2))
    report = []
    for (cond, snr), r in sorted(rows.items()):
        n = max(r["frames"], 1)
        processed, noisy = r["processed"] / n, r["noisy"] / n
        reduction = 100.0 * (noisy - processed) / noisy if noisy > 0 else 0.0
        report.append({"condition": cond, "snr": snr, "frames": r["frames"], "msd_processed": processed, "msd_unprocessed": noisy, "reduction_pct": reduction})
    print(f"{'condition':<14}{'snr':>8}{'frames':>9}{'unprocessed':>14}{'processed':>12}{'reduction%':>12}", file=sys.stderr)
    for row in report:
        print(f"{row['condition']:<14}{row['snr']:>8}{row['frames']:>9}{row['msd_unprocessed']:>14.4f}{row['msd_processed']:>12.4f}{row['reduction_pct']:>12.2f}", file=sys.stderr)
    _emit({"command": "eval", "rows": report})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robustfe", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="text file of 'section.key = value' lines")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field (repeatable)")
    p.add_argument("--seed", type=int, help="root seed for all randomness")
    p.add_argument("--workers", type=int, help="parallel utterance workers")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("extract", help="extract feature archives for every manifest entry")
    e.add_argument("--manifest", required=True)
    e.add_argument("--stage", choices=[s.value for s in corpus.Stage], default="mfcc13")

    m = sub.add_parser("mix", help="mix noise into clean audio at a target SNR")
    m.add_argument("--clean", required=True)
    m.add_argument("--noise", required=True)
    m.add_argument("--snr", required=True, help="dB, or 'clean'")
    m.add_argument("--out", required=True)

    n = sub.add_parser("nmf", help="NMF dictionaries and subspace projection")
    nsub = n.add_subparsers(dest="nmf_cmd", required=True, parser_class=_Parser)
    for name in ("train-plain", "train-robustw"):
        t = nsub.add_parser(name)
        t.add_argument("archives", nargs="+")
        t.add_argument("--out")
    a = nsub.add_parser("apply")
    a.add_argument("archives", nargs="+")
    a.add_argument("--dictionary", required=True)

    h = sub.add_parser("heq", help="histogram equalisation tables")
    hsub = h.add_subparsers(dest="heq_cmd", required=True, parser_class=_Parser)
    b = hsub.add_parser("build")
    b.add_argument("archives", nargs="+")
    b.add_argument("--out")
    ap = hsub.add_parser("apply")
    ap.add_argument("archives", nargs="+")
    ap.add_argument("--tables", required=True)
    ap.add_argument("--test-tables", help="fixed test-side tables instead of per-utterance ones")

    g = sub.add_parser("gmm", help="Gaussian mixtures")
    gsub = g.add_subparsers(dest="gmm_cmd", required=True, parser_class=_Parser)
    f = gsub.add_parser("fit")
    f.add_argument("archives", nargs="+")
    f.add_argument("--out")

    s = sub.add_parser("splice", help="SPLICE-family compensation")
    ssub = s.add_subparsers(dest="splice_cmd", required=True, parser_class=_Parser)
    for name in _TRAINERS:
        t = ssub.add_parser(name)
        t.add_argument("--manifest", required=True)
        t.add_argument("--features", required=True, help="directory of <id>.rft archives")
        t.add_argument("--gmm", help="pre-trained noisy GMM (RFTG)")
        t.add_argument("--out")
    ns = ssub.add_parser("train-nonstereo")
    ns.add_argument("--clean", nargs="+", required=True)
    ns.add_argument("--noisy", nargs="+", required=True)
    ns.add_argument("--gmm")
    ns.add_argument("--out")
    en = ssub.add_parser("enhance")
    en.add_argument("archives", nargs="+")
    en.add_argument("--model", required=True)
    ad = ssub.add_parser("adapt")
    ad.add_argument("--model", required=True)
    ad.add_argument("--manifest", required=True)
    ad.add_argument("--features", required=True)

    ev = sub.add_parser("eval", help="feature distance to clean per condition and SNR")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--clean-dir", required=True)
    ev.add_argument("--processed-dir", required=True)
    ev.add_argument("--noisy-dir")
    return p


_COMMANDS = {"extract": cmd_extract, "mix": cmd_mix, "nmf": cmd_nmf, "heq": cmd_heq, "gmm": cmd_gmm, "splice": cmd_splice, "eval": cmd_eval}


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.workers is not None:
        out["workers"] = str(args.workers)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, corpus.ManifestError, formats.FormatError, corpus.AlignmentError, TypeError) as exc:
        print(f"robustfe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (comp.StatisticsError, nmf.DegenerateDictionaryError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"robustfe: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"robustfe: data error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
