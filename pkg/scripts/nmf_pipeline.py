"""LMFB -> NMF (plain and robust-W) -> projected MFCC on a synthetic stereo corpus.

    python scripts/nmf_pipeline.py --work /tmp/nmfdemo

Trains both dictionaries on clean LMFB features, projects the noisy test
features on each, and prints the cepstral distance to the clean MFCCs next to
the unprocessed distance.  The clean side is projected too, so both sides of
the comparison live in the same subspace.
"""

import argparse

import numpy as np

from robustfe import corpus, nmf
from robustfe.experiments import msd
from robustfe.frontend import FeatureKind, FeatureSequence, FrontendConfig, dct_and_lifter


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", required=True)
    p.add_argument("--rank", type=int, default=20)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    cfg = FrontendConfig()
    train = corpus.make_stereo_corpus(f"{args.work}/train", 40, snrs=(10,), duration_s=1.0, seed=args.seed + 1, prefix="tr")
    test = corpus.make_stereo_corpus(f"{args.work}/test", 12, snrs=(20, 10, 5, 0), duration_s=1.0, seed=args.seed + 2, prefix="te")
    clean_lmfb = np.vstack([b.clean for b in corpus.build_stereo_batch(train, cfg, corpus.Stage.LMFB)]).T

    plain, _ = nmf.learn_dictionary(clean_lmfb, args.rank, args.iters, args.seed)
    robust = nmf.robustw_train(clean_lmfb, args.rank, args.iters, seed=args.seed).dictionary
    print(f"clean LMFB matrix {clean_lmfb.shape}, rank {args.rank}, {args.iters} iterations")

    pairs = test.stereo_pairs()
    batches = corpus.build_stereo_batch(test, cfg, corpus.Stage.LMFB)
    rows = {}
    for (_, noisy_e), b in zip(pairs, batches):
        x = FeatureSequence(b.clean, FeatureKind.LMFB)
        y = FeatureSequence(b.noisy, FeatureKind.LMFB)
        ref = dct_and_lifter(x, cfg).frames
        row = rows.setdefault(noisy_e.snr_tag, {"unprocessed": [], "plain": [], "robustw": []})
        row["unprocessed"].append(msd(dct_and_lifter(y, cfg).frames, ref) * len(ref))
        for name, d in (("plain", plain), ("robustw", robust)):
            cx, _ = nmf.project_utterance(x, d, args.iters, cfg)
            cy, _ = nmf.project_utterance(y, d, args.iters, cfg)
            row[name].append(msd(cy.frames, cx.frames) * len(ref))
    print(f"{'snr':>5}{'unprocessed':>14}{'plain':>10}{'robustw':>10}")
    for tag in sorted(rows, key=lambda t: -float(t)):
        r = rows[tag]
        n = sum(len(b.clean) for (_, e), b in zip(pairs, batches) if e.snr_tag == tag)
        print(f"{tag:>5}" + "".join(f"{sum(r[k]) / n:>{w}.2f}" for k, w in (("unprocessed", 14), ("plain", 10), ("robustw", 10))))


if __name__ == "__main__":
    main()
