#!/usr/bin/env python3
"""End-to-end trade-off experiment on synthetic data.

Generates a corpus, trains the frame model and the arbitrator, sweeps
operating points for all three first-pass configurations and writes curves,
frontiers and plots under the output directory.  Everything is seeded, so
re-runs reproduce the same artifacts.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from endgate.arbitrator import train_arbitrator
from endgate.corpus import GenConfig, generate_corpus, save_corpus, split_corpus
from endgate.evaluation import report_text
from endgate.firstpass import DecoderSim, train_frame_model
from endgate.nnkit import TrainConfig
from endgate.sweep import (SweepGrids, baseline_anchor, emit_curves,
                           matched_pairs, precompute_corpus, run_sweep)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/demo", help="output directory")
    parser.add_argument("--seed", type=int, default=101)
    parser.add_argument("--quick", action="store_true",
                        help="smaller corpus and coarser grids")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scale = 0.25 if args.quick else 1.0
    gen = GenConfig(seed=args.seed,
                    n_complete=int(840 * scale),
                    n_hesitation=int(630 * scale),
                    n_incomplete=int(630 * scale))
    print(f"generating {gen.n_complete + gen.n_hesitation + gen.n_incomplete} utterances")
    corpus = generate_corpus(gen)
    train, dev, test = split_corpus(corpus, (0.38, 0.10, 0.52), seed=args.seed + 1)
    save_corpus(test, out / "test-corpus")

    t0 = time.time()
    frame_model = train_frame_model(
        train, TrainConfig(learning_rate=0.05, epochs=2, batch_size=64,
                           seed=args.seed + 2))
    frame_model.save(out / "frame.ckpt")
    print(f"frame model trained in {time.time() - t0:.0f}s")

    sim = DecoderSim(seed=args.seed + 3)
    t0 = time.time()
    arbitrator = train_arbitrator(
        train, frame_model, sim,
        TrainConfig(learning_rate=0.05, epochs=3, batch_size=32,
                    seed=args.seed + 4))
    arbitrator.save(out / "arbitrator.ckpt")
    print(f"arbitrator trained in {time.time() - t0:.0f}s")

    step = 0.02 if args.quick else 0.005
    grids = SweepGrids(
        t_ep=tuple(round(v, 3) for v in np.arange(0.30, 0.9001, step)),
        eos_scale=tuple(round(v, 4) for v in np.geomspace(0.5, 4.0, 13)))

    precomputed = precompute_corpus(test, frame_model, sim)
    for first_pass in ("both", "acoustic_only", "e2e_only"):
        t0 = time.time()
        points = run_sweep(test, frame_model, sim, arbitrator, grids,
                           first_pass, precomputed=precomputed)
        anchor = baseline_anchor(points, grids)
        emit_curves(points, out / first_pass, anchor)
        base = [p for p in points if p.kind == "baseline"]
        arbs = [p for p in points if p.kind == "arbitrated"]
        pairs = matched_pairs(base, arbs)
        best = min((100.0 * (a.eepr - b.eepr) / b.eepr
                    for b, a in pairs if b.eepr > 0), default=float("nan"))
        print(f"{first_pass}: {len(points)} points, {len(pairs)} matched pairs, "
              f"best EEPR reduction {best:.1f}% ({time.time() - t0:.0f}s)")
        print("  anchor baseline report:")
        for line in report_text(anchor.report).splitlines():
            print("   ", line)
    print(f"outputs under {out}")


if __name__ == "__main__":
    main()
