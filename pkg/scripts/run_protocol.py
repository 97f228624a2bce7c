"""Run the full 10-repetition protocol on the default synthetic profile.

Uses the quick per-learner training settings and learners up to 64 px, which is
the same run the acceptance suite checks. Results land in ``--out``.

    python scripts/run_protocol.py --out runs/protocol --reps 10
"""
import argparse
import logging
import time

from stackderm import pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/protocol")
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-resolution", type=int, default=64)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = pipeline.ExperimentConfig(n_repetitions=args.reps, master_seed=args.seed,
                                    max_resolution=args.max_resolution,
                                    train=pipeline.quick_train_configs(),
                                    workers=pipeline.env_workers())
    t0 = time.perf_counter()
    agg = pipeline.run_experiment(cfg, args.out)
    print(pipeline.render_table(agg))
    print(f"wall time {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
