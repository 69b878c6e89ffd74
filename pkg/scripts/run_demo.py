#!/usr/bin/env python3
"""Run the two-arm synthetic long-tail experiment once and print the summary.

Equivalent to `tailkit demo`, kept as a script for quick iteration on
hyperparameters without touching the CLI defaults.
"""

import argparse
import json

from tailkit.loss import DbLossParams
from tailkit.sampler import SamplerConfig
from tailkit.trainer import SynthSpec, run_comparison


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--n-samples", type=int, default=4000)
    parser.add_argument("--n-classes", type=int, default=20)
    parser.add_argument("--feature-dim", type=int, default=32)
    parser.add_argument("--exponent", type=float, default=1.5)
    parser.add_argument("--noise-std", type=float, default=0.5)
    parser.add_argument("--lr", type=float, default=0.5)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--kappa", type=float, default=0.1)
    parser.add_argument("--threshold", type=float, default=0.05)
    args = parser.parse_args()

    spec = SynthSpec(
        n_samples=args.n_samples,
        n_classes=args.n_classes,
        feature_dim=args.feature_dim,
        power_law_exponent=args.exponent,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    summary, _, _ = run_comparison(
        spec,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        db_params=DbLossParams(alpha=args.alpha, margin_scale=args.kappa),
        sampler_cfg=SamplerConfig(threshold=args.threshold, r_max=10.0, seed=args.seed),
    )
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
