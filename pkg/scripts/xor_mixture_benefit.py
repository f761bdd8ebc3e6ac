"""Expert-count sweep on the two-cluster XOR task.

A single softmax cannot separate the XOR layout; a two-expert mixture can.
This script trains K = 1..4 on the same split and prints test accuracy,
mean NLL, and the final penalized training objective for each K.

Usage:
    python3 scripts/xor_mixture_benefit.py [--n-per-cluster 100] [--seed 7]
"""

import argparse

from sparse_moe import (
    Hyperparams,
    evaluate,
    fit,
    generate_synthetic,
    preset_spec,
    train_test_split,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-per-cluster", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--max-experts", type=int, default=4)
    parser.add_argument("--lambda-gate", type=float, default=5.0)
    parser.add_argument("--lambda-expert", type=float, default=5.0)
    args = parser.parse_args()

    dataset = generate_synthetic(
        preset_spec("two-cluster-xor", args.n_per_cluster, seed=args.seed)
    )
    train, test = train_test_split(dataset, 0.5, args.seed)
    print(f"train n={train.n}  test n={test.n}  d={train.d}")
    print(f"{'K':>2}  {'test-acc':>8}  {'test-nll':>8}  {'final-objective':>15}")
    for k in range(1, args.max_experts + 1):
        model, report = fit(
            train,
            Hyperparams(
                k=k,
                lambda_nu=args.lambda_gate,
                lambda_omega=args.lambda_expert,
                seed=args.seed,
                max_iters=30,
            ),
        )
        metrics = evaluate(model, test)
        print(
            f"{k:>2}  {metrics['accuracy']:>8.3f}  {metrics['nll']:>8.3f}"
            f"  {report.trace[-1].penalized_total:>15.2f}"
        )


if __name__ == "__main__":
    main()
