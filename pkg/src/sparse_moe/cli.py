"""Command-line surface: train / predict / evaluate / inspect / synth.

Exit codes: 0 success, 2 usage or configuration, 3 data or model problems,
4 numeric failures during training.  Progress goes to stdout, diagnostics
to stderr, machine-readable artifacts only to --out paths.

Note: the lambda flags are L1 *radii* (hard constraint budgets), not
penalty multipliers.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .data import (
    PRESETS,
    generate_synthetic,
    load_dataset,
    preset_spec,
    save_dataset,
)
from .errors import ConfigError, DataError, DimensionError, SolverError, TrainingError
from .model import Hyperparams, load_model, save_model
from .trainer import _expert_class_probs, _gate_probs, _selector_norm1, evaluate, fit
from .model import prepare_inputs

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    """Flat bag of per-command options resolved from the parsed flags."""

    data: str | None = None
    model_in: str | None = None
    model_out: str | None = None
    report_out: str | None = None
    out: str | None = None
    selector_policy: str = "ones"
    threshold: float = 1e-6
    hyper: Hyperparams | None = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparse-moe",
        description="Train and run regularized mixture-of-experts classifiers "
        "with embedded L1 feature selection and per-instance expert selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a model on a delimited data file")
    train.add_argument("--data", required=True)
    train.add_argument("--experts", type=int, required=True)
    train.add_argument("--lambda-gate", type=float, required=True)
    train.add_argument("--lambda-expert", type=float, required=True)
    train.add_argument("--selector", choices=["none", "l0", "l1"], default="none")
    train.add_argument("--lambda-mu", type=float, default=None)
    train.add_argument("--iters", type=int, default=30)
    train.add_argument("--tol", type=float, default=1e-6)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--schedule", choices=["full", "fast"], default="full")
    train.add_argument("--model-out", required=True)
    train.add_argument("--report-out", default=None)

    predict = sub.add_parser("predict", help="write per-instance label and probabilities")
    predict.add_argument("--model", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument(
        "--selector-policy", choices=["ones", "gate-surrogate"], default="ones"
    )
    predict.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="print accuracy and mean NLL")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument(
        "--selector-policy", choices=["ones", "gate-surrogate"], default="ones"
    )

    inspect = sub.add_parser("inspect", help="list surviving feature indices")
    inspect.add_argument("--model", required=True)
    inspect.add_argument("--threshold", type=float, default=1e-6)
    inspect.add_argument("--report", default=None)

    synth = sub.add_parser("synth", help="write a synthetic dataset file")
    synth.add_argument("--preset", required=True)
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--noise-dims", type=int, default=0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    return parser


def cmd_train(args) -> int:
    hyper = Hyperparams(
        k=args.experts,
        lambda_nu=args.lambda_gate,
        lambda_omega=args.lambda_expert,
        lambda_mu=args.lambda_mu,
        selector_mode=args.selector,
        max_iters=args.iters,
        tol=args.tol,
        seed=args.seed,
        schedule=args.schedule,
    ).validate()
    dataset = load_dataset(args.data)
    model, report = fit(dataset, hyper)
    for rec in report.trace:
        print(f"iter={rec.iteration} obj={rec.penalized_total:.6f}")
    save_model(model, args.model_out)
    if args.report_out:
        report.save(args.report_out)
    return EXIT_OK


def _policy_mu(model, x_mat, policy):
    n = x_mat.shape[0]
    if policy == "ones":
        return np.ones((n, model.k))
    if model.hyper.lambda_mu is None:
        raise ConfigError("gate-surrogate policy requires a model with lambda_mu")
    h = _gate_probs(model.gate.nu, x_mat, np.ones((n, model.k)))
    return _selector_norm1(model.gate.nu, x_mat, h, model.hyper.lambda_mu)


def cmd_predict(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    if dataset.d != model.d or dataset.q != model.q:
        raise DataError(
            f"model expects d={model.d}, q={model.q}; data has d={dataset.d}, q={dataset.q}"
        )
    x_mat = prepare_inputs(dataset.features, model.scaler)
    mu = _policy_mu(model, x_mat, args.selector_policy)
    h = _gate_probs(model.gate.nu, x_mat, mu)
    full = _expert_class_probs(model.experts.omega, x_mat)
    probs = np.einsum("nqk,nk->nq", full, h)
    lines = []
    for row in probs:
        label = dataset.label_names[int(np.argmax(row))]
        lines.append(label + " " + " ".join(f"{p:.9g}" for p in row))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    if dataset.d != model.d or dataset.q != model.q:
        raise DataError(
            f"model expects d={model.d}, q={model.q}; data has d={dataset.d}, q={dataset.q}"
        )
    metrics = evaluate(model, dataset, args.selector_policy)
    print(f"accuracy={metrics['accuracy']:.6f} nll={metrics['nll']:.6f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    thr = args.threshold
    nu = model.gate.nu
    omega = model.experts.omega
    for i in range(model.k):
        alive = [str(j) for j in range(model.d) if abs(nu[i, j]) > thr]
        print(f"gate[{i}]: " + " ".join(alive))
    for l in range(model.q):
        for i in range(model.k):
            alive = [str(j) for j in range(model.d) if abs(omega[l, i, j]) > thr]
            print(f"expert[class={l},expert={i}]: " + " ".join(alive))
    weights = np.concatenate(
        [np.abs(nu[:, :-1]).ravel(), np.abs(omega[:, :, :-1]).ravel()]
    )
    print(f"sparsity={float(np.mean(weights < thr)):.6f}")
    if args.report:
        import json

        doc = json.loads(open(args.report, encoding="utf-8").read())
        hist = doc.get("selector_histogram", {})
        parts = " ".join(f"{k}:{v}" for k, v in sorted(hist.items()))
        print(f"active-experts-histogram: {parts}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = preset_spec(args.preset, args.n, noise_dims=args.noise_dims, seed=args.seed)
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out)
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    # SPARSE_MOE_THREADS caps worker counts; current build runs sequentially
    # (results are index-ordered, so this is observationally identical).
    threads = os.environ.get("SPARSE_MOE_THREADS")
    if threads is not None:
        try:
            if int(threads) < 1:
                raise ValueError
        except ValueError:
            print(f"invalid SPARSE_MOE_THREADS={threads!r}", file=sys.stderr)
            return EXIT_USAGE
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, SolverError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
