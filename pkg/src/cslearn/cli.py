"""Command-line entry point ``cslearn``.

Config files are flat ``key = value`` text, ``#`` starts a comment. Keys are
the long flag names with dashes replaced by underscores (``primal_lr``,
``n_train``, ...). Flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bounds import total_gap_certificate
from .core import DualState
from .fairness import (ExperimentConfig, PreprocessSpec, evaluate_metrics, load_and_preprocess,
                       make_fair_problem, run_experiment, synth_spec, write_synth)
from .models import Activation, MLPKind, init_params, save_checkpoint
from .optimizer import Mode, TrainConfig, train
from .verification import convex_suite


def _tuple_of(conv):
    return lambda s: tuple(conv(v.strip()) for v in s.split(",") if v.strip())


def _flag(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _maybe_int(s):
    return None if s.lower() in ("", "full", "none") else int(s)


# key -> (parser, default)
TRAINING_KEYS = {
    "train": (str, None),
    "test": (str, None),
    "out": (str, "out"),
    "c": (float, 1e-3),
    "hidden": (int, 256),
    "activation": (str, "sigmoid"),
    "epochs": (int, 300),
    "inner_steps": (int, 20),
    "primal_lr": (float, 1.0),
    "dual_lr": (float, 20.0),
    "batch_size": (_maybe_int, None),
    "seed": (int, 0),
    "threshold": (float, 0.5),
    "swap_kl": (_flag, False),
    "eps": (float, None),
    "dvc": (int, None),
    "delta": (float, 0.05),
    "mode": (str, "dual"),
    "weights": (_tuple_of(float), None),
    "numeric": (_tuple_of(str), None),
    "categorical": (_tuple_of(str), None),
    "protected": (str, None),
    "label": (str, None),
    "positive": (str, "1"),
    "group_a": (str, None),
    "d_numeric": (int, 4),
}


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SystemExit(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        if key not in TRAINING_KEYS:
            raise SystemExit(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _resolve(args) -> dict:
    raw = read_config(args.config) if getattr(args, "config", None) else {}
    opts = {}
    for key, (conv, default) in TRAINING_KEYS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = flag
        elif key in raw:
            opts[key] = conv(raw[key])
        else:
            opts[key] = default
    if opts["train"] is None:
        raise SystemExit("a training CSV is required (--train or 'train' in the config)")
    return opts


def _spec(opts) -> PreprocessSpec:
    """Column roles from the options; the synthetic layout when none are given."""
    spec = synth_spec(opts["d_numeric"])
    if opts["numeric"] is not None or opts["categorical"] is not None or opts["protected"]:
        spec = PreprocessSpec(opts["numeric"] or (), opts["categorical"] or (),
                              opts["protected"] or "z", "y", group_a=None)
    return replace(spec, label=opts["label"] or spec.label, positive=opts["positive"],
                   group_a=opts["group_a"] or spec.group_a)


def _experiment_config(opts) -> ExperimentConfig:
    return ExperimentConfig(
        train_csv=opts["train"], test_csv=opts["test"], spec=_spec(opts), c=opts["c"],
        hidden=opts["hidden"], activation=Activation(opts["activation"]), epochs=opts["epochs"],
        inner_steps=opts["inner_steps"], primal_lr=opts["primal_lr"], dual_lr=opts["dual_lr"],
        batch_size=opts["batch_size"], seed=opts["seed"], threshold=opts["threshold"],
        swap_kl=opts["swap_kl"], epsilon=opts["eps"], vc_dim=opts["dvc"], delta=opts["delta"])


def cmd_experiment(args) -> int:
    opts = _resolve(args)
    result = run_experiment(_experiment_config(opts), Path(opts["out"]))
    sys.stdout.write(result.report())
    return 0


def cmd_train(args) -> int:
    opts = _resolve(args)
    cfg = _experiment_config(opts)
    train_data, test_data, _ = load_and_preprocess(cfg.train_csv, cfg.test_csv, cfg.spec, cfg.seed)
    problem = make_fair_problem(cfg.c, cfg.swap_kl)
    mode = Mode(opts["mode"])
    tc = TrainConfig(cfg.epochs, cfg.inner_steps, cfg.primal_lr, cfg.dual_lr, cfg.batch_size,
                     cfg.seed, mode=mode, weights=opts["weights"])
    model = init_params(MLPKind(cfg.hidden, cfg.activation), train_data.dimension, cfg.seed)

    def metrics(mdl):
        fm = evaluate_metrics(mdl, test_data, cfg.threshold)
        return fm.accuracy, fm.fairness

    trained, duals, log = train(problem, model, train_data, tc, metrics)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    log.write_csv(out / f"{mode.value}.csv")
    save_checkpoint(trained, out / "model.ckpt")
    last = log.records[-1]
    print(f"epochs = {len(log)}")
    print(f"objective = {last.objective:.12g}")
    print(f"slack_0 = {last.slacks[0]:.12g}")
    if duals is not None:
        print(f"lambda_0 = {duals.lambdas[0]:.12g}")
    print(f"accuracy = {last.accuracy:.12g}")
    print(f"fairness = {last.fairness:.12g}")
    return 0


def cmd_synth(args) -> int:
    n_test = args.n_test if args.n_test is not None else max(10, args.n_train // 2)
    tr, te = write_synth(args.out, args.n_train, n_test, args.d_numeric, args.bias, args.seed)
    print(tr)
    print(te)
    return 0


def cmd_bounds(args) -> int:
    cert = total_gap_certificate(args.B, args.N, args.dvc, args.delta, args.L, args.eps,
                                 DualState([args.lambda_l1]), lambda_source="user")
    sys.stdout.write(cert.to_text())
    return 0


def cmd_verify(args) -> int:
    if args.suite != "convex":
        raise SystemExit(f"unknown suite {args.suite!r}")
    failed = 0
    for line in convex_suite(args.seeds):
        print(line.format(), flush=True)
        failed += not line.passed
    return 1 if failed else 0


def _add_training_flags(p):
    p.add_argument("--config")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--out")
    p.add_argument("--c", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--activation", choices=["sigmoid", "relu", "tanh"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--inner-steps", dest="inner_steps", type=int)
    p.add_argument("--primal-lr", dest="primal_lr", type=float)
    p.add_argument("--dual-lr", dest="dual_lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=_maybe_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--swap-kl", dest="swap_kl", action="store_const", const=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--dvc", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--weights", type=_tuple_of(float))
    p.add_argument("--numeric", type=_tuple_of(str))
    p.add_argument("--categorical", type=_tuple_of(str))
    p.add_argument("--protected")
    p.add_argument("--label")
    p.add_argument("--positive")
    p.add_argument("--group-a", dest="group_a")
    p.add_argument("--d-numeric", dest="d_numeric", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cslearn", description="Constrained statistical learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one arm on a fairness problem")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="unconstrained vs constrained comparison")
    _add_training_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="write synthetic Adult-layout train/test CSVs")
    p.add_argument("--n-train", dest="n_train", type=int, required=True)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--d-numeric", dest="d_numeric", type=int, default=4)
    p.add_argument("--bias", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bounds", help="empirical duality gap certificate")
    p.add_argument("--B", type=float, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--dvc", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--lambda-l1", dest="lambda_l1", type=float, required=True)
    p.add_argument("--L", type=float, default=1.0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="oracle checks on generated convex instances")
    p.add_argument("--suite", default="convex")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
