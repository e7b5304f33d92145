"""Command line interface.

Exit codes: 0 success, 1 invalid input (bad flags, missing files, bad
config), 2 numerical failure (diverged training, singular solves).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, bounds, klog, kreg
from .experiments import (CLASSIFICATION, REGRESSION, ConfigError, ExperimentConfig, run_experiment,
                          summarize)
from .grids import Grid2DPair, LabelField
from .kernels import feature_map, kernel_gram, kernel_rows
from .nn import DivergedTraining, Mlp, init_mlp, sigmoid, train_adam
from .ntk import write_matrix_csv

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _global_flags(parser, default):
    parser.add_argument("--seed", type=int, default=default, help="random seed (overrides config seeds)")
    parser.add_argument("--out-dir", default=default, help="directory for outputs (default: current)")
    parser.add_argument("--config", default=default, help="experiment config JSON")


def build_parser():
    parser = _Parser(prog="nnkernels", description="Neural tangent and conjugate kernels of small MLPs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, None)
    common = _Parser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    task = _Parser(add_help=False)
    task.add_argument("--task", choices=[REGRESSION, CLASSIFICATION], help="task when no config is given")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common, task], help="train a network and write its checkpoint JSON")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("kernel", parents=[common, task], help="write a Gram or feature matrix as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=["ntk", "ck", "e"], default="ntk")
    p.add_argument("--algorithm", choices=["backward", "forward", "auto"], default="auto")
    p.add_argument("--nodes", help="CSV of nodes (header row, one node per row); default training nodes")
    p.add_argument("--features", action="store_true", help="write the feature matrix instead of the Gram")
    p.add_argument("--output", help="output CSV path (default <out-dir>/<kind>_gram.csv)")

    p = sub.add_parser("regress", parents=[common], help="fit a kernel regressor from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=["ntk", "ck", "ckj"], default="ntk")
    p.add_argument("--form", choices=["kernel", "feature", "ortho"], help="default: kernel (ckj: feature)")

    p = sub.add_parser("classify", parents=[common], help="fit a kernel logistic classifier from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=["ntk", "ck"], default="ntk")

    p = sub.add_parser("verify-bounds", parents=[common, task], help="print the bound table")
    p.add_argument("--run-dir", help="completed experiment directory")
    p.add_argument("--checkpoint", help="network checkpoint to analyse instead of a run directory")

    p = sub.add_parser("experiment", parents=[common, task], help="run a full multi-seed experiment")
    p.add_argument("--seeds", type=int, nargs="+", help="seed list (overrides config)")

    p = sub.add_parser("plot", parents=[common], help="CSV to SVG line or scatter plot")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", choices=["line", "scatter"], default="line")
    p.add_argument("--metric", help="results CSV metric (l2_error, cross_entropy, accuracy)")
    p.add_argument("--stage", choices=["train", "test"], default="test")
    p.add_argument("--x", help="x column of a generic CSV")
    p.add_argument("--y", nargs="+", help="y columns of a generic CSV")
    return parser


# ---------------------------------------------------------------- helpers

def _config(args, task_hint=None) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig.defaults(getattr(args, "task", None) or task_hint or REGRESSION)
    if getattr(args, "task", None) and args.task != cfg.task:
        raise ConfigError(f"--task {args.task} contradicts config task {cfg.task}")
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def _out_dir(args):
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_net(path) -> Mlp:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        return Mlp.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path} is not a network checkpoint: {exc}") from None


def _task_of(net: Mlp):
    return REGRESSION if net.dims[0] == 1 else CLASSIFICATION


def _config_for_net(args, net):
    cfg = _config(args, _task_of(net))
    if cfg.task != _task_of(net):
        raise ConfigError(f"checkpoint input dimension {net.dims[0]} does not fit a {cfg.task} config")
    return cfg


def _read_nodes(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"nodes file not found: {path}")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# ---------------------------------------------------------------- commands

def cmd_train(args):
    cfg = _config(args)
    if args.epochs is not None:
        cfg.epochs = args.epochs
        cfg.validated()
    seed = cfg.seeds[0] if cfg.seeds else 0
    pair = cfg.pair()
    xt = pair.train_nodes
    if cfg.task == REGRESSION:
        targets, weights = cfg.target_function()(xt)[:, None], pair.train.weights
    else:
        targets, weights = LabelField(cfg.target_function()).train_labels(pair), None
    result = train_adam(init_mlp(cfg.dims, cfg.activation, seed), xt, targets, cfg.train_config(seed), weights)
    out = _out_dir(args)
    result.net.save(out / "net.json")
    with open(out / "train_history.csv", "w") as fh:
        fh.write("epoch,loss\n")
        fh.writelines(f"{k},{v!r}\n" for k, v in enumerate(result.history))
    print(f"trained {result.epochs_run} epochs (seed {seed}); final loss {result.history[-1]:.6g}"
          if result.history else f"no training epochs run (seed {seed})")
    print(f"checkpoint: {out / 'net.json'}")
    return EXIT_OK


def cmd_kernel(args):
    net = _load_net(args.checkpoint)
    nodes = _read_nodes(args.nodes) if args.nodes else _config_for_net(args, net).pair().train_nodes
    out = _out_dir(args)
    if args.features:
        matrix = feature_map(net, args.kind, nodes)
        default = out / f"{args.kind}_features.csv"
    else:
        matrix = kernel_gram(net, args.kind, nodes, algorithm=args.algorithm).matrix
        default = out / f"{args.kind}_gram.csv"
    path = Path(args.output) if args.output else default
    write_matrix_csv(path, matrix)
    print(f"wrote {matrix.shape[0]}x{matrix.shape[1]} matrix to {path}")
    return EXIT_OK


def cmd_regress(args):
    net = _load_net(args.checkpoint)
    cfg = _config_for_net(args, net)
    if cfg.task != REGRESSION:
        raise ConfigError("regress needs a network with scalar input")
    pair = cfg.pair()
    f = cfg.target_function()
    xt, xs = pair.train_nodes, pair.test_nodes
    kind = "ck" if args.kind == "ckj" else args.kind
    form = args.form or ("feature" if args.kind == "ckj" else "kernel")
    if form == "kernel":
        fit = kreg.fit_kernel_form(kernel_gram(net, kind, xt), pair.train, f(xt), cfg.rcond, kind)
    elif form == "feature":
        fit = kreg.fit_feature_form(feature_map(net, kind, xt), pair.train, f(xt), cfg.rcond, kind)
    else:
        basis = kreg.ortho_basis(pair.train, features=feature_map(net, kind, xt), rcond=cfg.rcond,
                                 kernel_kind=kind)
        fit = kreg.fit_ortho_form(basis, pair.train, f(xt))
    pred = kreg.predict(fit, net, xs)
    out = _out_dir(args)
    fit.save(out / f"fit_{args.kind}.json")
    kreg.write_predictions_csv(out / f"predictions_{args.kind}.csv", xs, f(xs), pred)
    print(f"{args.kind} ({form} form, rank {fit.rank}): train error {pair.train.norm(f(xt) - fit.train_predictions):.6g}"
          f", test error {pair.test.norm(f(xs) - pred):.6g}")
    return EXIT_OK


def cmd_classify(args):
    net = _load_net(args.checkpoint)
    cfg = _config_for_net(args, net)
    pair = cfg.pair()
    labels = LabelField(cfg.target_function())
    xt, xs = pair.train_nodes, pair.test_nodes
    chi, mu = labels.train_labels(pair), labels.test_labels(pair)
    fit = klog.newton_fit(kernel_gram(net, args.kind, xt), chi, cfg.newton_tol, cfg.newton_max_iter)
    psi = kernel_rows(net, args.kind, xt, xs) @ fit.alpha
    prob = sigmoid(psi)
    out = _out_dir(args)
    fit.save(out / f"fit_{args.kind}.json")
    klog.write_classification_csv(out / f"classification_{args.kind}.csv", xs, mu, psi, prob)
    acc = float(np.mean(klog.predict_class(prob) == mu))
    print(f"{args.kind}: Newton {fit.stop_reason} after {fit.iterations} iterations; train loss {fit.loss:.6g}, "
          f"test cross-entropy {klog.logistic_loss_from_values(psi, mu):.6g}, test accuracy {acc:.4f}")
    return EXIT_OK


def _bounds_for_checkpoint(args, net):
    cfg = _config_for_net(args, net)
    pair = cfg.pair()
    xt = pair.train_nodes
    if cfg.task == REGRESSION:
        f = cfg.target_function()
        fine = pair.fine_nodes(cfg.oversample)
        vals = {}
        for kind in ("ntk", "ck"):
            fit = kreg.fit_kernel_form(kernel_gram(net, kind, xt), pair.train, f(xt), cfg.rcond, kind)
            vals[kind] = kreg.predict_from_kernel_rows(fit, kernel_rows(net, kind, xt, fine))
        return bounds.regression_bound_suite(f(fine), vals["ntk"], vals["ck"], pair, cfg.oversample)
    labels = LabelField(cfg.target_function())
    chi = labels.train_labels(pair)
    fine = Grid2DPair._mesh(*pair.fine_axes(cfg.oversample))
    psi, conv = {}, []
    for kind in ("ntk", "ck"):
        fit = klog.newton_fit(kernel_gram(net, kind, xt), chi, cfg.newton_tol, cfg.newton_max_iter)
        psi[kind] = kernel_rows(net, kind, xt, fine) @ fit.alpha
        conv.append(fit.converged)
    return bounds.logistic_bound_suite(psi["ntk"], psi["ck"], labels, pair, conv, cfg.oversample)


def cmd_verify_bounds(args):
    if bool(args.run_dir) == bool(args.checkpoint):
        raise ConfigError("give exactly one of --run-dir or --checkpoint")
    sections = []
    if args.run_dir:
        run = Path(args.run_dir)
        records = sorted(run.glob("seed_*/record.json"))
        if not records:
            raise ConfigError(f"no seed records under {run}")
        for path in records:
            data = json.loads(path.read_text())
            sections.append((data["seed"], [bounds.BoundReport.from_dict(d) for d in data["bounds"]]))
    else:
        sections.append((None, _bounds_for_checkpoint(args, _load_net(args.checkpoint))))
    total = 0
    lines = []
    for seed, reports in sections:
        bad = bounds.unexplained_violations(reports)
        total += len(bad)
        lines.append(("" if seed is None else f"seed {seed}\n") + bounds.reports_table(reports))
        lines.extend(f"  unexplained violation: {r.bound_id} (lhs {r.lhs:.6g} > rhs {r.rhs:.6g})" for r in bad)
    lines.append(f"unexplained violations: {total}")
    text = "\n".join(lines)
    print(text)
    if args.out_dir:
        (_out_dir(args) / "bounds_table.txt").write_text(text + "\n")
    return EXIT_OK


def cmd_experiment(args):
    cfg = _config(args)
    if args.seeds:
        cfg.seeds = list(args.seeds)
        cfg.validated()
    out = _out_dir(args)
    records = run_experiment(cfg, out)
    summary = summarize(records)
    for key, st in summary["metrics"].items():
        print(f"{key:32s} median {st['median']:.6g}  [q25 {st['q25']:.6g}, q75 {st['q75']:.6g}]  n={st['n']}")
    for seed, why in summary["excluded_seeds"].items():
        print(f"seed {seed} excluded: {why}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_plot(args):
    from .plotting import plot_columns, plot_results
    src = Path(args.input)
    if not src.is_file():
        raise ConfigError(f"input CSV not found: {src}")
    if args.metric:
        plot_results(src, args.output, args.metric, args.stage, args.kind)
    elif args.x and args.y:
        plot_columns(src, args.output, args.x, args.y, args.kind)
    else:
        raise ConfigError("plot needs --metric (results CSV) or --x and --y (generic CSV)")
    print(f"wrote {args.output}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "kernel": cmd_kernel, "regress": cmd_regress, "classify": cmd_classify,
            "verify-bounds": cmd_verify_bounds, "experiment": cmd_experiment, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (DivergedTraining, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
