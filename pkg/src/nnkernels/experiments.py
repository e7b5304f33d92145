"""Multi-seed regression and classification studies.

Each seed trains a network, extracts kernels at epoch checkpoints, fits the
kernel machines, evaluates them on both grids and runs the bound suites on
the final network.  Seeds are independent and may run in separate processes;
outputs are written per seed and merged in seed order, so the merged files do
not depend on the degree of parallelism.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, bounds, klog, kreg
from .ck import ck_features
from .grids import Grid1DPair, Grid2DPair, LabelField
from .kernels import kernel_gram, kernel_rows
from .nn import DivergedTraining, LossKind, Mlp, TrainConfig, forward, init_mlp, logit_difference, train_adam
from .targets import regression_target, separator

REGRESSION = "regression"
CLASSIFICATION = "classification"
METHODS = ("nn", "ntk", "ck", "ckj")
VERSION_HEADER = f"# nnkernels {__version__}"
RESULT_FIELDS = ["seed", "method", "stage", "epoch", "metric", "value"]
BOUND_FIELDS = ["seed", "bound_id", "lhs", "rhs", "satisfied", "hypothesis_ok", "constants_json"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


_REGRESSION_DEFAULTS = dict(target="f2", grid={"a": -1.0, "b": 1.0, "N": 200, "M": 600}, depth=3, width=128,
                            learning_rate=1e-3, epochs=2400, stop_accuracy=None,
                            kernels=["nn", "ntk", "ck", "ckj"])
_CLASSIFICATION_DEFAULTS = dict(target="F1", grid={"a1": -1.0, "b1": 1.0, "a2": -1.0, "b2": 1.0,
                                                   "N1": 11, "N2": 7, "M1": 22, "M2": 21},
                                depth=2, width=128, learning_rate=1e-5, epochs=4000, stop_accuracy=0.85,
                                kernels=["nn", "ntk", "ck"])


@dataclass
class ExperimentConfig:
    task: str = REGRESSION
    target: str = "f2"
    grid: dict = field(default_factory=dict)
    depth: int = 3
    width: int = 128
    activation: str = "tanh"
    learning_rate: float = 1e-3
    epochs: int = 2400
    stop_accuracy: Optional[float] = None
    seeds: list = field(default_factory=lambda: list(range(10)))
    kernels: list = field(default_factory=lambda: list(METHODS))
    checkpoints: Optional[list] = None  # None: every 10% of training
    rcond: float = kreg.DEFAULT_RCOND
    ckj_form: str = "feature"
    newton_tol: float = 1e-8
    newton_max_iter: int = 100
    oversample: int = bounds.DEFAULT_OVERSAMPLE
    run_bounds: bool = True
    save_networks: bool = True

    @classmethod
    def defaults(cls, task=REGRESSION, **overrides):
        if task not in (REGRESSION, CLASSIFICATION):
            raise ConfigError(f"task must be {REGRESSION!r} or {CLASSIFICATION!r}, got {task!r}")
        base = dict(_REGRESSION_DEFAULTS if task == REGRESSION else _CLASSIFICATION_DEFAULTS)
        grid = dict(base["grid"])
        grid.update(overrides.pop("grid", None) or {})
        base.update(overrides, grid=grid)
        return cls(task=task, **base).validated()

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls.defaults(data.pop("task", REGRESSION), **data)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def validated(self):
        kernels = [str(k).lower() for k in self.kernels]
        bad = [k for k in kernels if k not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.task == CLASSIFICATION and "ckj" in kernels:
            raise ConfigError("ckj is a regression form; use nn, ntk, ck for classification")
        self.kernels = [m for m in METHODS if m in kernels]
        if self.ckj_form not in ("feature", "ortho"):
            raise ConfigError("ckj_form must be 'feature' or 'ortho'")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError("activation must be 'tanh' or 'relu'")
        if self.depth < 1 or self.width < 1:
            raise ConfigError("depth and width must be positive")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        self.seeds = [int(s) for s in self.seeds]
        try:
            self.pair()
            self.train_config(0)
            self.target_function()
        except (ValueError, TypeError, SyntaxError) as exc:
            raise ConfigError(str(exc)) from None
        if self.checkpoints is not None:
            self.checkpoints = sorted({int(e) for e in self.checkpoints})
            if any(e < 0 or e > self.epochs for e in self.checkpoints):
                raise ConfigError("checkpoints must lie in [0, epochs]")
        return self

    @property
    def dims(self):
        d_in, d_out = (1, 1) if self.task == REGRESSION else (2, 2)
        return (d_in,) + (self.width,) * self.depth + (d_out,)

    def pair(self):
        return Grid1DPair(**self.grid) if self.task == REGRESSION else Grid2DPair(**self.grid)

    def target_function(self):
        return regression_target(self.target) if self.task == REGRESSION else separator(self.target)

    def train_config(self, seed):
        loss = LossKind.WEIGHTED_MSE if self.task == REGRESSION else LossKind.CROSS_ENTROPY
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, seed=seed, loss=loss,
                           stop_accuracy=self.stop_accuracy)

    def checkpoint_epochs(self):
        if self.checkpoints is not None:
            return list(self.checkpoints)
        return sorted({round(k * self.epochs / 10) for k in range(11)})


@dataclass
class RunRecord:
    seed: int
    task: str
    rows: list = field(default_factory=list)      # (method, stage, epoch, metric, value)
    bound_reports: list = field(default_factory=list)
    convergence: dict = field(default_factory=dict)
    epochs_run: int = 0
    wall_clock: float = 0.0
    diverged: bool = False
    note: str = ""
    net: Optional[Mlp] = field(default=None, repr=False)
    fits: dict = field(default_factory=dict, repr=False)

    def final(self, method, stage, metric):
        """Metric value at the last evaluated epoch."""
        vals = [r for r in self.rows if r[0] == method and r[1] == stage and r[3] == metric]
        return vals[-1][4] if vals else float("nan")

    def to_dict(self):
        return {"seed": self.seed, "task": self.task, "epochs_run": self.epochs_run,
                "wall_clock": self.wall_clock, "diverged": self.diverged, "note": self.note,
                "convergence": self.convergence,
                "bounds": [r.to_dict() for r in self.bound_reports]}


# ---------------------------------------------------------------- regression

def _regression_checkpoint(cfg, net, pair, f_train, f_test, epoch, rec):
    xt, xs = pair.train_nodes, pair.test_nodes
    train, test = pair.train, pair.test
    fits = {}

    def add(method, pred_train, pred_test):
        rec.rows.append((method, "train", epoch, "l2_error", train.norm(f_train - pred_train)))
        rec.rows.append((method, "test", epoch, "l2_error", test.norm(f_test - pred_test)))

    if "nn" in cfg.kernels:
        add("nn", net(xt).ravel(), net(xs).ravel())
    for kind in ("ntk", "ck"):
        if kind in cfg.kernels:
            fit = kreg.fit_kernel_form(kernel_gram(net, kind, xt), train, f_train, cfg.rcond, kind)
            add(kind, fit.train_predictions, kreg.predict_from_kernel_rows(fit, kernel_rows(net, kind, xt, xs)))
            fits[kind] = fit
    if "ckj" in cfg.kernels:
        Phi = ck_features(net, xt)
        if cfg.ckj_form == "feature":
            fit = kreg.fit_feature_form(Phi, train, f_train, cfg.rcond)
            add("ckj", fit.train_predictions, kreg.predict_from_features(fit, ck_features(net, xs)))
        else:
            basis = kreg.ortho_basis(train, features=Phi, rcond=cfg.rcond, kernel_kind="ck")
            fit = kreg.fit_ortho_form(basis, train, f_train)
            add("ckj", fit.train_predictions, kreg.predict_from_features(fit, ck_features(net, xs)))
        fits["ckj"] = fit
    return fits


def _regression_seed(cfg: ExperimentConfig, seed: int) -> RunRecord:
    start = time.perf_counter()
    rec = RunRecord(seed, REGRESSION)
    pair = cfg.pair()
    f = cfg.target_function()
    xt, xs = pair.train_nodes, pair.test_nodes
    f_train, f_test = f(xt), f(xs)
    checkpoints = set(cfg.checkpoint_epochs())
    seen = {}

    def callback(epoch, net):
        if epoch in checkpoints and epoch < cfg.epochs:
            seen[epoch] = _regression_checkpoint(cfg, net, pair, f_train, f_test, epoch, rec)

    net = init_mlp(cfg.dims, cfg.activation, seed)
    try:
        result = train_adam(net, xt, f_train[:, None], cfg.train_config(seed), weights=pair.train.weights,
                            callback=callback)
    except DivergedTraining as exc:
        rec.diverged, rec.note = True, str(exc)
        rec.wall_clock = time.perf_counter() - start
        return rec
    net = result.net
    rec.epochs_run = result.epochs_run
    fits = seen[rec.epochs_run] if rec.epochs_run in seen else _regression_checkpoint(cfg, net, pair, f_train, f_test, rec.epochs_run, rec)
    _flag_nonfinite(rec)
    rec.convergence = {k: {"form": v.form, "rank": v.rank} for k, v in fits.items()}
    if cfg.run_bounds and "ntk" in fits and "ck" in fits:
        fine = pair.fine_nodes(cfg.oversample)
        vals = {k: kreg.predict_from_kernel_rows(fits[k], kernel_rows(net, k, xt, fine)) for k in ("ntk", "ck")}
        rec.bound_reports = bounds.regression_bound_suite(f(fine), vals["ntk"], vals["ck"], pair, cfg.oversample)
    rec.net = net
    rec.fits = fits
    rec.wall_clock = time.perf_counter() - start
    return rec


# ---------------------------------------------------------------- classification

def _cross_entropy_and_accuracy(t, labels):
    return klog.logistic_loss_from_values(t, labels), float(np.mean((t > 0).astype(int) == labels))


def _classification_checkpoint(cfg, net, pair, chi, mu, epoch, rec):
    xt, xs = pair.train_nodes, pair.test_nodes
    fits = {}

    def add(method, t_train, t_test):
        for stage, t, lab in (("train", t_train, chi), ("test", t_test, mu)):
            ce, acc = _cross_entropy_and_accuracy(t, lab)
            rec.rows.append((method, stage, epoch, "cross_entropy", ce))
            rec.rows.append((method, stage, epoch, "accuracy", acc))

    if "nn" in cfg.kernels:
        add("nn", logit_difference(forward(net, xt).output), logit_difference(forward(net, xs).output))
    for kind in ("ntk", "ck"):
        if kind in cfg.kernels:
            H = kernel_gram(net, kind, xt)
            fit = klog.newton_fit(H, chi, cfg.newton_tol, cfg.newton_max_iter)
            add(kind, H.matrix @ fit.alpha, kernel_rows(net, kind, xt, xs) @ fit.alpha)
            fits[kind] = fit
    return fits


def _classification_seed(cfg: ExperimentConfig, seed: int) -> RunRecord:
    start = time.perf_counter()
    rec = RunRecord(seed, CLASSIFICATION)
    pair = cfg.pair()
    labels = LabelField(cfg.target_function())
    xt = pair.train_nodes
    chi, mu = labels.train_labels(pair), labels.test_labels(pair)
    checkpoints = set(cfg.checkpoint_epochs())
    seen = {}

    def callback(epoch, net):
        if epoch in checkpoints and epoch < cfg.epochs:
            seen[epoch] = _classification_checkpoint(cfg, net, pair, chi, mu, epoch, rec)

    net = init_mlp(cfg.dims, cfg.activation, seed)
    try:
        result = train_adam(net, xt, chi, cfg.train_config(seed), callback=callback)
    except DivergedTraining as exc:
        rec.diverged, rec.note = True, str(exc)
        rec.wall_clock = time.perf_counter() - start
        return rec
    net = result.net
    rec.epochs_run = result.epochs_run
    fits = seen[rec.epochs_run] if rec.epochs_run in seen else _classification_checkpoint(cfg, net, pair, chi, mu, rec.epochs_run, rec)
    _flag_nonfinite(rec)
    rec.convergence = {k: {"converged": v.converged, "stop_reason": v.stop_reason, "iterations": v.iterations,
                           "grad_norm": v.grad_norm, "train_loss": v.loss} for k, v in fits.items()}
    if cfg.run_bounds and "ntk" in fits and "ck" in fits:
        ax1, ax2 = pair.fine_axes(cfg.oversample)
        fine = Grid2DPair._mesh(ax1, ax2)
        psi = {k: kernel_rows(net, k, xt, fine) @ fits[k].alpha for k in ("ntk", "ck")}
        rec.bound_reports = bounds.logistic_bound_suite(psi["ntk"], psi["ck"], labels, pair,
                                                        converged=(fits["ntk"].converged, fits["ck"].converged),
                                                        oversample=cfg.oversample)
    rec.net = net
    rec.fits = fits
    rec.wall_clock = time.perf_counter() - start
    return rec


def _flag_nonfinite(rec):
    bad = sorted({f"{m}/{s}/{k}" for m, s, _, k, v in rec.rows if not np.isfinite(v)})
    if bad:
        rec.note = (rec.note + " non-finite: " + ", ".join(bad)).strip()


# ---------------------------------------------------------------- drivers

def run_seed(cfg: ExperimentConfig, seed: int) -> RunRecord:
    return (_regression_seed if cfg.task == REGRESSION else _classification_seed)(cfg, seed)


def _worker_count(n_seeds):
    cap = os.environ.get("KS_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_seeds))


def _run(cfg: ExperimentConfig, task):
    if cfg.task != task:
        raise ConfigError(f"config task is {cfg.task!r}, expected {task!r}")
    if not cfg.seeds:
        return []
    workers = _worker_count(len(cfg.seeds))
    if workers == 1:
        return [run_seed(cfg, s) for s in cfg.seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))


def run_regression(cfg: ExperimentConfig) -> list:
    return _run(cfg, REGRESSION)


def run_classification(cfg: ExperimentConfig) -> list:
    return _run(cfg, CLASSIFICATION)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list:
    records = run_regression(cfg) if cfg.task == REGRESSION else run_classification(cfg)
    if out_dir is not None:
        write_outputs(cfg, records, out_dir)
    return records


# ---------------------------------------------------------------- output

def _results_text(records):
    buf = io.StringIO()
    buf.write(VERSION_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for rec in records:
        for method, stage, epoch, metric, value in rec.rows:
            w.writerow([rec.seed, method, stage, epoch, metric, repr(float(value))])
    return buf.getvalue()


def _bounds_text(records):
    buf = io.StringIO()
    buf.write(VERSION_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOUND_FIELDS)
    for rec in records:
        for r in rec.bound_reports:
            d = r.to_dict()
            w.writerow([rec.seed, r.bound_id, repr(float(r.lhs)), repr(float(r.rhs)), r.satisfied,
                        r.hypothesis_ok and r.applicable, json.dumps(d["constants"], sort_keys=True)])
    return buf.getvalue()


def read_results_csv(path):
    """Rows of a results CSV as dicts with typed fields."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append({"seed": int(row["seed"]), "method": row["method"], "stage": row["stage"],
                    "epoch": int(row["epoch"]), "metric": row["metric"], "value": float(row["value"])})
    return out


def read_bounds_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append({"seed": int(row["seed"]), "bound_id": row["bound_id"], "lhs": float(row["lhs"]),
                    "rhs": float(row["rhs"]), "satisfied": row["satisfied"] == "True",
                    "hypothesis_ok": row["hypothesis_ok"] == "True",
                    "constants": json.loads(row["constants_json"])})
    return out


def summarize_rows(rows):
    """Median and quartiles per (method, stage, metric) over seeds at each seed's last epoch."""
    last = {}
    for r in rows:
        last[r["seed"]] = max(last.get(r["seed"], 0), r["epoch"])
    groups = {}
    for r in rows:
        if r["epoch"] == last[r["seed"]]:
            groups.setdefault(f'{r["method"]}/{r["stage"]}/{r["metric"]}', []).append(r["value"])
    stats = {}
    for key in sorted(groups):
        v = np.array(groups[key])
        v = v[np.isfinite(v)]
        if v.size == 0:
            continue
        q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        stats[key] = {"n": int(v.size), "median": float(med), "q25": float(q25), "q75": float(q75),
                      "min": float(v.min()), "max": float(v.max())}
    return stats


def _rows_of(records):
    return [{"seed": rec.seed, "method": m, "stage": s, "epoch": e, "metric": k, "value": float(v)}
            for rec in records for m, s, e, k, v in rec.rows]


def summarize(records):
    kept = [r for r in records if not r.diverged and not r.note]
    return {"seeds": [r.seed for r in records],
            "excluded_seeds": {str(r.seed): r.note for r in records if r.diverged or r.note},
            "metrics": summarize_rows(_rows_of(kept))}


def write_outputs(cfg: ExperimentConfig, records, out_dir):
    """Per-seed files first, then the merged results/bounds CSVs and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    for rec in records:
        sd = out / f"seed_{rec.seed:04d}"
        sd.mkdir(exist_ok=True)
        (sd / "results.csv").write_text(_results_text([rec]))
        (sd / "bounds.csv").write_text(_bounds_text([rec]))
        (sd / "record.json").write_text(json.dumps(rec.to_dict(), indent=1))
        if rec.bound_reports:
            (sd / "bounds.txt").write_text(bounds.reports_table(rec.bound_reports) + "\n")
        if cfg.save_networks and getattr(rec, "net", None) is not None:
            rec.net.save(sd / "net.json")
            for kind, fit in rec.fits.items():
                fit.save(sd / f"fit_{kind}.json")
    (out / "results.csv").write_text(_results_text(records))
    (out / "bounds.csv").write_text(_bounds_text(records))
    (out / "summary.json").write_text(json.dumps(summarize(records), indent=1))
