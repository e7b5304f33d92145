"""Numerical checks of the NTK/CK comparison inequalities.

Every check produces a BoundReport holding both sides, the constants that
entered the right-hand side and the hypothesis flags.  Conditional results
are asserted only when their hypotheses test true; otherwise the report says
"hypothesis unmet".  Lipschitz constants are estimates (max adjacent-sample
slope on an oversampled grid), so checks using them carry an
``estimated_constant`` label.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .grids import (Grid1DPair, Grid2DPair, LabelField, check_matching_property, lipschitz_estimate,
                    lipschitz_estimate_2d, monotone_on_subintervals)
from .kreg import projection_diagnostics
from .nn import softplus

REL_TOL = 1e-10
BETA_LIMIT = 1.0 - 1e-9
DEFAULT_OVERSAMPLE = 10
NEST_RTOL = 1e-6
NEST_FLOOR = 1e-12

Values = Union[Callable, np.ndarray]


@dataclass
class BoundReport:
    bound_id: str
    lhs: float
    rhs: float
    constants: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    hypothesis_ok: bool = True
    applicable: bool = True
    estimated_constant: bool = False
    note: str = ""

    @property
    def satisfied(self) -> bool:
        return bool(self.lhs <= self.rhs + REL_TOL * max(1.0, self.rhs))

    @property
    def slack(self) -> float:
        return float(self.rhs - self.lhs)

    @property
    def asserted(self) -> bool:
        """Whether the inequality is claimed to hold for this input."""
        return self.applicable and self.hypothesis_ok

    @property
    def status(self) -> str:
        if not self.applicable:
            return "not_applicable"
        if not self.hypothesis_ok:
            return "hypothesis_unmet"
        return "satisfied" if self.satisfied else "violated"

    def to_dict(self):
        return {
            "bound_id": self.bound_id,
            "lhs": _finite_or_none(self.lhs),
            "rhs": _finite_or_none(self.rhs),
            "satisfied": self.satisfied,
            "slack": _finite_or_none(self.slack),
            "hypothesis_ok": self.hypothesis_ok,
            "applicable": self.applicable,
            "estimated_constant": self.estimated_constant,
            "status": self.status,
            "constants": {k: _finite_or_none(v) for k, v in self.constants.items()},
            "flags": self.flags,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data):
        nan = float("nan")
        return cls(data["bound_id"], nan if data["lhs"] is None else data["lhs"],
                   nan if data["rhs"] is None else data["rhs"],
                   {k: nan if v is None else v for k, v in data["constants"].items()},
                   dict(data["flags"]), data["hypothesis_ok"], data["applicable"],
                   data["estimated_constant"], data.get("note", ""))


def _finite_or_none(v):
    v = float(v)
    return v if math.isfinite(v) else None


def reports_to_json(reports: Sequence[BoundReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=1)


def reports_from_json(text) -> list:
    return [BoundReport.from_dict(d) for d in json.loads(text)]


def reports_table(reports: Sequence[BoundReport]) -> str:
    """Plain-text table, one row per bound."""
    def fmt(v):
        return "-" if not math.isfinite(v) else f"{v:.4g}"
    head = ["bound", "lhs", "rhs", "status", "constants", "flags"]
    rows = []
    for r in reports:
        consts = " ".join(f"{k}={fmt(float(v))}" for k, v in r.constants.items())
        flags = " ".join(f"{k}={fmt(v) if isinstance(v, float) else v}" for k, v in r.flags.items())
        if r.estimated_constant:
            flags = (flags + " estimated-constant").strip()
        rows.append([r.bound_id, fmt(r.lhs), fmt(r.rhs), r.status, consts, flags])
    widths = [max(len(x[k]) for x in rows + [head]) for k in range(4)]
    lines = []
    for row in [head] + rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row[:4], widths)) + "  " + "  ".join(row[4:]))
    return "\n".join(lines)


def unexplained_violations(reports: Sequence[BoundReport]):
    """Reports whose inequality is asserted yet fails."""
    return [r for r in reports if r.asserted and not r.satisfied]


def _values(source: Values, nodes):
    if callable(source):
        return np.asarray(source(nodes), dtype=float).ravel()
    v = np.asarray(source, dtype=float).ravel()
    if v.shape[0] != len(nodes):
        raise ValueError(f"got {v.shape[0]} values for {len(nodes)} oversampled nodes")
    return v


def _exp(x):
    """e^x, saturating to inf instead of raising."""
    return math.exp(x) if x < 709.0 else math.inf


# ---------------------------------------------------------------- regression

def regression_bound_suite(f: Values, ntk: Values, ck: Values, pair: Grid1DPair,
                           oversample=DEFAULT_OVERSAMPLE) -> list:
    """All regression inequalities for one pair of kernel approximants.

    ``f``, ``ntk`` and ``ck`` are callables on 1D node arrays, or their values
    on ``pair.fine_nodes(oversample)``.  The test and training grids are
    sub-samples of that grid, so one evaluation serves every check.
    """
    fine = pair.fine_nodes(oversample)
    fv, nv, cv = (_values(s, fine) for s in (f, ntk, ck))
    tau = pair.tau
    step_test, step_train = oversample, oversample * tau
    train, test = pair.train, pair.test
    span = pair.b - pair.a

    res = {"ntk": fv - nv, "ck": fv - cv}
    n0 = {k: train.norm(g[::step_train]) for k, g in res.items()}
    n1 = {k: test.norm(g[::step_test]) for k, g in res.items()}
    mono = {k: monotone_on_subintervals(g, step_train, pair.N) for k, g in res.items()}
    lip = {k: lipschitz_estimate(fine, g) for k, g in res.items()}
    mono_ok = {k: bool(m.all()) for k, m in mono.items()}
    mono_bad = {k: int((~m).sum()) for k, m in mono.items()}

    proj = projection_diagnostics(fv[::step_train], train, nv[::step_train], cv[::step_train])
    beta = proj.beta
    beta_ok = proj.beta_defined and beta < BETA_LIMIT

    reports = []
    for k in ("ntk", "ck"):
        reports.append(BoundReport(f"norm_ineq1/{k}", n0[k], math.sqrt(tau) * n1[k], {"tau": tau}))
    for k in ("ntk", "ck"):
        reports.append(BoundReport(
            f"lemma_mono/{k}", n1[k], math.sqrt(2.0) * n0[k], {"tau": tau},
            {"monotone": mono_ok[k], "non_monotone_subintervals": mono_bad[k]}, hypothesis_ok=mono_ok[k]))
    for k in ("ntk", "ck"):
        extra = 2.0 * span ** 2 * lip[k] ** 2 / pair.N ** 2
        reports.append(BoundReport(
            f"lemma_lip/{k}", n1[k] ** 2, 4.0 * (n0[k] ** 2 + extra), {"L": lip[k], "N": pair.N},
            {"lipschitz_estimate": True}, estimated_constant=True))

    # The comparison results rest on span(CK) lying inside span(NTK) with both
    # fits exact orthogonal projections.  Truncated pseudo-inverses only give
    # this approximately; the Pythagorean split measures how well.
    defect = abs(proj.resplit_lhs - proj.resplit_rhs)
    nested = bool(defect <= NEST_RTOL * proj.resplit_lhs + (NEST_FLOOR * proj.norm_f) ** 2)
    nest_flags = {"nested_spans": nested, "split_defect": float(defect)}
    nest_note = "" if nested else "fitted projections are not nested"

    reports.append(BoundReport("tr_bound", n0["ntk"], n0["ck"], {}, dict(nest_flags), hypothesis_ok=nested,
                               note=nest_note))

    beta_consts = {"beta": beta}
    beta_flags = {"beta_defined": proj.beta_defined, **nest_flags}
    reports.append(BoundReport("proj_bound", proj.ntk_minus_ck, beta * n0["ck"] if proj.beta_defined else math.nan,
                               beta_consts, dict(beta_flags), hypothesis_ok=nested, applicable=proj.beta_defined,
                               note=nest_note if proj.beta_defined else "zero target on the training grid"))
    na_note = nest_note if beta_ok else "beta too close to 1 (or undefined)"
    reports.append(BoundReport("ck_ntk_bound", n0["ck"], n0["ntk"] / (1 - beta) if beta_ok else math.nan,
                               beta_consts, dict(beta_flags), hypothesis_ok=nested, applicable=beta_ok,
                               note=na_note))

    both_mono = mono_ok["ntk"] and mono_ok["ck"]
    mono_flags = {"monotone_ntk": mono_ok["ntk"], "monotone_ck": mono_ok["ck"],
                  "non_monotone_subintervals_ntk": mono_bad["ntk"],
                  "non_monotone_subintervals_ck": mono_bad["ck"], **nest_flags}
    c1 = math.sqrt(2 * tau)
    reports.append(BoundReport("thm_mono/lower", n1["ntk"], c1 * n1["ck"], {"tau": tau, "C1": c1},
                               dict(mono_flags), hypothesis_ok=both_mono and nested, note=nest_note))
    c2 = c1 / (1 - beta) if beta_ok else math.nan
    reports.append(BoundReport("thm_mono/upper", n1["ck"], c2 * n1["ntk"] if beta_ok else math.nan,
                               {"tau": tau, "beta": beta, "C2": c2}, dict(mono_flags),
                               hypothesis_ok=both_mono and nested, applicable=beta_ok, note=na_note))

    d1 = 4.0 * tau
    lip_term = {k: 8.0 * span ** 2 * lip[k] ** 2 / pair.N ** 2 for k in lip}
    lip_flags = {"lipschitz_estimate": True, **nest_flags}
    reports.append(BoundReport("thm_lip/1", n1["ntk"] ** 2, d1 * n1["ck"] ** 2 + lip_term["ntk"],
                               {"tau": tau, "D1": d1, "L_NTK": lip["ntk"]}, dict(lip_flags),
                               hypothesis_ok=nested, estimated_constant=True, note=nest_note))
    d2 = d1 / (1 - beta) ** 2 if beta_ok else math.nan
    reports.append(BoundReport("thm_lip/2", n1["ck"] ** 2,
                               d2 * n1["ntk"] ** 2 + lip_term["ck"] if beta_ok else math.nan,
                               {"tau": tau, "beta": beta, "D2": d2, "L_CK": lip["ck"]}, dict(lip_flags),
                               hypothesis_ok=nested, applicable=beta_ok, estimated_constant=True, note=na_note))
    return reports


# ---------------------------------------------------------------- logistic

def corner_max_flags(psi_hat_test, pair: Grid2DPair):
    """Per test node: psi_hat does not exceed the corner max of any enclosing rectangle."""
    v = np.asarray(psi_hat_test, dtype=float).reshape(pair.test_shape())
    corners = v[:: pair.tau1, :: pair.tau2]
    # cell (p, q) maximum over its four training corners
    cell_max = np.maximum.reduce([corners[:-1, :-1], corners[1:, :-1], corners[:-1, 1:], corners[1:, 1:]])
    ok = np.ones(v.shape, dtype=bool)
    for k in range(v.shape[0]):
        for l in range(v.shape[1]):
            ok[k, l] = all(v[k, l] <= cell_max[p, q] for p, q in pair.enclosing_cells(k, l))
    return ok


def _signed(psi, eta):
    return (1.0 - 2.0 * np.asarray(eta, dtype=float)) * psi


def logistic_bound_suite(psi_ntk: Values, psi_ck: Values, labels: LabelField, pair: Grid2DPair,
                         converged: Optional[Sequence[bool]] = None,
                         oversample=DEFAULT_OVERSAMPLE, tol_opt=None) -> list:
    """All classification inequalities for one pair of kernel classifiers.

    ``psi_ntk``/``psi_ck`` give the decision values psi on (n, 2) node arrays,
    or their values on the ij-mesh of ``pair.fine_axes(oversample)``.
    ``converged`` holds the two Newton convergence flags (NTK, CK); fits that
    stopped early are still checked but carry a ``non_converged`` caveat.
    """
    ax1, ax2 = pair.fine_axes(oversample)
    fine = Grid2DPair._mesh(ax1, ax2)
    shape = (len(ax1), len(ax2))
    psi = {"ntk": _values(psi_ntk, fine).reshape(shape), "ck": _values(psi_ck, fine).reshape(shape)}
    t1, t2 = pair.tau1, pair.tau2
    chi = labels.train_labels(pair)
    mu = labels.test_labels(pair)
    n_train = chi.size

    test_psi = {k: v[::oversample, ::oversample].ravel() for k, v in psi.items()}
    train_psi = {k: v[:: oversample * t1, :: oversample * t2].ravel() for k, v in psi.items()}
    hat0 = {k: _signed(v, chi) for k, v in train_psi.items()}
    hat1 = {k: _signed(v, mu) for k, v in test_psi.items()}
    l0 = {k: float(np.sum(softplus(v))) for k, v in hat0.items()}
    l1 = {k: float(np.sum(softplus(v))) for k, v in hat1.items()}
    lip = {k: lipschitz_estimate_2d(ax1, ax2, v) for k, v in psi.items()}
    cmax = {k: corner_max_flags(v, pair) for k, v in hat1.items()}
    cmax_ok = {k: bool(v.all()) for k, v in cmax.items()}
    matching, violators = check_matching_property(labels, pair)
    omega = _exp(float(np.max(hat0["ck"] - hat0["ntk"])))
    h = pair.h
    tt = t1 * t2

    conv = (True, True) if converged is None else tuple(bool(c) for c in converged)
    both_conv = all(conv)
    caveat = {"converged_ntk": conv[0], "converged_ck": conv[1], "non_converged": not both_conv}
    caveat_note = "" if both_conv else "Newton solve stopped before the gradient tolerance"
    tol_opt = 1e-6 * n_train if tol_opt is None else tol_opt

    reports = [BoundReport("log_tr_bound", l0["ntk"], l0["ck"] + tol_opt, {"tol_opt": tol_opt}, dict(caveat),
                           hypothesis_ok=both_conv, note=caveat_note)]
    for k in ("ntk", "ck"):
        reports.append(BoundReport(f"loss_ineq1/{k}", l0[k], l1[k]))
    for k in ("ntk", "ck"):
        reports.append(BoundReport(f"lemma_cormax/{k}", l1[k], tt * l0[k], {"tau1": t1, "tau2": t2},
                                   {"corner_max": cmax_ok[k],
                                    "corner_max_failures": int((~cmax[k]).sum())},
                                   hypothesis_ok=cmax_ok[k]))
    for k in ("ntk", "ck"):
        reports.append(BoundReport(f"lemma_loglip/{k}", l1[k], _exp(h * lip[k]) * tt * l0[k],
                                   {"tau1": t1, "tau2": t2, "h": h, "L": lip[k]},
                                   {"matching": matching, "lipschitz_estimate": True},
                                   hypothesis_ok=matching, estimated_constant=True))
    reports.append(BoundReport("log_tr_bound2", l0["ck"], omega * l0["ntk"], {"omega": omega}, dict(caveat),
                               note=caveat_note))

    cm_flags = {"corner_max_ntk": cmax_ok["ntk"], "corner_max_ck": cmax_ok["ck"], **caveat}
    both_cm = cmax_ok["ntk"] and cmax_ok["ck"]
    reports.append(BoundReport("thm_cormax/lower", l1["ntk"], tt * l1["ck"],
                               {"tau1": t1, "tau2": t2, "C1": float(tt)}, dict(cm_flags),
                               hypothesis_ok=both_cm, note=caveat_note))
    reports.append(BoundReport("thm_cormax/upper", l1["ck"], tt * omega * l1["ntk"],
                               {"tau1": t1, "tau2": t2, "omega": omega, "C2": tt * omega}, dict(cm_flags),
                               hypothesis_ok=both_cm, note=caveat_note))

    lip_flags = {"matching": matching, "matching_violations": len(violators), "lipschitz_estimate": True,
                 **caveat}
    d1 = _exp(h * lip["ntk"])
    d2 = omega * _exp(h * lip["ck"])
    reports.append(BoundReport("thm_loglip/lower", l1["ntk"], d1 * l1["ck"],
                               {"h": h, "L_NTK": lip["ntk"], "D1": d1}, dict(lip_flags),
                               hypothesis_ok=matching, estimated_constant=True, note=caveat_note))
    reports.append(BoundReport("thm_loglip/upper", l1["ck"], d2 * l1["ntk"],
                               {"h": h, "omega": omega, "L_CK": lip["ck"], "D2": d2}, dict(lip_flags),
                               hypothesis_ok=matching, estimated_constant=True, note=caveat_note))
    return reports
