import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnkernels.bounds import (BoundReport, corner_max_flags, logistic_bound_suite, regression_bound_suite,
                              reports_from_json, reports_table, reports_to_json, unexplained_violations)
from nnkernels.grids import Grid1DPair, Grid2DPair, LabelField
from nnkernels.nn import softplus


def _by_id(reports):
    return {r.bound_id: r for r in reports}


def _zero(x):
    return np.zeros(len(x))


def _regression(values, pair, oversample=4):
    return _by_id(regression_bound_suite(values, _zero, _zero, pair, oversample))


# ------------------------------------------------------------ report object

def test_report_status_and_slack():
    r = BoundReport("x", 1.0, 2.0)
    assert r.satisfied and r.slack == 1.0 and r.status == "satisfied"
    assert BoundReport("x", 2.0, 1.0).status == "violated"
    assert BoundReport("x", 2.0, 1.0, hypothesis_ok=False).status == "hypothesis_unmet"
    assert BoundReport("x", 2.0, math.nan, applicable=False).status == "not_applicable"
    # relative tolerance only
    assert BoundReport("x", 1e6 * (1 + 5e-11), 1e6).satisfied
    assert not BoundReport("x", 1e6 * (1 + 1e-9), 1e6).satisfied


def test_unexplained_violations_only_counts_asserted_failures():
    reps = [BoundReport("a", 2.0, 1.0), BoundReport("b", 2.0, 1.0, hypothesis_ok=False),
            BoundReport("c", 0.0, 1.0)]
    assert [r.bound_id for r in unexplained_violations(reps)] == ["a"]


def test_json_round_trip_and_table():
    reps = [BoundReport("a", 1.0, math.inf, {"omega": math.inf}, {"matching": True}, estimated_constant=True),
            BoundReport("b", 0.5, math.nan, applicable=False, note="n/a")]
    back = reports_from_json(reports_to_json(reps))
    assert back[0].bound_id == "a" and math.isnan(back[0].rhs)
    assert back[1].note == "n/a" and not back[1].applicable
    table = reports_table(reps)
    assert "estimated-constant" in table and "not_applicable" in table


# ------------------------------------------------------------ 1D inequalities

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(4, 8), (5, 15), (10, 40)]))
def test_norm_ineq1_on_random_samples(seed, nm):
    pair = Grid1DPair(-1.0, 1.0, *nm)
    g = np.random.default_rng(seed).standard_normal(len(pair.fine_nodes(2)))
    r = _regression(g, pair, 2)
    for k in ("ntk", "ck"):
        assert r[f"norm_ineq1/{k}"].satisfied
        # the gap is exactly the discarded test nodes
        assert r[f"norm_ineq1/{k}"].lhs <= r[f"norm_ineq1/{k}"].rhs + 1e-12


def test_norm_ineq1_equality_for_training_grid_supported_values():
    pair = Grid1DPair(-1.0, 1.0, 4, 12)
    fine = pair.fine_nodes(1)
    g = np.zeros(len(fine))
    g[::3] = np.arange(5.0) + 1.0
    rep = _regression(g, pair, 1)["norm_ineq1/ntk"]
    assert rep.lhs == pytest.approx(rep.rhs, rel=1e-14)


def _piecewise_monotone(rng, pair, oversample):
    per = pair.tau * oversample
    out = [rng.standard_normal()]
    for _ in range(pair.N):
        steps = rng.exponential(size=per) * rng.choice([-1.0, 1.0])
        out.extend(out[-1] + np.cumsum(steps))
    return np.array(out)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_monotone_lemma_on_piecewise_monotone_functions(seed):
    pair = Grid1DPair(-1.0, 1.0, 6, 18)
    g = _piecewise_monotone(np.random.default_rng(seed), pair, 3)
    rep = _regression(g, pair, 3)["lemma_mono/ntk"]
    assert rep.hypothesis_ok and rep.satisfied


def test_monotone_lemma_flags_oscillation():
    pair = Grid1DPair(-1.0, 1.0, 4, 16)
    x = pair.fine_nodes(2)
    rep = _regression(np.sin(40 * x), pair, 2)["lemma_mono/ntk"]
    assert not rep.hypothesis_ok and rep.flags["non_monotone_subintervals"] > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(-1.0, 1.0), (0.0, 1.0), (-0.5, 1.5)]))
def test_lipschitz_lemma_on_smooth_functions(seed, ab):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    pair = Grid1DPair(ab[0], ab[1], n, n * int(rng.integers(2, 5)))
    k = rng.uniform(0.5, 20.0, 3)
    c = rng.standard_normal(3)
    phase = rng.uniform(0, 2 * np.pi, 3)

    def g(x):
        return np.sum(c[:, None] * np.sin(k[:, None] * x[None, :] + phase[:, None]), axis=0)
    rep = _regression(g, pair, 8)["lemma_lip/ntk"]
    assert rep.estimated_constant and rep.satisfied


def test_regression_suite_on_nested_projections():
    pair = Grid1DPair(-1.0, 1.0, 20, 60)
    train = pair.train
    xs = pair.train_nodes

    # exact weighted projections onto nested polynomial spaces
    def projector(deg):
        A = np.vander(xs, deg + 1)
        sw = np.sqrt(train.weights)
        coef = np.linalg.lstsq(sw[:, None] * A, sw * np.exp(3 * xs), rcond=None)[0]
        return lambda x: np.polyval(coef, x)

    reps = _by_id(regression_bound_suite(lambda x: np.exp(3 * x), projector(6), projector(3), pair, 5))
    assert reps["tr_bound"].flags["nested_spans"]
    for bid in ("tr_bound", "proj_bound", "ck_ntk_bound", "norm_ineq1/ntk", "norm_ineq1/ck"):
        assert reps[bid].status == "satisfied", bid
    assert 0 < reps["proj_bound"].constants["beta"] < 1
    assert not unexplained_violations(reps.values())
    assert reps["thm_mono/lower"].constants["C1"] == pytest.approx(math.sqrt(6))


def test_regression_suite_flags_non_nested_fits():
    pair = Grid1DPair(-1.0, 1.0, 10, 20)
    reps = _by_id(regression_bound_suite(lambda x: x ** 2, lambda x: 0.5 * x, lambda x: x ** 2 + 0.1, pair, 2))
    assert not reps["tr_bound"].flags["nested_spans"]
    assert reps["tr_bound"].status == "hypothesis_unmet"
    assert reps["thm_lip/1"].status == "hypothesis_unmet"


def test_beta_near_one_is_not_applicable():
    pair = Grid1DPair(-1.0, 1.0, 10, 20)
    reps = _by_id(regression_bound_suite(lambda x: x, lambda x: x, lambda x: 0 * x, pair, 2))
    assert reps["ck_ntk_bound"].status == "not_applicable"
    assert reps["thm_mono/upper"].status == "not_applicable"


def test_wrong_sample_count_is_rejected():
    pair = Grid1DPair(-1.0, 1.0, 4, 8)
    with pytest.raises(ValueError):
        regression_bound_suite(np.zeros(5), _zero, _zero, pair, 2)


# ------------------------------------------------------------ 2D inequalities

_CLASS0 = LabelField(lambda a, b: -1.0 + 0.0 * a)


def test_loss_ineq1_on_random_values():
    pair = Grid2DPair(-1.0, 1.0, -1.0, 1.0, 3, 4, 6, 12)
    rng = np.random.default_rng(0)
    ax1, ax2 = pair.fine_axes(2)
    field = LabelField(lambda a, b: a - b)
    for _ in range(20):
        a = rng.standard_normal(len(ax1) * len(ax2))
        reps = _by_id(logistic_bound_suite(a, a + 0.5, field, pair, oversample=2))
        assert reps["loss_ineq1/ntk"].satisfied and reps["loss_ineq1/ck"].satisfied
        # psi_hat_CK - psi_hat_NTK is +0.5 on class 0 and -0.5 on class 1
        assert reps["log_tr_bound2"].constants["omega"] == pytest.approx(math.exp(0.5))


def test_omega_is_at_least_one_when_ck_loss_is_larger():
    pair = Grid2DPair(-1.0, 1.0, -1.0, 1.0, 3, 3, 6, 6)
    n = len(pair.fine_axes(1)[0]) * len(pair.fine_axes(1)[1])
    reps = _by_id(logistic_bound_suite(np.full(n, -2.0), np.full(n, -1.0), _CLASS0, pair, oversample=1))
    assert reps["log_tr_bound"].satisfied
    omega = reps["log_tr_bound2"].constants["omega"]
    assert omega == pytest.approx(math.e)
    assert reps["log_tr_bound2"].satisfied


def test_corner_max_flags():
    pair = Grid2DPair(0.0, 1.0, 0.0, 1.0, 1, 1, 2, 2)
    v = np.zeros((3, 3))
    v[0, 0] = 1.0
    assert corner_max_flags(v, pair).all()
    v[1, 1] = 2.0
    flags = corner_max_flags(v, pair)
    assert not flags[1, 1] and flags.sum() == 8


def test_corner_max_counting_lemma_can_fail():
    # One large corner value shared by four cells: every test node in those
    # cells may equal it, so the test loss exceeds tau1 tau2 times the
    # training loss even though the corner-max hypothesis holds.
    pair = Grid2DPair(0.0, 1.0, 0.0, 1.0, 2, 2, 4, 4)
    c, low = 5.0, -60.0
    test = np.full((5, 5), c)
    test[::2, ::2] = low
    test[2, 2] = c
    reps = _by_id(logistic_bound_suite(test.ravel(), test.ravel(), _CLASS0, pair, oversample=1))
    rep = reps["lemma_cormax/ntk"]
    assert rep.hypothesis_ok
    assert rep.lhs == pytest.approx(17 * softplus(np.array([c]))[0] + 8 * softplus(np.array([low]))[0])
    assert rep.status == "violated"


def test_loglip_lemma_with_constant_decision_values():
    pair = Grid2DPair(-1.0, 1.0, -1.0, 1.0, 4, 3, 8, 9)
    ax1, ax2 = pair.fine_axes(2)
    v = np.full(len(ax1) * len(ax2), 0.7)
    reps = _by_id(logistic_bound_suite(v, v, _CLASS0, pair, oversample=2))
    rep = reps["lemma_loglip/ntk"]
    assert rep.constants["L"] == 0.0 and rep.hypothesis_ok and rep.satisfied


def test_convergence_caveat():
    pair = Grid2DPair(-1.0, 1.0, -1.0, 1.0, 2, 2, 4, 4)
    n = 25
    reps = _by_id(logistic_bound_suite(np.zeros(n), np.zeros(n), _CLASS0, pair, converged=(True, False),
                                       oversample=1))
    assert reps["log_tr_bound"].status == "hypothesis_unmet"
    assert reps["thm_cormax/lower"].flags["non_converged"]
    assert reps["thm_cormax/lower"].hypothesis_ok == reps["thm_cormax/lower"].flags["corner_max_ntk"]


def test_callables_and_arrays_agree():
    pair = Grid2DPair(-1.0, 1.0, -1.0, 1.0, 3, 2, 6, 4)
    field = LabelField(lambda a, b: a + b)

    def psi(z):
        return np.sin(z[:, 0]) - z[:, 1]
    ax1, ax2 = pair.fine_axes(3)
    arr = psi(Grid2DPair._mesh(ax1, ax2))
    a = logistic_bound_suite(psi, psi, field, pair, oversample=3)
    b = logistic_bound_suite(arr, arr, field, pair, oversample=3)
    assert reports_to_json(a) == reports_to_json(b)
