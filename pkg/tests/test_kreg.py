import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnkernels.ck import ck_features, ck_gram
from nnkernels.grids import Grid1DPair, WeightedGrid
from nnkernels.kernels import kernel_rows
from nnkernels.kreg import (RegressionFit, fit_feature_form, fit_kernel_form, fit_ortho_form, ortho_basis,
                            predict, predict_from_features, predict_from_kernel_rows, projection_diagnostics,
                            write_predictions_csv)
from nnkernels.ntk import ntk_features, ntk_gram

from conftest import random_net


def _problem(seed, n=30, k=8):
    rng = np.random.default_rng(seed)
    grid = WeightedGrid(np.sort(rng.uniform(-1, 1, n)), rng.uniform(0.2, 1.0, n))
    Phi = rng.standard_normal((k, n))
    y = rng.standard_normal(n)
    return grid, Phi, y


def _loss(grid, y, pred):
    return grid.norm(y - pred) ** 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_feature_and_kernel_forms_reach_the_same_loss(seed):
    grid, Phi, y = _problem(seed)
    kf = fit_kernel_form(Phi.T @ Phi, grid, y)
    ff = fit_feature_form(Phi, grid, y)
    assert kf.rank == ff.rank == 8
    assert _loss(grid, y, kf.train_predictions) == pytest.approx(_loss(grid, y, ff.train_predictions), rel=1e-6)
    # same function, not only the same loss
    assert np.allclose(kf.train_predictions, ff.train_predictions, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_gram_spectrum_is_squared_feature_spectrum(seed):
    grid, Phi, _ = _problem(seed)
    sw = np.sqrt(grid.weights)
    s = np.linalg.svd(sw[:, None] * Phi.T, compute_uv=False)
    lam = np.sort(np.linalg.eigvalsh(sw[:, None] * (Phi.T @ Phi) * sw[None, :]))[::-1][: s.size]
    assert np.allclose(lam, s ** 2, rtol=1e-8)


def test_kernel_fit_interpolates_full_rank_problem():
    grid, Phi, y = _problem(1, n=6, k=12)
    fit = fit_kernel_form(Phi.T @ Phi, grid, y)
    assert fit.rank == 6
    assert np.allclose(fit.train_predictions, y, atol=1e-10)


def test_optimal_residual_is_orthogonal_to_features():
    grid, Phi, y = _problem(2)
    fit = fit_feature_form(Phi, grid, y)
    r = y - fit.train_predictions
    assert np.allclose(grid.inner(Phi.T, r[:, None]), 0, atol=1e-10)


def test_kernel_form_validation():
    grid, Phi, y = _problem(3)
    H = Phi.T @ Phi
    with pytest.raises(ValueError):
        fit_kernel_form(H[:-1, :-1], grid, y)
    with pytest.raises(ValueError):
        fit_kernel_form(H + np.triu(np.ones_like(H), 1), grid, y)
    with pytest.raises(ValueError):
        fit_kernel_form(H, grid, y, rcond=0)
    with pytest.raises(ValueError):
        fit_feature_form(Phi[:, :-1], grid, y)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_ortho_basis_properties(seed):
    grid, Phi, _ = _problem(seed)
    bf = ortho_basis(grid, features=Phi)
    bk = ortho_basis(grid, gram=Phi.T @ Phi)
    w = grid.weights[:, None]
    for b in (bf, bk):
        G = b.node_values.T @ (w * b.node_values)
        assert np.max(np.abs(G - np.eye(b.rank))) <= 1e-10
    # s_j^2 = sum_k <u_j, Phi_k>^2
    proj = bf.node_values.T @ (w * Phi.T)
    assert np.allclose(np.sum(proj ** 2, axis=1), bf.singular_values ** 2, rtol=1e-8)
    assert bf.rank == bk.rank
    assert np.allclose(bf.singular_values, bk.singular_values, rtol=1e-8)
    signs = np.sign(np.sum(bf.node_values * bk.node_values * grid.weights[:, None], axis=0))
    assert np.max(np.abs(bf.node_values - signs * bk.node_values)) <= 1e-6


def test_basis_extends_off_the_grid_consistently(rng):
    net = random_net((1, 6, 6, 1), "tanh", 4)
    pair = Grid1DPair(-1.0, 1.0, 10, 30)
    Phi = ck_features(net, pair.train_nodes)
    bf = ortho_basis(pair.train, features=Phi, kernel_kind="ck")
    bk = ortho_basis(pair.train, gram=ck_gram(net, pair.train_nodes))
    # at training nodes the extension reproduces the stored values
    assert np.allclose(bf.from_features(Phi), bf.node_values, atol=1e-10)
    rows = kernel_rows(net, "ck", pair.train_nodes, pair.train_nodes)
    # the kernel route divides by s_j^2, so small modes carry more rounding
    assert np.allclose(bk.from_kernel_rows(rows), bk.node_values, atol=1e-6)
    q = pair.test_nodes
    uf = bf.evaluate(net, q)
    uk = bk.evaluate(net, q)
    assert np.allclose(np.abs(uf), np.abs(uk), atol=1e-6)


def test_ortho_projection_matches_least_squares():
    grid, Phi, y = _problem(5)
    basis = ortho_basis(grid, features=Phi)
    ortho = fit_ortho_form(basis, grid, y)
    lsq = fit_feature_form(Phi, grid, y)
    assert np.allclose(ortho.train_predictions, lsq.train_predictions, atol=1e-10)
    q = np.random.default_rng(0).standard_normal((8, 5))
    assert np.allclose(predict_from_features(ortho, q), predict_from_features(lsq, q), atol=1e-10)


def test_ortho_basis_input_checks():
    grid, Phi, _ = _problem(6)
    with pytest.raises(ValueError):
        ortho_basis(grid)
    with pytest.raises(ValueError):
        ortho_basis(grid, features=Phi, gram=Phi.T @ Phi)
    with pytest.raises(ValueError):
        ortho_basis(WeightedGrid(grid.nodes, np.r_[0.0, grid.weights[1:]]), features=Phi)
    with pytest.raises(ValueError):
        ortho_basis(grid, features=np.zeros_like(Phi))


def test_predict_round_trip_through_json(tmp_path):
    net = random_net((1, 8, 1), "tanh", 2)
    pair = Grid1DPair(-1.0, 1.0, 12, 24)
    y = np.exp(3 * pair.train_nodes)
    fit = fit_kernel_form(ntk_gram(net, pair.train_nodes), pair.train, y)
    path = tmp_path / "fit.json"
    fit.save(path)
    back = RegressionFit.load(path)
    q = pair.test_nodes
    assert np.array_equal(predict(back, net, q), predict(fit, net, q))
    with pytest.raises(ValueError):
        predict(fit, net, q, kernel_kind="ck")
    with pytest.raises(ValueError):
        predict_from_features(fit, ntk_features(net, q))
    data = path.read_text().replace('"training_nodes": [[-1.0', '"training_nodes": [[-0.5')
    path.write_text(data)
    with pytest.raises(ValueError):
        RegressionFit.load(path)


def test_kernel_prediction_at_training_nodes():
    net = random_net((1, 8, 1), "tanh", 3)
    pair = Grid1DPair(-1.0, 1.0, 10, 20)
    y = np.cos(np.exp(3 * pair.train_nodes))
    fit = fit_kernel_form(ntk_gram(net, pair.train_nodes), pair.train, y)
    rows = kernel_rows(net, "ntk", pair.train_nodes, pair.train_nodes)
    assert np.allclose(predict_from_kernel_rows(fit, rows), fit.train_predictions, atol=1e-9)


def test_projection_diagnostics_splits():
    grid, Phi, y = _problem(7)
    fn = fit_feature_form(Phi, grid, y).train_predictions
    fc = fit_feature_form(Phi[:3], grid, y).train_predictions
    rep = projection_diagnostics(y, grid, fn, fc)
    assert rep.split_lhs == pytest.approx(rep.split_rhs, rel=1e-10)
    assert rep.resplit_lhs == pytest.approx(rep.resplit_rhs, rel=1e-10)
    assert 0 <= rep.beta <= 1
    assert rep.residual_ntk <= rep.residual_ck
    assert not projection_diagnostics(np.zeros_like(y), grid, fn).beta_defined


def test_predictions_csv(tmp_path):
    write_predictions_csv(tmp_path / "p.csv", np.array([0.0, 0.5]), [1.0, 2.0], [1.5, 2.0])
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert rows[0] == {"x0": "0.0", "target": "1.0", "prediction": "1.5", "residual": "-0.5"}
