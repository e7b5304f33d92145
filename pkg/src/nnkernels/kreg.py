"""Weighted kernel regression in kernel form, feature form and orthonormal-basis form.

All three forms solve the same weighted least-squares problem on the
training grid; they differ in conditioning.  The kernel form inverts
W^1/2 H W^1/2, whose singular values are the squares of those of the weighted
feature matrix, so its pseudo-inverse loses about twice as many digits as
the feature form.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .grids import WeightedGrid
from .kernels import feature_map, kernel_rows
from .ntk import KernelGram, KernelKind

DEFAULT_RCOND = 1e-12


def node_hash(nodes):
    return hashlib.sha256(np.ascontiguousarray(nodes, dtype=float).tobytes()).hexdigest()[:16]


@dataclass
class OrthoBasis:
    """Basis u_1..u_r orthonormal in <., .>_0, stored by its training-node values."""

    node_values: np.ndarray        # (n_train, r): u_j(x_i)
    singular_values: np.ndarray    # (r,) retained s_j, non-increasing
    route: str                     # "features" or "kernel"
    weights: np.ndarray
    V: Optional[np.ndarray] = None  # (K, r) change of basis, features route only
    all_singular_values: Optional[np.ndarray] = None
    kernel_kind: Optional[KernelKind] = None
    train_nodes: Optional[np.ndarray] = None

    @property
    def rank(self):
        return self.node_values.shape[1]

    def from_features(self, Phi):
        """u_j(z) = s_j^-1 sum_k V_kj Phi_k(z); rows are query nodes."""
        if self.V is None:
            raise ValueError("basis was built from a kernel; evaluate it with kernel rows")
        return (np.asarray(Phi).T @ self.V) / self.singular_values

    def from_kernel_rows(self, rows):
        """u_j(z) = s_j^-2 <u_j, ker(., z)>_0 with rows[q, i] = ker(z_q, x_i)."""
        return (np.asarray(rows) @ (self.weights[:, None] * self.node_values)) / self.singular_values ** 2

    def evaluate(self, net, nodes):
        if self.route == "features":
            return self.from_features(feature_map(net, self.kernel_kind, nodes))
        return self.from_kernel_rows(kernel_rows(net, self.kernel_kind, self.train_nodes, nodes))


def _sqrt_weights(grid: WeightedGrid, strict=False):
    w = grid.weights
    if strict and np.any(w <= 0):
        raise ValueError("orthonormal bases need strictly positive weights")
    return np.sqrt(w)


def _fix_signs(node_values, *others):
    idx = np.argmax(np.abs(node_values), axis=0)
    signs = np.sign(node_values[idx, np.arange(node_values.shape[1])])
    signs[signs == 0] = 1.0
    return (node_values * signs,) + tuple(None if o is None else o * signs for o in others)


def ortho_basis(grid: WeightedGrid, features=None, gram=None, rcond=DEFAULT_RCOND,
                kernel_kind=None) -> OrthoBasis:
    """Orthonormal basis of the feature span, from features (K, n) or from a Gram (n, n).

    The features route takes the SVD of W^1/2 Phi^T and keeps s_j > rcond s_1;
    the kernel route diagonalizes W^1/2 H W^1/2 = U S^2 U^T and keeps
    s_j^2 > rcond s_1^2.  Each u_j is signed so its largest-magnitude node
    value is positive.
    """
    if (features is None) == (gram is None):
        raise ValueError("pass exactly one of features or gram")
    sw = _sqrt_weights(grid, strict=True)
    if features is not None:
        Phi = np.asarray(features, dtype=float)
        if Phi.shape[1] != len(grid):
            raise ValueError("features must have one column per training node")
        U, s, Vt = np.linalg.svd(sw[:, None] * Phi.T, full_matrices=False)
        r = int(np.sum(s > rcond * s[0])) if s.size and s[0] > 0 else 0
        if r == 0:
            raise ValueError("feature matrix has rank 0")
        nodes_u, V = _fix_signs(U[:, :r] / sw[:, None], Vt[:r].T)
        return OrthoBasis(nodes_u, s[:r], "features", grid.weights, V, s, kernel_kind, grid.nodes)
    H = gram.matrix if isinstance(gram, KernelGram) else np.asarray(gram, dtype=float)
    if kernel_kind is None and isinstance(gram, KernelGram):
        kernel_kind = gram.kind
    lam, U = np.linalg.eigh(sw[:, None] * H * sw[None, :])
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    s_all = np.sqrt(np.clip(lam, 0.0, None))
    r = int(np.sum(lam > rcond * lam[0])) if lam[0] > 0 else 0
    if r == 0:
        raise ValueError("kernel matrix has rank 0")
    (nodes_u,) = _fix_signs(U[:, :r] / sw[:, None])
    return OrthoBasis(nodes_u, s_all[:r], "kernel", grid.weights, None, s_all, kernel_kind, grid.nodes)


@dataclass
class RegressionFit:
    form: str                      # "kernel", "feature" or "ortho"
    coefficients: np.ndarray
    kernel_kind: KernelKind
    train_nodes: np.ndarray
    rcond: float
    rank: int
    train_predictions: np.ndarray
    basis: Optional[OrthoBasis] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "form": self.form,
            "kernel_kind": KernelKind(self.kernel_kind).value,
            "coefficients": self.coefficients.tolist(),
            "rcond": self.rcond,
            "rank": self.rank,
            "training_node_hash": node_hash(self.train_nodes),
            "training_nodes": self.train_nodes.tolist(),
        }
        if self.basis is not None:
            out["basis"] = {
                "route": self.basis.route,
                "node_values": self.basis.node_values.tolist(),
                "singular_values": self.basis.singular_values.tolist(),
                "weights": self.basis.weights.tolist(),
                "V": None if self.basis.V is None else self.basis.V.tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, data):
        nodes = np.array(data["training_nodes"], dtype=float)
        if node_hash(nodes) != data["training_node_hash"]:
            raise ValueError("training nodes do not match their recorded hash")
        kind = KernelKind(data["kernel_kind"])
        basis = None
        if data.get("basis"):
            b = data["basis"]
            basis = OrthoBasis(np.array(b["node_values"]), np.array(b["singular_values"]), b["route"],
                               np.array(b["weights"]), None if b["V"] is None else np.array(b["V"]),
                               None, kind, nodes)
        return cls(data["form"], np.array(data["coefficients"], dtype=float), kind, nodes,
                   data["rcond"], data["rank"], np.array([]), basis)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_kernel_form(H, grid: WeightedGrid, y, rcond=DEFAULT_RCOND, kernel_kind=None) -> RegressionFit:
    """delta* = W^1/2 (W^1/2 H W^1/2)^+ W^1/2 y, so that f(z) = sum_j delta_j ker(x_j, z)."""
    if isinstance(H, KernelGram):
        kernel_kind = H.kind if kernel_kind is None else kernel_kind
        H = H.matrix
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = len(grid)
    if H.shape != (n, n) or y.shape != (n,):
        raise ValueError("Gram and targets must be indexed by the training nodes")
    if not 0 < rcond < 1:
        raise ValueError("rcond must lie in (0, 1)")
    if np.max(np.abs(H - H.T)) > 1e-12 * max(np.max(np.abs(H)), 1e-300):
        raise ValueError("kernel matrix is not symmetric")
    sw = _sqrt_weights(grid)
    H_hat = sw[:, None] * H * sw[None, :]
    lam, U = np.linalg.eigh(H_hat)
    keep = np.abs(lam) > rcond * np.max(np.abs(lam)) if np.any(lam) else np.zeros_like(lam, dtype=bool)
    pinv_y = U[:, keep] @ ((U[:, keep].T @ (sw * y)) / lam[keep])
    delta = sw * pinv_y
    return RegressionFit("kernel", delta, KernelKind(kernel_kind or KernelKind.NTK), grid.nodes, rcond,
                         int(keep.sum()), H @ delta)


def fit_feature_form(Phi, grid: WeightedGrid, y, rcond=DEFAULT_RCOND, kernel_kind=KernelKind.CK) -> RegressionFit:
    """gamma* minimizing sum_i w_i |y_i - gamma . Phi(x_i)|^2 by SVD least squares."""
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if Phi.ndim != 2 or Phi.shape[1] != len(grid) or y.shape != (len(grid),):
        raise ValueError("features must be (K, n_train) with one target per node")
    sw = _sqrt_weights(grid)
    gamma, _, rank, _ = np.linalg.lstsq(sw[:, None] * Phi.T, sw * y, rcond=rcond)
    return RegressionFit("feature", gamma, KernelKind(kernel_kind), grid.nodes, rcond, int(rank), Phi.T @ gamma)


def fit_ortho_form(basis: OrthoBasis, grid: WeightedGrid, y) -> RegressionFit:
    """Coefficients <f, u_j>_0 of the projection onto the basis."""
    coeffs = grid.inner(basis.node_values, np.asarray(y, dtype=float)[:, None])
    return RegressionFit("ortho", coeffs, basis.kernel_kind, grid.nodes, np.nan, basis.rank,
                         basis.node_values @ coeffs, basis)


def predict_from_kernel_rows(fit: RegressionFit, rows):
    if fit.form == "kernel":
        return np.asarray(rows) @ fit.coefficients
    if fit.form == "ortho" and fit.basis.route == "kernel":
        return fit.basis.from_kernel_rows(rows) @ fit.coefficients
    raise ValueError(f"a {fit.form}-form fit cannot be evaluated from kernel rows")


def predict_from_features(fit: RegressionFit, Phi):
    if fit.form == "feature":
        return np.asarray(Phi).T @ fit.coefficients
    if fit.form == "ortho" and fit.basis.route == "features":
        return fit.basis.from_features(Phi) @ fit.coefficients
    raise ValueError(f"a {fit.form}-form fit cannot be evaluated from features")


def predict(fit: RegressionFit, net, nodes, kernel_kind=None):
    """Evaluate a fit at query nodes using the kernel or features of ``net``."""
    if kernel_kind is not None and KernelKind(kernel_kind) is not KernelKind(fit.kernel_kind):
        raise ValueError(f"fit uses the {fit.kernel_kind.value} kernel, not {KernelKind(kernel_kind).value}")
    if fit.form == "kernel":
        return predict_from_kernel_rows(fit, kernel_rows(net, fit.kernel_kind, fit.train_nodes, nodes))
    if fit.form == "feature":
        return predict_from_features(fit, feature_map(net, fit.kernel_kind, nodes))
    return fit.basis.evaluate(net, nodes) @ fit.coefficients


@dataclass
class ProjectionReport:
    beta: float
    beta_defined: bool
    norm_f: float
    norm_f_ntk: float
    residual_ntk: float
    residual_ck: float
    ntk_minus_ck: float
    split_lhs: float   # ||f||^2
    split_rhs: float   # ||f_NTK||^2 + ||f - f_NTK||^2
    resplit_lhs: float  # ||f - f_CK||^2
    resplit_rhs: float  # ||f_NTK - f_CK||^2 + ||f - f_NTK||^2

    def to_dict(self):
        return dict(self.__dict__)


def projection_diagnostics(f_values, grid: WeightedGrid, ntk_values, ck_values=None) -> ProjectionReport:
    """beta = ||P_NTK f||_0 / ||f||_0 and the Pythagorean splits, from training-node values."""
    f = np.asarray(f_values, dtype=float)
    fn = np.asarray(ntk_values, dtype=float)
    fc = fn if ck_values is None else np.asarray(ck_values, dtype=float)
    nf = grid.norm(f)
    nfn = grid.norm(fn)
    rn = grid.norm(f - fn)
    rc = grid.norm(f - fc)
    gap = grid.norm(fn - fc)
    defined = nf > 0
    beta = nfn / nf if defined else float("nan")
    return ProjectionReport(beta, defined, nf, nfn, rn, rc, gap, nf ** 2, nfn ** 2 + rn ** 2,
                            rc ** 2, gap ** 2 + rn ** 2)


def write_predictions_csv(path, nodes, target, prediction):
    nodes = np.asarray(nodes, dtype=float)
    nodes = nodes.reshape(len(nodes), -1)
    target = np.asarray(target, dtype=float)
    prediction = np.asarray(prediction, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(nodes.shape[1])] + ["target", "prediction", "residual"])
        for z, t, p in zip(nodes, target, prediction):
            w.writerow([repr(float(v)) for v in z] + [repr(float(t)), repr(float(p)), repr(float(t - p))])
