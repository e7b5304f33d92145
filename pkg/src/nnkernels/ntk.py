"""Empirical neural tangent kernel of an Mlp.

Two pairwise algorithms are provided: a backward sweep that accumulates the
per-layer contributions ``(1 + x.x^) Y Y^T`` while growing the products
``Y = prod_s [W^(s) (x) sigma'(y^(s-1))]`` from the output down, and a forward
sweep that nests the same sum Horner-style.  ``ntk_oracle`` builds the full
parameter Jacobian and is the ground truth for both.

Cost notes (batch of n inputs, hidden width W, depth L, O outputs): the
backward sweep stores ``nOW + n^2 O^2 + n^2 L + nLW`` numbers and does about
``nOLW^2 + n^2 O^2 LW`` flops; the forward sweep stores ``n^2 W^2`` and does
``n^2 W^2 (LW + O)``.  Backward is the better choice whenever O < W.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .nn import Mlp, ForwardTrace, forward, backprop

ORACLE_MAX_PARAMS = 100_000


class AlgorithmChoice(str, enum.Enum):
    BACKWARD = "backward"
    FORWARD = "forward"
    AUTO = "auto"


class KernelKind(str, enum.Enum):
    NTK = "ntk"
    CK = "ck"
    E = "e"


@dataclass
class KernelGram:
    matrix: np.ndarray
    kind: KernelKind
    nodes_a: np.ndarray
    nodes_b: np.ndarray
    algorithm: Optional[str] = None
    meta: dict = field(default_factory=dict)

    @property
    def symmetric(self):
        return self.nodes_a is self.nodes_b or (
            self.nodes_a.shape == self.nodes_b.shape and np.array_equal(self.nodes_a, self.nodes_b))

    def to_csv(self, path):
        write_matrix_csv(path, self.matrix)


def write_matrix_csv(path, matrix):
    """Row-major CSV with a header row of column (node) indices."""
    matrix = np.atleast_2d(matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(range(matrix.shape[1]))
        for row in matrix:
            w.writerow(repr(float(v)) for v in row)


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]])


def colwise(A, b):
    """A (x) b = A diag(b): column j of A scaled by b_j."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.shape != (A.shape[1],):
        raise ValueError(f"cannot scale columns of {A.shape} by a vector of shape {b.shape}")
    return A * b[None, :]


def _check_trace(net: Mlp, trace: ForwardTrace):
    if len(trace.pre) != len(net.weights) or len(trace.post) != len(net.weights):
        raise ValueError("trace depth does not match the network")
    for l, y in enumerate(trace.pre):
        if y.shape != (1, net.dims[l + 1]):
            raise ValueError("pair algorithms need single-input traces produced by this network")


def ntk_pair_backward(net: Mlp, tx: ForwardTrace, txh: ForwardTrace, include_last=True):
    """K(x, x^) (d_out x d_out) by the backward sweep.

    With ``include_last=False`` the last-layer term is dropped, giving the
    E = NTK - CK part.
    """
    _check_trace(net, tx)
    _check_trace(net, txh)
    L1 = len(net.weights)  # L + 1
    x = [v[0] for v in tx.post]
    xh = [v[0] for v in txh.post]
    sp = net.activation.derivative
    d_out = net.n_out
    Y = np.eye(d_out)
    Yh = np.eye(d_out)
    K = (1.0 + x[L1 - 1] @ xh[L1 - 1]) * np.eye(d_out) if include_last else np.zeros((d_out, d_out))
    for l in range(L1, 1, -1):  # paper layer index l = L+1 .. 2
        W = net.weights[l - 1]
        Y = Y @ colwise(W, sp(tx.pre[l - 2][0]))
        Yh = Yh @ colwise(W, sp(txh.pre[l - 2][0]))
        K = K + (1.0 + x[l - 2] @ xh[l - 2]) * (Y @ Yh.T)
    return K


def ntk_pair_forward(net: Mlp, tx: ForwardTrace, txh: ForwardTrace, include_last=True):
    """K(x, x^) by the forward (Horner) sweep."""
    _check_trace(net, tx)
    _check_trace(net, txh)
    L1 = len(net.weights)
    sp = net.activation.derivative
    K = (1.0 + tx.post[0][0] @ txh.post[0][0]) * np.eye(net.dims[1])
    for l in range(2, L1 + 1):
        W = net.weights[l - 1]
        A = colwise(W, sp(tx.pre[l - 2][0]))
        Ah = colwise(W, sp(txh.pre[l - 2][0]))
        K = A @ K @ Ah.T
        if l < L1 or include_last:
            K = K + (1.0 + tx.post[l - 1][0] @ txh.post[l - 1][0]) * np.eye(net.dims[l])
    return K


def param_jacobian(net: Mlp, x):
    """d output / d theta for one input, shape (d_out, |theta|), ordered like ``flat_params``."""
    if net.n_params > ORACLE_MAX_PARAMS:
        raise ValueError(f"network has {net.n_params} parameters; the explicit Jacobian "
                         f"is limited to {ORACLE_MAX_PARAMS}")
    trace = forward(net, np.asarray(x, dtype=float).reshape(1, -1))
    rows = []
    for i in range(net.n_out):
        e = np.zeros((1, net.n_out))
        e[0, i] = 1.0
        grads = backprop(net, trace, e)
        rows.append(np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads]))
    return np.array(rows)


def ntk_oracle(net: Mlp, x, xh):
    """Explicit sum over all parameters of d y_i/d theta * d y^_j/d theta."""
    return param_jacobian(net, x) @ param_jacobian(net, xh).T


def resolve_algorithm(net: Mlp, choice=AlgorithmChoice.AUTO) -> AlgorithmChoice:
    choice = AlgorithmChoice(choice)
    if choice is not AlgorithmChoice.AUTO:
        return choice
    return AlgorithmChoice.BACKWARD if net.n_out < max(net.dims[1:-1]) else AlgorithmChoice.FORWARD


def default_contraction(net: Mlp):
    """c with scalar kernel c^T K c: the output itself, or f_1 - f_2 for two logits."""
    if net.n_out == 1:
        return np.ones(1)
    if net.n_out == 2:
        return np.array([1.0, -1.0])
    raise ValueError("networks with more than two outputs need an explicit contraction vector")


def output_gradients(net: Mlp, trace: ForwardTrace, contraction):
    """Rows c^T d y^(L+1) / d y^(l) for every input, l = 1..L+1 (batched backward sweep)."""
    c = np.asarray(contraction, dtype=float)
    n = trace.batch_size
    g = np.tile(c, (n, 1))
    grads = [g]
    sp = net.activation.derivative
    for l in range(len(net.weights) - 1, 0, -1):
        g = (g @ net.weights[l]) * sp(trace.pre[l - 1])
        grads.append(g)
    grads.reverse()
    return grads


def _nodes(net, nodes):
    x = np.asarray(nodes, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, net.dims[0]) if net.dims[0] > 1 else x.reshape(-1, 1)
    if x.shape[1] != net.dims[0]:
        raise ValueError(f"nodes have dimension {x.shape[1]}, network expects {net.dims[0]}")
    return x


def _mirror_upper(H):
    return np.triu(H) + np.triu(H, 1).T


def _gram_backward(net, ta, tb, c, include_last):
    ga = output_gradients(net, ta, c)
    gb = ga if tb is ta else output_gradients(net, tb, c)
    L1 = len(net.weights)
    H = np.zeros((ta.batch_size, tb.batch_size))
    start = 0 if include_last else 1
    for k in range(start, L1):
        # parameters of layer L1 - k: weights see x^(L1-k-1), gradient is ga[L1-k-1]
        l = L1 - 1 - k
        xa, xb = ta.post[l], tb.post[l]
        H += (1.0 + xa @ xb.T) * (ga[l] @ gb[l].T)
    return H


def _gram_forward(net, ta, tb, c, include_last, symmetric):
    L1 = len(net.weights)
    sp = net.activation.derivative
    na, nb = ta.batch_size, tb.batch_size
    H = np.zeros((na, nb))
    for i in range(na):
        j0 = i if symmetric else 0
        cols = slice(j0, nb)
        K = (1.0 + tb.post[0][cols] @ ta.post[0][i])[:, None, None] * np.eye(net.dims[1])
        for l in range(2, L1 + 1):
            W = net.weights[l - 1]
            A = W * sp(ta.pre[l - 2][i])[None, :]
            Ah = W[None, :, :] * sp(tb.pre[l - 2][cols])[:, None, :]
            K = (A @ K) @ Ah.transpose(0, 2, 1)
            if l < L1 or include_last:
                dots = 1.0 + tb.post[l - 1][cols] @ ta.post[l - 1][i]
                K = K + dots[:, None, None] * np.eye(net.dims[l])
        H[i, cols] = np.einsum("i,mij,j->m", c, K, c)
    return _mirror_upper(H) if symmetric else H


def ntk_gram(net: Mlp, nodes_a, nodes_b=None, choice=AlgorithmChoice.AUTO, contraction=None,
             kind=KernelKind.NTK) -> KernelGram:
    """Scalar NTK (or E = NTK - last-layer term) Gram between two node sets.

    Entry (i, j) is c^T K(a_i, b_j) c with c from ``default_contraction`` unless
    given.  When ``nodes_b`` is omitted the Gram is exactly symmetric.
    """
    kind = KernelKind(kind)
    if kind is KernelKind.CK:
        raise ValueError("use ck.ck_gram for the conjugate kernel")
    include_last = kind is KernelKind.NTK
    c = default_contraction(net) if contraction is None else np.asarray(contraction, dtype=float)
    if c.shape != (net.n_out,):
        raise ValueError("contraction length must equal the number of outputs")
    a = _nodes(net, nodes_a)
    symmetric = nodes_b is None
    b = a if symmetric else _nodes(net, nodes_b)
    algo = resolve_algorithm(net, choice)
    ta = forward(net, a)
    tb = ta if symmetric else forward(net, b)
    if algo is AlgorithmChoice.BACKWARD:
        H = _gram_backward(net, ta, tb, c, include_last)
        if symmetric:
            H = _mirror_upper(H)
    else:
        H = _gram_forward(net, ta, tb, c, include_last, symmetric)
    return KernelGram(H, kind, a, b, algo.value)


def ntk_features(net: Mlp, nodes, contraction=None):
    """Jacobian feature map of c^T f_NN, shape (|theta|, n), ordered like ``flat_params``."""
    c = default_contraction(net) if contraction is None else np.asarray(contraction, dtype=float)
    x = _nodes(net, nodes)
    trace = forward(net, x)
    grads = output_gradients(net, trace, c)
    n = x.shape[0]
    blocks = []
    for l, g in enumerate(grads):
        dW = g[:, :, None] * trace.post[l][:, None, :]
        blocks.append(dW.reshape(n, -1))
        blocks.append(g)
    return np.concatenate(blocks, axis=1).T
