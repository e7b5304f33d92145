"""Kernel logistic regression solved by damped Newton iterations."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .kernels import kernel_rows
from .kreg import node_hash
from .nn import sigmoid, softplus
from .ntk import KernelGram, KernelKind

MAX_HALVINGS = 30


@dataclass
class LogisticFit:
    alpha: np.ndarray
    kernel_kind: KernelKind
    train_nodes: Optional[np.ndarray]
    iterations: int
    grad_norm: float
    damping: float
    converged: bool
    stop_reason: str  # "gradient_tol", "max_iter" or "line_search"
    loss_history: list = field(default_factory=list)

    @property
    def loss(self):
        return self.loss_history[-1]

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "kernel_kind": KernelKind(self.kernel_kind).value,
            "training_nodes": None if self.train_nodes is None else self.train_nodes.tolist(),
            "training_node_hash": None if self.train_nodes is None else node_hash(self.train_nodes),
            "convergence": {
                "iterations": self.iterations,
                "grad_norm": self.grad_norm,
                "damping": self.damping,
                "converged": self.converged,
                "stop_reason": self.stop_reason,
                "loss_history": self.loss_history,
            },
        }

    @classmethod
    def from_dict(cls, data):
        c = data["convergence"]
        nodes = None if data["training_nodes"] is None else np.array(data["training_nodes"], dtype=float)
        return cls(np.array(data["alpha"], dtype=float), KernelKind(data["kernel_kind"]), nodes,
                   c["iterations"], c["grad_norm"], c["damping"], c["converged"], c["stop_reason"],
                   list(c["loss_history"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _matrix(H):
    return H.matrix if isinstance(H, KernelGram) else np.asarray(H, dtype=float)


def _labels(labels):
    chi = np.asarray(labels)
    if not np.all((chi == 0) | (chi == 1)):
        raise ValueError("labels must be 0 or 1")
    return chi.astype(float)


def logistic_loss_from_values(t, labels):
    """sum_i chi_i ln(1 + e^-t_i) + (1 - chi_i) ln(1 + e^t_i)."""
    chi = _labels(labels)
    t = np.asarray(t, dtype=float)
    return float(np.sum(chi * softplus(-t) + (1.0 - chi) * softplus(t)))


def logistic_loss(H, alpha, labels):
    """Cross-entropy of the kernel classifier; rows of H are evaluation nodes."""
    return logistic_loss_from_values(_matrix(H) @ np.asarray(alpha, dtype=float), labels)


def newton_fit(H, labels, tol=1e-8, max_iter=100, kernel_kind=None, train_nodes=None) -> LogisticFit:
    """Minimize the training cross-entropy over alpha.

    Each step solves (H^T D H + lam I) d = -grad with D = diag(p (1 - p)) and
    lam = 1e-8 trace(H^T D H) / n, then halves the step until the loss
    strictly decreases.
    """
    if isinstance(H, KernelGram):
        kernel_kind = H.kind if kernel_kind is None else kernel_kind
        train_nodes = H.nodes_a if train_nodes is None else train_nodes
    K = _matrix(H)
    chi = _labels(labels)
    n = K.shape[0]
    if K.shape != (n, n) or chi.shape != (n,):
        raise ValueError("H must be square and indexed like the labels")
    alpha = np.zeros(n)
    t = K @ alpha
    loss = logistic_loss_from_values(t, chi)
    history = [loss]
    lam = 0.0
    it = 0
    while True:
        p = sigmoid(t)
        grad = K.T @ (p - chi)
        if np.max(np.abs(grad)) <= tol:
            reason = "gradient_tol"
            break
        if it >= max_iter:
            reason = "max_iter"
            break
        hess = K.T @ ((p * (1.0 - p))[:, None] * K)
        lam = max(1e-8 * np.trace(hess) / n, np.finfo(float).tiny)
        step = np.linalg.solve(hess + lam * np.eye(n), -grad)
        size = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = alpha + size * step
            t_trial = K @ trial
            trial_loss = logistic_loss_from_values(t_trial, chi)
            if trial_loss < loss:
                break
            size *= 0.5
        else:
            reason = "line_search"
            break
        alpha, t, loss = trial, t_trial, trial_loss
        history.append(loss)
        it += 1
    g = float(np.max(np.abs(grad)))
    return LogisticFit(alpha, KernelKind(kernel_kind or KernelKind.NTK), train_nodes, it, g, float(lam),
                       reason == "gradient_tol", reason, history)


def decision_values(fit: LogisticFit, net, nodes):
    """psi(z) = sum_j ker(z, x_j) alpha_j."""
    if fit.train_nodes is None:
        raise ValueError("fit does not record its training nodes")
    return kernel_rows(net, fit.kernel_kind, fit.train_nodes, nodes) @ fit.alpha


def predict_prob(fit: LogisticFit, net, nodes, kernel_kind=None):
    if kernel_kind is not None and KernelKind(kernel_kind) is not KernelKind(fit.kernel_kind):
        raise ValueError(f"fit uses the {fit.kernel_kind.value} kernel, not {KernelKind(kernel_kind).value}")
    return sigmoid(decision_values(fit, net, nodes))


def predict_class(prob):
    """Class 1 iff p > 1/2; a tie goes to class 0."""
    return (np.asarray(prob) > 0.5).astype(int)


def psi_values(fit: LogisticFit, net, nodes, labels, rows=None):
    """(psi, psi_hat) with psi_hat = (1 - 2 eta) psi.

    ``rows`` (kernel rows against the training nodes) can be passed to skip
    recomputing the kernel.
    """
    eta = _labels(labels)
    psi = np.asarray(rows) @ fit.alpha if rows is not None else decision_values(fit, net, nodes)
    return psi, (1.0 - 2.0 * eta) * psi


def write_classification_csv(path, nodes, labels, psi, prob):
    nodes = np.asarray(nodes, dtype=float)
    nodes = nodes.reshape(len(nodes), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(nodes.shape[1])] + ["label", "psi", "p", "predicted"])
        for z, lab, s, p in zip(nodes, labels, psi, prob):
            w.writerow([repr(float(v)) for v in z] + [int(lab), repr(float(s)), repr(float(p)),
                                                       int(p > 0.5)])
