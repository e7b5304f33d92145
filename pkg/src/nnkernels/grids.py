"""Training/test node layouts and the weighted discrete norms built on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class WeightedGrid:
    nodes: np.ndarray    # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes.reshape(-1, 1)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.shape[0] != weights.shape[0]:
            raise ValueError("nodes and weights differ in length")
        if nodes.shape[0] < 2:
            raise ValueError("a grid needs at least two nodes")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.shape[0]

    def inner(self, g, h):
        """<g, h> = sum_i w_i g_i h_i (columns are summed independently)."""
        g = np.asarray(g, dtype=float)
        h = np.asarray(h, dtype=float)
        w = self.weights if g.ndim == 1 else self.weights[:, None]
        return np.sum(w * g * h, axis=0)

    def norm(self, values):
        return weighted_norm(values, self)


def weighted_norm(values, grid: WeightedGrid) -> float:
    """(sum_i w_i |g_i|^2)^(1/2); vector-valued g is summed over components."""
    g = np.asarray(values, dtype=float)
    if g.shape[0] != len(grid):
        raise ValueError(f"{g.shape[0]} values for a grid of {len(grid)} nodes")
    g = g.reshape(len(grid), -1)
    return float(np.sqrt(np.sum(grid.weights[:, None] * g * g)))


def trapezoid_weights(n_intervals: int, length: float) -> np.ndarray:
    h = length / n_intervals
    w = np.full(n_intervals + 1, h)
    w[0] = w[-1] = h / 2
    return w


def uniform_nodes(a, b, n_intervals):
    """a + j (b - a) / n for j = 0..n, with the right end exactly b."""
    j = np.arange(n_intervals + 1)
    x = a + j * ((b - a) / n_intervals)
    x[-1] = b
    return x


@dataclass(frozen=True)
class Grid1DPair:
    a: float
    b: float
    N: int
    M: int

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("need a < b")
        if self.N < 1 or self.M % self.N or self.M // self.N < 2:
            raise ValueError(f"M = {self.M} must be an integer multiple tau >= 2 of N = {self.N}")

    @property
    def tau(self):
        return self.M // self.N

    @property
    def dx(self):
        return (self.b - self.a) / self.N

    @property
    def dy(self):
        return (self.b - self.a) / self.M

    def _nodes(self, n):
        # Training nodes are taken from the test layout so y_{tau j} == x_j bitwise.
        return uniform_nodes(self.a, self.b, n)

    @property
    def test_nodes(self):
        return self._nodes(self.M)

    @property
    def train_nodes(self):
        return self.test_nodes[:: self.tau].copy()

    @property
    def train(self) -> WeightedGrid:
        return WeightedGrid(self.train_nodes, trapezoid_weights(self.N, self.b - self.a))

    @property
    def test(self) -> WeightedGrid:
        return WeightedGrid(self.test_nodes, trapezoid_weights(self.M, self.b - self.a))

    def fine_nodes(self, factor=10):
        """Test grid refined ``factor`` times; contains every test node."""
        x = uniform_nodes(self.a, self.b, self.M * factor)
        x[::factor] = self.test_nodes
        return x

    def to_dict(self):
        return {"a": self.a, "b": self.b, "N": self.N, "M": self.M}


@dataclass(frozen=True)
class Grid2DPair:
    a1: float
    b1: float
    a2: float
    b2: float
    N1: int
    N2: int
    M1: int
    M2: int

    def __post_init__(self):
        for n, m in ((self.N1, self.M1), (self.N2, self.M2)):
            if n < 1 or m % n or m // n < 2:
                raise ValueError(f"M = {m} must be an integer multiple tau >= 2 of N = {n}")
        if not (self.b1 > self.a1 and self.b2 > self.a2):
            raise ValueError("need a_k < b_k")

    @property
    def tau1(self):
        return self.M1 // self.N1

    @property
    def tau2(self):
        return self.M2 // self.N2

    @property
    def h(self):
        dx1 = (self.b1 - self.a1) / self.N1
        dx2 = (self.b2 - self.a2) / self.N2
        return float(np.hypot(dx1, dx2))

    def _axes(self, n1, n2):
        return uniform_nodes(self.a1, self.b1, n1), uniform_nodes(self.a2, self.b2, n2)

    def test_axes(self):
        return self._axes(self.M1, self.M2)

    def train_axes(self):
        t1, t2 = self.test_axes()
        return t1[:: self.tau1].copy(), t2[:: self.tau2].copy()

    @staticmethod
    def _mesh(ax1, ax2):
        # Node (i, j) sits at flat index i * len(ax2) + j.
        g1, g2 = np.meshgrid(ax1, ax2, indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])

    @property
    def train_nodes(self):
        return self._mesh(*self.train_axes())

    @property
    def test_nodes(self):
        return self._mesh(*self.test_axes())

    @property
    def train(self) -> WeightedGrid:
        nodes = self.train_nodes
        return WeightedGrid(nodes, np.ones(len(nodes)))

    @property
    def test(self) -> WeightedGrid:
        nodes = self.test_nodes
        return WeightedGrid(nodes, np.ones(len(nodes)))

    def train_shape(self):
        return self.N1 + 1, self.N2 + 1

    def test_shape(self):
        return self.M1 + 1, self.M2 + 1

    def train_index_of_test(self):
        """Flat test-grid indices of the training nodes, in training order."""
        i = np.arange(self.N1 + 1) * self.tau1
        j = np.arange(self.N2 + 1) * self.tau2
        return (i[:, None] * (self.M2 + 1) + j[None, :]).ravel()

    def enclosing_cells(self, k, l):
        """Training rectangles (k', l') whose closure contains test node (k, l)."""
        def candidates(idx, tau, n):
            q, r = divmod(idx, tau)
            if r:
                return [q]
            return [c for c in (q - 1, q) if 0 <= c < n]
        return [(p, q) for p in candidates(k, self.tau1, self.N1) for q in candidates(l, self.tau2, self.N2)]

    def fine_axes(self, factor=10):
        ax1, ax2 = self._axes(self.M1 * factor, self.M2 * factor)
        t1, t2 = self.test_axes()
        ax1[::factor] = t1
        ax2[::factor] = t2
        return ax1, ax2

    def to_dict(self):
        return {k: getattr(self, k) for k in ("a1", "b1", "a2", "b2", "N1", "N2", "M1", "M2")}


@dataclass(frozen=True)
class LabelField:
    """Labels eta = (sign(F) + 1) / 2, with F == 0 assigned to class 0."""

    separator: Callable

    def eta(self, nodes):
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        return (self.separator(nodes[:, 0], nodes[:, 1]) > 0).astype(int)

    def train_labels(self, pair: Grid2DPair):
        return self.eta(pair.train_nodes)

    def test_labels(self, pair: Grid2DPair):
        return self.eta(pair.test_nodes)


def check_matching_property(labels, pair: Grid2DPair, test_labels: Optional[np.ndarray] = None):
    """Does every test node share its label with a corner of some enclosing rectangle?

    ``labels`` is either a LabelField or the training labels (flat, training
    order); in the latter case ``test_labels`` must be given too.  Returns
    ``(ok, violators)`` with violators as (k, l) test-grid indices.
    """
    if isinstance(labels, LabelField):
        chi = labels.train_labels(pair)
        mu = labels.test_labels(pair)
    else:
        chi = np.asarray(labels)
        mu = np.asarray(test_labels)
    chi = chi.reshape(pair.train_shape())
    mu = mu.reshape(pair.test_shape())
    violators = []
    for k in range(pair.M1 + 1):
        for l in range(pair.M2 + 1):
            cells = pair.enclosing_cells(k, l)
            if not any(mu[k, l] in chi[p:p + 2, q:q + 2] for p, q in cells):
                violators.append((k, l))
    return not violators, violators


def monotone_on_subintervals(fine_values, tau_fine: int, n_intervals: int):
    """Per training sub-interval, is the sampled function monotone?

    ``fine_values`` are samples on a uniform grid with ``tau_fine`` points per
    training sub-interval (so ``n_intervals * tau_fine + 1`` samples).  Returns
    a boolean array with one entry per sub-interval.
    """
    g = np.asarray(fine_values, dtype=float)
    if g.shape[0] != n_intervals * tau_fine + 1:
        raise ValueError("sample count does not match the sub-interval layout")
    d = np.diff(g).reshape(n_intervals, tau_fine)
    return np.all(d >= 0, axis=1) | np.all(d <= 0, axis=1)


def lipschitz_estimate(nodes, values):
    """Max |slope| between adjacent 1D samples (an estimate, not a certified bound)."""
    x = np.asarray(nodes, dtype=float).ravel()
    g = np.asarray(values, dtype=float).ravel()
    return float(np.max(np.abs(np.diff(g)) / np.diff(x)))


def lipschitz_estimate_2d(ax1, ax2, values):
    """Lipschitz estimate hypot(max |d/dx1|, max |d/dx2|) from adjacent samples.

    ``values`` has shape (len(ax1), len(ax2)).  Along any axis-aligned path of
    grid samples the increments are then bounded by this constant times the
    Euclidean distance between the endpoints.
    """
    v = np.asarray(values, dtype=float)
    s1 = np.abs(np.diff(v, axis=0)) / np.diff(ax1)[:, None]
    s2 = np.abs(np.diff(v, axis=1)) / np.diff(ax2)[None, :]
    return float(np.hypot(s1.max(), s2.max()))
