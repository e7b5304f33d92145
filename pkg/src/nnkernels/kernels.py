"""One entry point for every kernel and feature map extracted from an Mlp."""

import numpy as np

from .ck import ck_features, ck_gram
from .nn import Mlp
from .ntk import AlgorithmChoice, KernelGram, KernelKind, ntk_features, ntk_gram


def kernel_gram(net: Mlp, kind, nodes_a, nodes_b=None, algorithm=AlgorithmChoice.AUTO) -> KernelGram:
    kind = KernelKind(kind)
    if kind is KernelKind.CK:
        return ck_gram(net, nodes_a, nodes_b)
    return ntk_gram(net, nodes_a, nodes_b, choice=algorithm, kind=kind)


def feature_map(net: Mlp, kind, nodes):
    """Feature matrix (K, n) whose Gram is the ``kind`` kernel."""
    kind = KernelKind(kind)
    if kind is KernelKind.CK:
        return ck_features(net, nodes)
    if kind is KernelKind.NTK:
        return ntk_features(net, nodes)
    raise ValueError("the E kernel has no feature map of its own here")


def kernel_rows(net: Mlp, kind, train_nodes, query_nodes, algorithm=AlgorithmChoice.AUTO):
    """ker(query_i, train_j), shape (n_query, n_train)."""
    return kernel_gram(net, kind, np.asarray(query_nodes), np.asarray(train_nodes), algorithm).matrix
