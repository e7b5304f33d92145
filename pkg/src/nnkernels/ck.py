"""Conjugate kernel: 1 + x^(L)(z) . x^(L)(z~), the last-layer part of the NTK.

Only forward passes are involved.  For a two-logit head the last-layer
Jacobian of f_1 - f_2 has Gram 2 (1 + x^(L) . x^(L)); the factor 2 is dropped
here so regression and classification share one kernel.  Logistic fits only
rescale their coefficients under a positive kernel scaling.
"""

import numpy as np

from .nn import Mlp, forward
from .ntk import KernelGram, KernelKind, _nodes


def ck_features(net: Mlp, nodes):
    """Feature matrix of shape (d_L + 1, n): last hidden activations plus a row of ones."""
    x = _nodes(net, nodes)
    hidden = forward(net, x).post[-1]
    return np.vstack([hidden.T, np.ones(x.shape[0])])


def ck_gram(net: Mlp, nodes_a, nodes_b=None) -> KernelGram:
    a = _nodes(net, nodes_a)
    ha = forward(net, a).post[-1]
    if nodes_b is None:
        H = 1.0 + ha @ ha.T
        H = np.triu(H) + np.triu(H, 1).T
        return KernelGram(H, KernelKind.CK, a, a)
    b = _nodes(net, nodes_b)
    hb = forward(net, b).post[-1]
    return KernelGram(1.0 + ha @ hb.T, KernelKind.CK, a, b)
