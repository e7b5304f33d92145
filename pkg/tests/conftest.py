import numpy as np
import pytest

from nnkernels.nn import init_mlp

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}
ACCEPTANCE_NAMES = {
    1: "NTK oracle equivalence",
    2: "hand NTK value",
    3: "CK dual path and NTK - CK PSD",
    4: "representer and conditioning identities",
    5: "orthonormal basis suite",
    6: "norm lemmas",
    7: "training-loss orderings",
    8: "regression figure ordering",
    9: "classification figure ordering",
    10: "theorem verification",
    11: "ReLU contrast run",
    12: "determinism",
}


def record_criterion(number, passed, detail=""):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_NAMES):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            line = f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {ACCEPTANCE_NAMES[k]}"
        else:
            line, detail = f"[NOT RUN] {k:2d}. {ACCEPTANCE_NAMES[k]}", ""
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_net():
    return init_mlp((2, 5, 4, 3, 2), "tanh", 7)


def random_net(dims, activation, seed, bias_scale=0.3):
    """Glorot weights plus random biases, so that bias paths are exercised."""
    net = init_mlp(dims, activation, seed)
    rng = np.random.default_rng(seed + 1000)
    for b in net.biases:
        b += bias_scale * rng.standard_normal(b.shape)
    return net
