"""Named regression targets and class separators, plus user expressions."""

from __future__ import annotations

import ast

import numpy as np


def f1(x):
    return np.exp(np.sin(2 * np.pi * x))


def f2(x):
    return np.exp(3 * x)


def f3(x):
    return np.cos(np.exp(3 * x))


def F1(x1, x2):
    return 4 * x1 ** 2 - 3 * x1 + 5 * x2 - 1


def F2(x1, x2):
    return 2 * x1 ** 3 - 0.6 * x1 ** 2 - 1.94 * x1 + x2 + 0.2


REGRESSION_TARGETS = {"f1": f1, "f2": f2, "f3": f3}
SEPARATORS = {"F1": F1, "F2": F2}

_FUNCS = {name: getattr(np, name) for name in
          ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "sinh", "cosh", "arctan", "abs")}
_CONSTS = {"pi": np.pi, "e": np.e}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def parse_expression(text: str, variables):
    """Compile an arithmetic expression in ``variables`` into a numpy function.

    Only numbers, + - * / **, the names in ``variables``, pi, e and a few
    elementwise numpy functions (sin, exp, ...) are accepted.
    """
    tree = ast.parse(text, mode="eval")
    allowed = set(variables) | set(_FUNCS) | set(_CONSTS)
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"unsupported syntax in expression: {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ValueError(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ValueError("only elementwise math functions may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError("only numeric constants are allowed")
    code = compile(tree, "<expression>", "eval")
    scope = {"__builtins__": {}, **_FUNCS, **_CONSTS}

    def fn(*args):
        env = dict(scope)
        env.update(zip(variables, (np.asarray(a, dtype=float) for a in args)))
        out = eval(code, env)  # names were whitelisted above
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(*args).shape).copy()
    return fn


def regression_target(spec: str):
    """f1/f2/f3 or an expression in x."""
    if spec in REGRESSION_TARGETS:
        return REGRESSION_TARGETS[spec]
    return parse_expression(spec, ("x",))


def separator(spec: str):
    """F1/F2 or an expression in x1, x2 (class 1 where it is positive)."""
    if spec in SEPARATORS:
        return SEPARATORS[spec]
    return parse_expression(spec, ("x1", "x2"))
