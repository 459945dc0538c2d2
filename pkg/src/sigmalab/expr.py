"""Restricted expression grammar for base profiles ``g``.

Allowed: numeric literals, ``pi``, coordinate names, ``+ - * /``, ``**`` with a
numeric exponent, unary signs, and calls to ``cos`` / ``sin``.  The source is
parsed with :mod:`ast` and walked node by node; nothing is executed.
"""
from __future__ import annotations

import ast
from math import pi
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

FUNCTIONS = {"cos": np.cos, "sin": np.sin}
CONSTANTS = {"pi": pi}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
}


def coordinate_names(kind: str, n: int = 1) -> tuple:
    """Names usable in expressions on a domain.

    interval: ``x``; sphere ``S^n``: ``x1 .. x{n+1}``; torus of complex
    dimension ``n``: ``x1 .. xn, y1 .. yn`` (plus ``x, y`` when ``n == 1``).
    """
    if kind == "interval":
        return ("x",)
    if kind == "sphere":
        return tuple(f"x{i + 1}" for i in range(n + 1))
    if kind == "torus":
        names = tuple(f"x{i + 1}" for i in range(n)) + tuple(f"y{i + 1}" for i in range(n))
        return names + (("x", "y") if n == 1 else ())
    raise ConfigError(f"unknown domain kind {kind!r}")


class Expression:
    """Parsed profile expression; call with a mapping of coordinate arrays."""

    def __init__(self, source: str, names: Sequence[str]):
        self.source = str(source).strip()
        self.allowed = tuple(names)
        if not self.source:
            raise ConfigError("g: empty expression")
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"g: cannot parse {self.source!r}: {exc.msg}") from None
        self.names = set()
        self._check(tree.body)
        self._tree = tree.body

    def _fail(self, node, what):
        raise ConfigError(f"g: {what} not allowed in {self.source!r}")

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                self._fail(node, f"literal {node.value!r}")
        elif isinstance(node, ast.Name):
            if node.id in CONSTANTS:
                return
            if node.id not in self.allowed:
                self._fail(node, f"name {node.id!r}")
            self.names.add(node.id)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                self._fail(node, "unary operator")
            self._check(node.operand)
        elif isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                if _numeric(node.right) is None:
                    self._fail(node, "non-numeric exponent")
            elif type(node.op) not in _BINOPS:
                self._fail(node, f"operator {type(node.op).__name__}")
            else:
                self._check(node.right)
            self._check(node.left)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                self._fail(node, "function call")
            if len(node.args) != 1 or node.keywords:
                self._fail(node, "call signature")
            self._check(node.args[0])
        else:
            self._fail(node, type(node).__name__)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return CONSTANTS[node.id] if node.id in CONSTANTS else env[node.id]
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            left = self._eval(node.left, env)
            if isinstance(node.op, ast.Pow):
                return np.power(left, _numeric(node.right))
            return _BINOPS[type(node.op)](left, self._eval(node.right, env))
        return FUNCTIONS[node.func.id](self._eval(node.args[0], env))

    def __call__(self, env: Mapping[str, np.ndarray]):
        missing = self.names - set(env)
        if missing:
            raise ConfigError(f"g: no value for {sorted(missing)}")
        out = self._eval(self._tree, env)
        shape = np.broadcast(*[np.asarray(env[k]) for k in self.allowed if k in env]).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"


def _numeric(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _numeric(node.operand)
        if v is not None:
            return -v if isinstance(node.op, ast.USub) else v
    return None


def parse(source: str, kind: str, n: int = 1) -> Expression:
    return Expression(source, coordinate_names(kind, n))


def coordinate_env(kind: str, n: int, points) -> dict:
    """Map coordinate names to arrays; interval points are plain scalars ``(...)``."""
    pts = np.asarray(points, dtype=float)
    names = coordinate_names(kind, n)
    if kind == "interval":
        return {"x": pts}
    if kind == "sphere":
        return {nm: pts[..., i] for i, nm in enumerate(names)}
    env = {}
    for i in range(n):
        env[f"x{i + 1}"] = pts[..., i]
        env[f"y{i + 1}"] = pts[..., n + i]
    if n == 1:
        env["x"], env["y"] = env["x1"], env["y1"]
    return env
