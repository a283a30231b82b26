"""Builtin circuit catalog.

Names:

``abs1d``
    relu(x + b1) + relu(-x + b2); variable (x, b1, b2).
``maxlin-k``
    Running max of k affine pieces of one input, m_{j+1} = m_j + relu(l_{j+1} - m_j + b_j).
    The first piece is constant, so f is bounded below.
``relu-reg-n``
    Squared loss of one relu neuron on n fixed data points,
    sum_i (relu(w x_i + b_i) - y_i)^2, with one bias per data point.
``deep-chain-k``
    k stacked width-2 relu layers with fixed weights; output is the sum of the last layer.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, CircuitBuilder


@dataclass(frozen=True)
class BuiltinInstance:
    name: str
    circuit: Circuit
    x0: np.ndarray
    description: str


def _neg(b: CircuitBuilder, j: int) -> int:
    return b.mul(b.const(-1.0), j)


def abs1d() -> BuiltinInstance:
    b = CircuitBuilder()
    x = b.input()
    p = b.relu(x)
    n = b.relu(_neg(b, x))
    b.output(b.add(p, n))
    return BuiltinInstance("abs1d", b.build(), np.array([1.0, 0.0, 0.0]),
                           "relu(x + b1) + relu(-x + b2)")


def maxlin_pieces(k: int) -> list[tuple[float, float]]:
    """(slope, intercept) of the k pieces: constant -1/2, then +-1, +-1/2, +-1/3, ..."""
    pieces = [(0.0, -0.5)]
    for j in range(1, k):
        m = (j + 1) // 2
        s = 1.0 / m if j % 2 else -1.0 / m
        pieces.append((s, 0.25 * (1.0 - 1.0 / m)))
    return pieces


def maxlin(k: int) -> BuiltinInstance:
    if k < 1:
        raise ValueError("maxlin needs k >= 1")
    b = CircuitBuilder()
    x = b.input()

    def piece(s, c):
        t = b.mul(b.const(s), x)
        return b.add(t, b.const(c))

    pieces = maxlin_pieces(k)
    m = piece(*pieces[0])
    for s, c in pieces[1:]:
        gap = b.add(piece(s, c), _neg(b, m))
        m = b.add(m, b.relu(gap))
    b.output(m)
    x0 = np.zeros(k)
    x0[0] = 1.0
    return BuiltinInstance(f"maxlin-{k}", b.build(), x0, f"max of {k} affine pieces of one input")


def relu_reg_data(n: int) -> list[tuple[float, float]]:
    """x_i = 1 - 2i/n, y_i = (-1)^i (1 - x_i)/2; n = 1 gives {(1, 0)}."""
    return [(1.0 - 2.0 * i / n, (-1) ** i * (1.0 - (1.0 - 2.0 * i / n)) / 2.0) for i in range(n)]


def relu_reg(n: int) -> BuiltinInstance:
    if n < 1:
        raise ValueError("relu-reg needs n >= 1")
    b = CircuitBuilder()
    w = b.input()
    total = None
    for xi, yi in relu_reg_data(n):
        r = b.relu(b.mul(b.const(xi), w))
        e = b.add(r, b.const(-yi))
        sq = b.mul(e, e)
        total = sq if total is None else b.add(total, sq)
    b.output(total)
    x0 = np.zeros(1 + n)
    x0[0] = 1.0
    return BuiltinInstance(f"relu-reg-{n}", b.build(), x0,
                           f"single-neuron squared loss on {n} data points")


DEEP_CHAIN_W = ((0.9, -0.5), (0.4, 0.8))


def deep_chain(k: int) -> BuiltinInstance:
    if k < 1:
        raise ValueError("deep-chain needs k >= 1")
    b = CircuitBuilder()
    u = [b.input(), b.input()]
    for _ in range(k):
        nxt = []
        for row in DEEP_CHAIN_W:
            z = b.add(b.mul(b.const(row[0]), u[0]), b.mul(b.const(row[1]), u[1]))
            nxt.append(b.relu(z))
        u = nxt
    b.output(b.add(u[0], u[1]))
    x0 = np.zeros(2 + 2 * k)
    x0[:2] = (1.0, 0.5)
    return BuiltinInstance(f"deep-chain-{k}", b.build(), x0, f"{k} stacked width-2 relu layers")


_PARAMETRIC = {"maxlin": maxlin, "relu-reg": relu_reg, "deep-chain": deep_chain}
_NAME = re.compile(r"^(maxlin|relu-reg|deep-chain)-(\d+)$")
DEFAULT_NAMES = ("abs1d", "maxlin-5", "relu-reg-1", "relu-reg-2", "relu-reg-4",
                 "deep-chain-2", "deep-chain-3")


def get_builtin(name: str) -> BuiltinInstance:
    if name == "abs1d":
        return abs1d()
    m = _NAME.match(name)
    if m is None:
        raise KeyError(f"unknown builtin {name!r}; expected abs1d, maxlin-k, relu-reg-n or deep-chain-k")
    return _PARAMETRIC[m.group(1)](int(m.group(2)))


def builtin_instances() -> dict[str, BuiltinInstance]:
    """Catalog of the default builtins keyed by name."""
    return {n: get_builtin(n) for n in DEFAULT_NAMES}


def is_builtin_name(name: str) -> bool:
    return name == "abs1d" or _NAME.match(name) is not None


def resolve_circuit(spec: str) -> tuple[Circuit, np.ndarray | None]:
    """A circuit file path, or a builtin name (files win on a name clash)."""
    if os.path.exists(spec):
        return Circuit.load(spec), None
    if is_builtin_name(spec):
        inst = get_builtin(spec)
        return inst.circuit, inst.x0
    raise FileNotFoundError(f"no circuit file or builtin named {spec!r}")
