"""Neural arithmetic circuits (NACs).

A circuit is a DAG over input, bias, constant, ``+``, ``x``, relu and output
nodes.  The optimization variable is the concatenation of the input slots and
the bias slots, so network weights enter as ``input`` nodes and every relu gate
owns exactly one bias coordinate.

Evaluation and reverse-mode differentiation operate on batches: a point of
shape ``(d,)`` returns a scalar / ``(d,)`` gradient, a block of shape ``(n, d)``
returns ``(n,)`` values / ``(n, d)`` gradients.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Kind(str, enum.Enum):
    INPUT = "input"
    BIAS = "bias"
    CONST = "const"
    ADD = "add"
    MUL = "mul"
    RELU = "relu"
    OUTPUT = "output"


# expected in-degree per kind
_ARITY = {
    Kind.INPUT: 0,
    Kind.BIAS: 0,
    Kind.CONST: 0,
    Kind.ADD: 2,
    Kind.MUL: 2,
    Kind.RELU: 1,
    Kind.OUTPUT: 1,
}


class InvalidCircuitError(ValueError):
    """Raised when an operation needs a valid circuit and gets an invalid one."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("invalid circuit:\n" + str(report))


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: Kind
    preds: tuple[int, ...] = ()
    index: int | None = None  # input/bias slot
    c: float | None = None  # const value
    a: float | None = None  # softrelu half-width (relu only); None means plain relu

    def to_dict(self) -> dict:
        out = {"id": self.id, "kind": self.kind.value}
        if self.index is not None:
            out["index"] = self.index
        if self.c is not None:
            out["c"] = self.c
        if self.a is not None:
            out["a"] = self.a
        out["preds"] = list(self.preds)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        return cls(
            id=int(d["id"]),
            kind=Kind(d["kind"]),
            preds=tuple(int(p) for p in d.get("preds", ())),
            index=None if d.get("index") is None else int(d["index"]),
            c=None if d.get("c") is None else float(d["c"]),
            a=None if d.get("a") is None else float(d["a"]),
        )


@dataclass(frozen=True)
class Violation:
    node: int | None
    condition: int  # 1..6 are the NAC conditions; 0 is generic graph well-formedness
    message: str

    def __str__(self):
        where = "circuit" if self.node is None else f"node {self.node}"
        return f"[condition {self.condition}] {where}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def conditions(self) -> set[int]:
        return {v.condition for v in self.violations}

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


def _topological_order(nodes: dict[int, Node]) -> list[int] | None:
    """Kahn's algorithm, smallest id first.  None on cycles or dangling preds."""
    indeg = {i: 0 for i in nodes}
    succ: dict[int, list[int]] = {i: [] for i in nodes}
    for n in nodes.values():
        for p in n.preds:
            if p not in nodes:
                return None
            indeg[n.id] += 1
            succ[p].append(n.id)
    heap = [i for i, k in indeg.items() if k == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for s in succ[i]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(heap, s)
    if len(order) != len(nodes):
        return None
    return order


class Circuit:
    """Immutable neural arithmetic circuit.

    The graph may be structurally invalid (``validate`` reports why); every
    numerical operation requires a valid circuit.
    """

    def __init__(self, nodes):
        nodes = sorted(nodes, key=lambda n: n.id)
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self._by_id = {}
        self._duplicate_ids = []
        for n in self.nodes:
            if n.id in self._by_id:
                self._duplicate_ids.append(n.id)
            self._by_id[n.id] = n
        self.topo_order: tuple[int, ...] | None = None
        if not self._duplicate_ids:
            order = _topological_order(self._by_id)
            self.topo_order = None if order is None else tuple(order)
        self.num_inputs = sum(n.kind is Kind.INPUT for n in self.nodes)
        self.num_biases = sum(n.kind is Kind.BIAS for n in self.nodes)
        self._report: ValidationReport | None = None
        self._program = None
        self._out = None

    # -- structure -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.num_inputs + self.num_biases

    def size(self) -> int:
        return len(self.nodes)

    def node(self, i: int) -> Node:
        return self._by_id[i]

    @property
    def output_id(self) -> int:
        outs = [n.id for n in self.nodes if n.kind is Kind.OUTPUT]
        if len(outs) != 1:
            raise InvalidCircuitError(self.validate())
        return outs[0]

    def successors(self) -> dict[int, list[int]]:
        succ: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for p in n.preds:
                if p in succ:
                    succ[p].append(n.id)
        return succ

    def relu_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is Kind.RELU]

    def slot(self, node: Node) -> int:
        """Coordinate of an input/bias node in the optimization variable."""
        if node.kind is Kind.INPUT:
            return node.index
        if node.kind is Kind.BIAS:
            return self.num_inputs + node.index
        raise ValueError(f"node {node.id} is not an input or bias node")

    def __eq__(self, other):
        return isinstance(other, Circuit) and self.nodes == other.nodes

    def __hash__(self):
        return hash(self.nodes)

    def __repr__(self):
        return (f"Circuit(size={self.size()}, inputs={self.num_inputs}, "
                f"biases={self.num_biases})")

    # -- validation ------------------------------------------------------
    def validate(self) -> ValidationReport:
        if self._report is None:
            self._report = validate(self)
        return self._report

    def require_valid(self) -> None:
        if not self.validate().ok:
            raise InvalidCircuitError(self.validate())

    # -- transforms -------------------------------------------------------
    def with_half_width(self, a: float | None) -> "Circuit":
        """Copy with every relu gate set to softrelu(a) (``None`` restores relu)."""
        return Circuit(
            Node(n.id, n.kind, n.preds, n.index, n.c, a if n.kind is Kind.RELU else None)
            for n in self.nodes
        )

    @property
    def is_smoothed(self) -> bool:
        return any(n.kind is Kind.RELU and n.a is not None for n in self.nodes)

    # -- numerics ---------------------------------------------------------
    def _compile(self):
        if self._program is None:
            self.require_valid()
            global _softrelu, _softrelu_grad
            if _softrelu is None:
                from .smoothing import softrelu as _softrelu, softrelu_grad as _softrelu_grad
            pos = {i: k for k, i in enumerate(self.topo_order)}
            prog = []
            for i in self.topo_order:
                n = self._by_id[i]
                preds = tuple(pos[p] for p in n.preds)
                if n.kind in (Kind.INPUT, Kind.BIAS):
                    param = self.slot(n)
                elif n.kind is Kind.CONST:
                    param = n.c
                elif n.kind is Kind.RELU:
                    param = n.a
                else:
                    param = None
                prog.append((n.kind, preds, param))
            self._program = prog
        return self._program

    def _as_block(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(
                f"expected points of dimension {self.dim}, got shape {x.shape}")
        return X, single

    def _forward(self, X):
        n = X.shape[0]
        vals = []
        for kind, preds, param in self._compile():
            if kind is Kind.INPUT or kind is Kind.BIAS:
                v = X[:, param]
            elif kind is Kind.CONST:
                v = np.full(n, param)
            elif kind is Kind.ADD:
                v = vals[preds[0]] + vals[preds[1]]
            elif kind is Kind.MUL:
                v = vals[preds[0]] * vals[preds[1]]
            elif kind is Kind.RELU:
                z = vals[preds[0]]
                v = np.maximum(z, 0.0) if param is None else _softrelu(z, param)
            else:  # output
                v = vals[preds[0]]
            vals.append(v)
        return vals

    def eval(self, x):
        """Forward evaluation f(x)."""
        X, single = self._as_block(x)
        out = self._forward(X)[self._out_pos()]
        return float(out[0]) if single else out

    def _out_pos(self):
        if self._out is None:
            self._out = self.topo_order.index(self.output_id)
        return self._out

    def value_and_grad(self, x):
        """Value and one Clarke subgradient (relu'(0) := 0)."""
        X, single = self._as_block(x)
        prog = self._compile()
        vals = self._forward(X)
        n = X.shape[0]
        adj = [None] * len(prog)
        out = self._out_pos()
        adj[out] = np.ones(n)
        grad = np.zeros_like(X)
        for k in range(len(prog) - 1, -1, -1):
            w = adj[k]
            if w is None:
                continue
            kind, preds, param = prog[k]
            if kind is Kind.INPUT or kind is Kind.BIAS:
                grad[:, param] += w
            elif kind is Kind.ADD:
                _acc(adj, preds[0], w)
                _acc(adj, preds[1], w)
            elif kind is Kind.MUL:
                _acc(adj, preds[0], w * vals[preds[1]])
                _acc(adj, preds[1], w * vals[preds[0]])
            elif kind is Kind.RELU:
                z = vals[preds[0]]
                d = (z > 0.0).astype(float) if param is None else _softrelu_grad(z, param)
                _acc(adj, preds[0], w * d)
            elif kind is Kind.OUTPUT:
                _acc(adj, preds[0], w)
        value = vals[out]
        if single:
            return float(value[0]), grad[0]
        return value, grad

    def grad(self, x):
        return self.value_and_grad(x)[1]

    def preactivations(self, x) -> np.ndarray:
        """Relu pre-activations, shape ``(n, #relu)`` (or ``(#relu,)``)."""
        X, single = self._as_block(x)
        vals = self._forward(X)
        pos = {i: k for k, i in enumerate(self.topo_order)}
        cols = [vals[pos[self._by_id[r].preds[0]]] for r in self.relu_ids()]
        Z = np.stack(cols, axis=1) if cols else np.zeros((X.shape[0], 0))
        return Z[0] if single else Z

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {"nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Circuit":
        return cls(Node.from_dict(nd) for nd in d["nodes"])

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def loads(cls, s: str) -> "Circuit":
        return cls.from_dict(json.loads(s))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Circuit":
        return cls.loads(Path(path).read_text())


def _acc(adj, k, w):
    if adj[k] is None:
        adj[k] = w.copy()
    else:
        adj[k] += w


# bound on first compile; smoothing imports this module
_softrelu = None
_softrelu_grad = None


def validate(circuit: Circuit) -> ValidationReport:
    """Check the six NAC conditions (plus basic graph well-formedness).

    Violations are returned as data; nothing is raised.
    """
    V = []
    nodes = circuit.nodes
    by_id = {n.id: n for n in nodes}

    for i in circuit._duplicate_ids:
        V.append(Violation(i, 0, "duplicate node id"))
    ids = sorted(by_id)
    if ids != list(range(len(ids))):
        V.append(Violation(None, 0, "node ids must be exactly 0..n-1"))
    for n in nodes:
        for p in n.preds:
            if p not in by_id:
                V.append(Violation(n.id, 0, f"predecessor {p} does not exist"))
    if circuit.topo_order is None and not circuit._duplicate_ids and not any(
            v.condition == 0 and "does not exist" in v.message for v in V):
        V.append(Violation(None, 0, "graph has a cycle"))

    succ = circuit.successors()

    # arity
    for n in nodes:
        want = _ARITY[n.kind]
        if len(n.preds) != want:
            cond = {Kind.INPUT: 1, Kind.BIAS: 2, Kind.CONST: 4, Kind.ADD: 3,
                    Kind.MUL: 3, Kind.RELU: 5, Kind.OUTPUT: 6}[n.kind]
            V.append(Violation(n.id, cond,
                               f"{n.kind.value} node needs {want} incoming edges, has {len(n.preds)}"))
        if n.a is not None and (n.kind is not Kind.RELU or not n.a > 0):
            V.append(Violation(n.id, 0, "half-width 'a' must be positive and only on relu gates"))
        if n.kind in (Kind.INPUT, Kind.BIAS) and n.index is None:
            V.append(Violation(n.id, 1 if n.kind is Kind.INPUT else 2, "missing slot index"))

    # 1. inputs
    inputs = [n for n in nodes if n.kind is Kind.INPUT]
    if not inputs:
        V.append(Violation(None, 1, "circuit has no input node"))
    _check_slots(inputs, 1, V)

    # 2. biases
    biases = [n for n in nodes if n.kind is Kind.BIAS]
    relus = [n for n in nodes if n.kind is Kind.RELU]
    if len(biases) != len(relus):
        V.append(Violation(None, 2, f"{len(biases)} bias nodes but {len(relus)} relu gates"))
    for b in biases:
        if len(succ[b.id]) != 1:
            V.append(Violation(b.id, 2, f"bias node has {len(succ[b.id])} outgoing edges, needs 1"))
    _check_slots(biases, 2, V)

    # 4. constants
    for n in nodes:
        if n.kind is Kind.CONST:
            if n.c is None or not math.isfinite(n.c) or not -1.0 <= n.c <= 1.0:
                V.append(Violation(n.id, 4, f"constant {n.c} outside [-1, 1]"))

    # 5. relu gates fed by an add gate with a private bias
    owner: dict[int, int] = {}
    for r in relus:
        if len(r.preds) != 1 or r.preds[0] not in by_id:
            continue
        add = by_id[r.preds[0]]
        if add.kind is not Kind.ADD:
            V.append(Violation(r.id, 5, f"relu predecessor is a {add.kind.value} node, not '+'"))
            continue
        cands = [p for p in add.preds if p in by_id and by_id[p].kind is Kind.BIAS]
        if not cands:
            V.append(Violation(r.id, 5, "relu's '+' predecessor has no bias input"))
            continue
        free = [b for b in cands if b not in owner]
        if not free:
            V.append(Violation(r.id, 5, f"bias node {cands[0]} already used by relu {owner[cands[0]]}"))
            continue
        owner[free[0]] = r.id

    # 6. single output, no outgoing edges
    outs = [n for n in nodes if n.kind is Kind.OUTPUT]
    if len(outs) != 1:
        V.append(Violation(None, 6, f"{len(outs)} output nodes, need exactly 1"))
    for o in outs:
        if succ[o.id]:
            V.append(Violation(o.id, 6, "output node has outgoing edges"))

    return ValidationReport(V)


def _check_slots(group, cond, V):
    seen = {}
    for n in group:
        if n.index is None:
            continue
        if n.index in seen:
            V.append(Violation(n.id, cond, f"slot {n.index} already used by node {seen[n.index]}"))
        seen[n.index] = n.id
    if seen and sorted(seen) != list(range(len(group))):
        V.append(Violation(None, cond, f"{Kind(group[0].kind).value} slots must be 0..{len(group) - 1}"))


class CircuitBuilder:
    """Incremental construction helper; ids are assigned in creation order."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._n_in = 0
        self._n_bias = 0

    def _add(self, kind, preds=(), **kw) -> int:
        i = len(self._nodes)
        self._nodes.append(Node(i, kind, tuple(preds), **kw))
        return i

    def input(self) -> int:
        self._n_in += 1
        return self._add(Kind.INPUT, index=self._n_in - 1)

    def bias(self) -> int:
        self._n_bias += 1
        return self._add(Kind.BIAS, index=self._n_bias - 1)

    def const(self, c: float) -> int:
        return self._add(Kind.CONST, c=float(c))

    def add(self, j: int, k: int) -> int:
        return self._add(Kind.ADD, (j, k))

    def mul(self, j: int, k: int) -> int:
        return self._add(Kind.MUL, (j, k))

    def relu(self, z: int) -> int:
        """relu(z + b) with a fresh bias node b."""
        b = self.bias()
        return self._add(Kind.RELU, (self.add(z, b),))

    def output(self, z: int) -> int:
        return self._add(Kind.OUTPUT, (z,))

    def build(self) -> Circuit:
        return Circuit(self._nodes)


# ---------------------------------------------------------------------------
# recursive Lipschitz / boundedness calculus


@dataclass
class BoundAnalysis:
    """Per-node recursive bounds over a region of the given diameter.

    ``node_log_S`` and ``node_gamma`` are only filled for smoothed circuits.
    Smoothness is tracked in log-space because it overflows quickly.
    """

    node_L: np.ndarray
    node_G: np.ndarray
    region_diameter: float
    output: int  # position of the output node in the node arrays (= node id)
    node_log_S: np.ndarray | None = None
    node_gamma: np.ndarray | None = None
    half_width: float | None = None

    @property
    def L(self) -> float:
        return float(self.node_L[self.output])

    @property
    def G(self) -> float:
        return float(self.node_G[self.output])

    @property
    def log_S(self) -> float | None:
        return None if self.node_log_S is None else float(self.node_log_S[self.output])

    @property
    def S(self) -> float | None:
        if self.node_log_S is None:
            return None
        with np.errstate(over="ignore"):
            return float(np.exp(self.node_log_S[self.output]))

    @property
    def gamma(self) -> float | None:
        return None if self.node_gamma is None else float(self.node_gamma[self.output])


def analyze_bounds(circuit: Circuit, region_diameter: float) -> BoundAnalysis:
    """One topological pass of the composition rules.

    Add: L_j+L_k, G_j+G_k.  Relu: L_j, G_j.  Const(c): 0, |c|.
    Mul: L_j G_k + G_j L_k, G_j G_k.  Input/bias: 1, diam(R).
    """
    if region_diameter < 0:
        raise ValueError("region_diameter must be nonnegative")
    circuit.require_valid()
    n = circuit.size()
    L = np.zeros(n)
    G = np.zeros(n)
    D = float(region_diameter)
    for i in circuit.topo_order:
        node = circuit.node(i)
        k = node.kind
        p = node.preds
        if k in (Kind.INPUT, Kind.BIAS):
            L[i], G[i] = 1.0, D
        elif k is Kind.CONST:
            L[i], G[i] = 0.0, abs(node.c)
        elif k is Kind.ADD:
            L[i], G[i] = L[p[0]] + L[p[1]], G[p[0]] + G[p[1]]
        elif k is Kind.MUL:
            L[i] = L[p[0]] * G[p[1]] + G[p[0]] * L[p[1]]
            G[i] = G[p[0]] * G[p[1]]
        else:  # relu, output
            L[i], G[i] = L[p[0]], G[p[0]]
    return BoundAnalysis(L, G, D, circuit.output_id)
