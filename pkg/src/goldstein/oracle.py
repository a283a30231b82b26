"""First-order oracles with call counting and query transcripts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class BudgetExceeded(RuntimeError):
    """The oracle's hard call cap was reached."""


@dataclass(frozen=True)
class OracleResponse:
    value: float | None  # None for gradient-only oracles
    gradient: np.ndarray


@dataclass
class OracleTranscript:
    queries: list[tuple[np.ndarray, OracleResponse]] = field(default_factory=list)

    @property
    def call_count(self) -> int:
        return len(self.queries)

    def __len__(self):
        return len(self.queries)

    def append(self, x: np.ndarray, response: OracleResponse) -> None:
        self.queries.append((x, response))

    @property
    def points(self) -> np.ndarray:
        return np.array([q[0] for q in self.queries])

    def write_csv(self, fh) -> None:
        """Columns: iter, x_0..x_{d-1}, value, g_0..g_{d-1} (empty value if absent)."""
        d = len(self.queries[0][0]) if self.queries else 0
        w = csv.writer(fh)
        w.writerow(["iter"] + [f"x_{i}" for i in range(d)] + ["value"]
                   + [f"g_{i}" for i in range(d)])
        for k, (x, r) in enumerate(self.queries):
            w.writerow([k] + [repr(float(v)) for v in x]
                       + ["" if r.value is None else repr(float(r.value))]
                       + [repr(float(v)) for v in r.gradient])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


class Oracle:
    """Base first-order oracle.  Subclasses implement :meth:`_evaluate`.

    Each :meth:`query` costs one call whether or not the value is visible.
    """

    provides_values = True

    def __init__(self, dim: int, max_calls: int | None = None):
        self.dim = int(dim)
        self.max_calls = max_calls
        self.transcript = OracleTranscript()

    @property
    def call_count(self) -> int:
        return self.transcript.call_count

    def _evaluate(self, x: np.ndarray) -> tuple[float | None, np.ndarray]:
        raise NotImplementedError

    def _over_budget(self) -> BudgetExceeded:
        return BudgetExceeded(f"oracle budget of {self.max_calls} calls exhausted")

    def query(self, x) -> OracleResponse:
        x = np.array(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"query of dimension {x.shape[0]} for a {self.dim}-dim oracle")
        if self.max_calls is not None and self.call_count >= self.max_calls:
            raise self._over_budget()
        value, grad = self._evaluate(x)
        grad = np.array(grad, dtype=float).reshape(-1)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient at {x}")
        resp = OracleResponse(None if value is None else float(value), grad)
        self.transcript.append(x, resp)
        return resp

    def __call__(self, x) -> OracleResponse:
        return self.query(x)


class FunctionOracle(Oracle):
    """Oracle backed by ``fn(x) -> (value, gradient)``."""

    def __init__(self, fn: Callable, dim: int, max_calls: int | None = None):
        super().__init__(dim, max_calls)
        self.fn = fn

    def _evaluate(self, x):
        return self.fn(x)


def circuit_oracle(circuit, max_calls: int | None = None) -> FunctionOracle:
    """Oracle for anything exposing ``value_and_grad`` and ``dim`` (circuits,
    smoothed circuits, hard instances)."""
    return FunctionOracle(circuit.value_and_grad, circuit.dim, max_calls)


class GradientOnlyOracle(Oracle):
    """Masks values of an inner oracle.  Gradients pass through untouched; the
    inner oracle is queried (and counts) as well."""

    provides_values = False

    def __init__(self, inner: Oracle, max_calls: int | None = None):
        super().__init__(inner.dim, max_calls)
        self.inner = inner

    def _evaluate(self, x):
        return None, self.inner.query(x).gradient


def gradient_only(oracle: Oracle, max_calls: int | None = None) -> GradientOnlyOracle:
    return GradientOnlyOracle(oracle, max_calls)
