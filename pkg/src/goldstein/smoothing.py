"""Deterministic softrelu smoothing of neural arithmetic circuits.

Every relu gate is replaced by its uniform-[-a, a] bias average

    softrelu_a(z) = z                 if z >= a
                    (z + a)^2 / (4a)  if -a <= z < a
                    0                 if z < -a

which is 1-Lipschitz, (1/2a)-smooth and within a/4 of relu.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .circuit import BoundAnalysis, Circuit, Kind, analyze_bounds

A_FLOOR = 1e-300


class VacuousBoundsWarning(RuntimeWarning):
    """The certified half-width underflows; smoothing degenerates to relu."""


def softrelu(z, a):
    """Closed-form softrelu; accepts scalars or arrays."""
    if not a > 0:
        raise ValueError(f"softrelu half-width must be positive, got {a}")
    if np.ndim(z) == 0:
        z = float(z)
        if z >= a:
            return z
        if z < -a:
            return 0.0
        return (z + a) ** 2 / (4.0 * a)
    z = np.asarray(z, dtype=float)
    out = np.where(z >= a, z, 0.0)
    mid = (z >= -a) & (z < a)
    if np.any(mid):
        out[mid] = (z[mid] + a) ** 2 / (4.0 * a)
    return out


def softrelu_grad(z, a):
    """Derivative clamp((z + a) / 2a, 0, 1)."""
    if not a > 0:
        raise ValueError(f"softrelu half-width must be positive, got {a}")
    if np.ndim(z) == 0:
        return min(max((float(z) + a) / (2.0 * a), 0.0), 1.0)
    with np.errstate(over="ignore"):
        return np.clip((np.asarray(z, dtype=float) + a) / (2.0 * a), 0.0, 1.0)


def _log_half_width(L, G, size, delta, epsilon, gamma):
    for name, v in (("delta", delta), ("epsilon", epsilon), ("gamma", gamma)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if size < 0:
        raise ValueError("size must be nonnegative")
    L, G = max(L, 1.0), max(G, 1.0)
    return math.log(min(delta, epsilon, gamma)) - 3 * size * math.log(160.0 * L * G)


def select_half_width(L: float, G: float, size: int, delta: float,
                      epsilon: float, gamma: float) -> float:
    """Half-width a = min(eps, delta, gamma) / (160 L G)^(3 size).

    Computed in log-space.  L and G are clamped to >= 1.  If the result would
    fall below 1e-300 a :class:`VacuousBoundsWarning` is emitted and a is
    floored there.
    """
    log_a = _log_half_width(L, G, size, delta, epsilon, gamma)
    if log_a < math.log(A_FLOOR):
        warnings.warn(
            f"bounds vacuous: certified half-width exp({log_a:.1f}) underflows; "
            f"flooring at {A_FLOOR:g}", VacuousBoundsWarning, stacklevel=2)
        return A_FLOOR
    return math.exp(log_a)


@dataclass(frozen=True)
class SmoothingParams:
    delta: float
    epsilon: float
    gamma: float
    a: float | None = None  # explicit half-width; derived by select_half_width when None

    def __post_init__(self):
        for name in ("delta", "epsilon", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.a is not None and not self.a > 0:
            raise ValueError("half-width a must be positive")


def _logadd(x, y):
    return float(np.logaddexp(x, y))


def _log(v):
    return math.log(v) if v > 0 else -math.inf


def smoothed_bounds(circuit: Circuit, a: float, region_diameter: float) -> BoundAnalysis:
    """Bounds for the softrelu(a) circuit: L, G plus per-node smoothness and error.

    Smoothness recursion (log-space), with S = 0 on inputs, biases, constants:

      +    : S_j + S_k
      x    : S_j G_k + G_j S_k + 2 L_j L_k
      relu : max(G_j S_j + L_j / 2a,  S_j + L_j^2 / 2a)

    The second relu term is the chain-rule bound (|softrelu'| <= 1 and
    softrelu' is 1/2a-Lipschitz); taking the max keeps both forms valid.
    Sup-norm error: + adds, x gives G_j g_k + g_j G_k + g_j g_k, relu adds a/4.
    """
    base = analyze_bounds(circuit, region_diameter)
    L, G = base.node_L, base.node_G
    n = circuit.size()
    logS = np.full(n, -math.inf)
    gam = np.zeros(n)
    log2a = math.log(2.0 * a)
    for i in circuit.topo_order:
        node = circuit.node(i)
        p = node.preds
        if node.kind is Kind.ADD:
            logS[i] = _logadd(logS[p[0]], logS[p[1]])
            gam[i] = gam[p[0]] + gam[p[1]]
        elif node.kind is Kind.MUL:
            j, k = p
            t = _logadd(logS[j] + _log(G[k]), logS[k] + _log(G[j]))
            logS[i] = _logadd(t, math.log(2.0) + _log(L[j]) + _log(L[k]))
            gam[i] = G[j] * gam[k] + gam[j] * G[k] + gam[j] * gam[k]
        elif node.kind is Kind.RELU:
            j = p[0]
            product_form = _logadd(_log(G[j]) + logS[j], _log(L[j]) - log2a)
            chain_form = _logadd(logS[j], 2 * _log(L[j]) - log2a)
            logS[i] = max(product_form, chain_form)
            gam[i] = a / 4.0 + gam[j]
        elif node.kind is Kind.OUTPUT:
            logS[i] = logS[p[0]]
            gam[i] = gam[p[0]]
    return replace(base, node_log_S=logS, node_gamma=gam, half_width=a)


@dataclass
class SmoothedCircuit:
    """A circuit whose relu gates evaluate as softrelu(a)."""

    base: Circuit
    params: SmoothingParams  # a is always resolved here
    bounds: BoundAnalysis
    circuit: Circuit

    @property
    def a(self) -> float:
        return self.params.a

    @property
    def dim(self) -> int:
        return self.circuit.dim

    def size(self) -> int:
        return self.circuit.size()

    def eval(self, x):
        return self.circuit.eval(x)

    def grad(self, x):
        return self.circuit.grad(x)

    def value_and_grad(self, x):
        return self.circuit.value_and_grad(x)

    def certified_logs(self) -> dict:
        """Closed-form totals (natural logs) with L, G clamped to >= 1."""
        s = self.size()
        L, G = max(self.bounds.L, 1.0), max(self.bounds.G, 1.0)
        la = math.log(self.a)
        return {
            "gamma_bound_log": la + s * math.log(2 * G),
            "S_closed_log": math.log(2 * L) - la + s * math.log(2 * G),
            "delta_bound_log": la + s * math.log(40 * L * G),
            "eps_bound_log": la + 3 * s * math.log(160 * L * G),
        }

    def report(self) -> dict:
        out = {
            "L": self.bounds.L,
            "G": self.bounds.G,
            "S_log": self.bounds.log_S,
            "a": self.a,
            "size": self.size(),
            "region_diameter": self.bounds.region_diameter,
            "gamma_recursive": self.bounds.gamma,
            # stationary points of the smoothed circuit map to (2 delta, 2 eps) ones of the base
            "delta_prime": 2 * self.params.delta,
            "eps_prime": 2 * self.params.epsilon,
        }
        out.update(self.certified_logs())
        return out


def smooth(circuit: Circuit, params: SmoothingParams, region_diameter: float) -> SmoothedCircuit:
    """Replace every relu gate by softrelu(a).

    When ``params.a`` is None the half-width comes from :func:`select_half_width`
    applied to the recursive (L, G) of ``circuit`` over the region.
    """
    circuit.require_valid()
    plain = circuit.with_half_width(None)
    if params.a is None:
        b = analyze_bounds(plain, region_diameter)
        a = select_half_width(b.L, b.G, plain.size(), params.delta, params.epsilon, params.gamma)
        params = replace(params, a=a)
    smoothed = plain.with_half_width(params.a)
    bounds = smoothed_bounds(plain, params.a, region_diameter)
    return SmoothedCircuit(plain, params, bounds, smoothed)
