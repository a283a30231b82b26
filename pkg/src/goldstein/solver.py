"""Deterministic Goldstein subgradient method and randomized baselines.

The deterministic method alternates a normalized descent step of length delta
with an inner loop that, whenever the step fails to decrease f enough, finds a
new delta-ball gradient by bisection and mixes it into the current direction
by exact line minimization of the norm.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .oracle import BudgetExceeded
from .stationarity import GoldsteinCertificate, certify, min_norm_point


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    OUTER_BUDGET = "OuterBudgetExhausted"
    STALLED = "BinarySearchStalled"
    INNER_BUDGET = "InnerBudgetExhausted"
    ORACLE_BUDGET = "OracleBudgetExhausted"

    def __str__(self):
        return self.value


class BinarySearchStalled(RuntimeError):
    """Bisection ran out of steps (or floating-point resolution)."""

    def __init__(self, message, steps=0):
        super().__init__(message)
        self.steps = steps


class ShrinkageWarning(RuntimeWarning):
    """An inner update shrank ||g|| less than the Lipschitz bound predicts."""


@dataclass
class SolverConfig:
    delta: float
    epsilon: float
    max_outer: int | None = None
    max_inner: int | None = None
    bs_max_steps: int | None = None
    lipschitz: float | None = None
    smoothness: float | None = None
    initial_gap: float | None = None  # Delta >= f(x0) - inf f, used for the default max_outer

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        for name in ("max_outer", "max_inner", "bs_max_steps"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be positive")

    def outer_cap(self) -> int:
        if self.max_outer is not None:
            return int(self.max_outer)
        if self.initial_gap is None:
            raise ValueError("max_outer is required when the initial gap Delta is unknown")
        return max(1, math.ceil(4 * self.initial_gap / (self.delta * self.epsilon)))

    def inner_cap(self) -> int:
        if self.max_inner is not None:
            return int(self.max_inner)
        if self.lipschitz is None:
            return 100_000
        return inner_bound(self.lipschitz, self.epsilon)

    def bs_cap(self) -> int:
        if self.bs_max_steps is not None:
            return int(self.bs_max_steps)
        if self.smoothness is None:
            return 64
        r = 8 * self.smoothness * self.delta / self.epsilon
        return max(1, math.ceil(math.log2(max(r, 2.0)))) + 8


def inner_bound(L: float, epsilon: float) -> int:
    """ceil(64 L^2 ln(L/eps) / eps^2) + 1, with the log floored at 1."""
    return math.ceil(64 * L * L * max(math.log(L / epsilon), 1.0) / epsilon ** 2) + 1


@dataclass
class SolverHistory:
    iterates: list = field(default_factory=list)
    values: list = field(default_factory=list)
    decreases: list = field(default_factory=list)
    inner_counts: list = field(default_factory=list)
    bs_steps: list = field(default_factory=list)
    cert_norms: list = field(default_factory=list)
    shrink_violations: int = 0


@dataclass
class SolverResult:
    point: np.ndarray
    certificate: GoldsteinCertificate | None
    oracle_calls: int
    outer_iters: int
    inner_iters_total: int
    status: Status
    value: float | None = None
    history: SolverHistory = field(default_factory=SolverHistory)
    message: str = ""

    @property
    def cert_norm(self) -> float:
        return math.inf if self.certificate is None else self.certificate.norm

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


# ---------------------------------------------------------------------------
# Bisection line search

@dataclass
class BinarySearchResult:
    g_new: np.ndarray
    point: np.ndarray
    steps: int
    calls: int


def binary_search(oracle, x, g0, delta: float, epsilon: float, bs_max_steps: int = 64,
                  f_x: float | None = None, first=None) -> BinarySearchResult:
    """Find a gradient in B_delta(x) that is not aligned with g0.

    With u = g0/||g0|| and phi(s) = f(x - s u) + s ||g0|| / 2, the search
    keeps phi(b) > phi(a) on [a, b] within [0, delta] and bisects until the
    probe t satisfies phi'(t) >= -eps/4, i.e.
    -grad f(x - t u).u + ||g0||/2 >= -eps/4.  The returned gradient then has
    g_new.g0 <= 3/4 ||g0||^2.

    Parameters
    ----------
    oracle : Oracle
        Must return values.
    f_x : float, optional
        Unused by the search itself; accepted so callers can pass it along.
    first : OracleResponse, optional
        Response already obtained at x - delta u (the descent-test probe).
        Reusing it saves one call.

    Raises
    ------
    BinarySearchStalled
        After ``bs_max_steps`` bisections, or when the bracket can no longer
        be split in floating point.
    """
    x = np.asarray(x, dtype=float)
    g0 = np.asarray(g0, dtype=float)
    n0 = float(np.linalg.norm(g0))
    if not n0 > 0:
        raise ValueError("g0 must be nonzero")
    u = g0 / n0
    calls = 0

    def probe(t):
        nonlocal calls
        calls += 1
        return oracle.query(x - t * u)

    a, b, t = 0.0, delta, delta
    r = first if first is not None else probe(t)
    if r.value is None:
        raise ValueError("binary_search needs function values")
    phi_b = r.value + b * n0 / 2
    steps = 0
    while -(r.gradient @ u) + n0 / 2 < -epsilon / 4:
        if steps >= bs_max_steps:
            raise BinarySearchStalled(f"no exit after {steps} bisection steps", steps)
        t = 0.5 * (a + b)
        if t <= a or t >= b:
            raise BinarySearchStalled("bisection bracket below floating-point resolution", steps)
        steps += 1
        r = probe(t)
        phi_t = r.value + t * n0 / 2
        if phi_b > phi_t:
            a = t
        else:
            b, phi_b = t, phi_t
    return BinarySearchResult(r.gradient, x - t * u, steps, calls)


# ---------------------------------------------------------------------------
# Deterministic Goldstein subgradient method and its randomized variant

class _Witness:
    """Convex-combination witness of the running direction g."""

    def __init__(self, y, grad):
        self.points = [np.asarray(y, float)]
        self.grads = [np.asarray(grad, float)]
        self.w = np.array([1.0])

    def g(self) -> np.ndarray:
        return self.w @ np.array(self.grads)

    def mix(self, lam, y, grad):
        self.w = np.append((1.0 - lam) * self.w, lam)
        self.points.append(np.asarray(y, float))
        self.grads.append(np.asarray(grad, float))

    def compact(self, cap: int):
        if len(self.w) <= cap:
            return
        keep = self.w > 0
        P = np.array(self.points)[keep]
        Gr = np.array(self.grads)[keep]
        g = self.w[keep] @ Gr
        res = min_norm_point(Gr - g)
        nz = res.weights > 0
        self.points = list(P[nz])
        self.grads = list(Gr[nz])
        self.w = res.weights[nz] / res.weights[nz].sum()

    def certificate(self, center, delta) -> GoldsteinCertificate:
        return GoldsteinCertificate.from_weights(center, delta, self.points, self.grads, self.w)


def _mix_coefficient(g, g_new) -> float:
    diff = g - g_new
    dd = float(diff @ diff)
    if dd == 0.0:
        return 0.0
    return min(max(float(g @ diff) / dd, 0.0), 1.0)


def _goldstein_sg(oracle, x0, cfg: SolverConfig, new_gradient) -> SolverResult:
    """Shared outer loop.  ``new_gradient(x, g, first)`` returns
    (g_new, y, bs_steps) or raises BinarySearchStalled."""
    delta, eps = cfg.delta, cfg.epsilon
    max_outer, max_inner = cfg.outer_cap(), cfg.inner_cap()
    L = cfg.lipschitz
    compact_cap = 4 * (inner_bound(L, eps) if L is not None else 1024)
    start_calls = oracle.call_count
    hist = SolverHistory()

    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    best: GoldsteinCertificate | None = None
    outer = inner_total = 0
    status, message = Status.OUTER_BUDGET, ""
    wit = None

    def done(st, msg=""):
        cert = wit.certificate(x, delta) if wit is not None else None
        out = cert
        if st is not Status.CONVERGED and best is not None and (out is None or best.norm < out.norm):
            out = best
        return SolverResult(x.copy(), out, oracle.call_count - start_calls, outer,
                            inner_total, st, f_x, hist, msg)

    f_x = None
    try:
        cur = oracle.query(x)
        while True:
            f_x = cur.value
            if f_x is None:
                raise ValueError("this solver needs function values")
            hist.iterates.append(x.copy())
            hist.values.append(f_x)
            wit = _Witness(x, cur.gradient)
            g = wit.g()
            inner = 0
            ties = 0
            while True:
                gn = float(np.linalg.norm(g))
                if gn <= eps:
                    hist.inner_counts.append(inner)
                    hist.cert_norms.append(gn)
                    return done(Status.CONVERGED)
                y = x - delta * g / gn
                ry = oracle.query(y)
                if ry.value - f_x <= -(delta / 2) * gn:
                    break
                if inner >= max_inner:
                    hist.inner_counts.append(inner)
                    return done(Status.INNER_BUDGET, f"inner loop exceeded {max_inner} iterations")
                inner += 1
                inner_total += 1
                g_new, y_new, steps = new_gradient(x, g, ry)
                hist.bs_steps.append(steps)
                lam = _mix_coefficient(g, g_new)
                if lam == 0.0:
                    ties += 1
                    if ties >= 2:
                        hist.inner_counts.append(inner)
                        return done(Status.STALLED, "direction unchanged by two consecutive updates")
                    continue
                ties = 0
                wit.mix(lam, y_new, g_new)
                wit.compact(compact_cap)
                h = wit.g()
                if L is not None and g_new @ g <= 0.75 * gn * gn:
                    bound = (1 - eps * eps / (64 * L * L)) * gn * gn
                    if h @ h > bound * (1 + 1e-12) + 1e-300:
                        hist.shrink_violations += 1
                        warnings.warn("inner update shrank less than the Lipschitz bound allows",
                                      ShrinkageWarning, stacklevel=3)
                g = h
            hist.inner_counts.append(inner)
            cert = wit.certificate(x, delta)
            hist.cert_norms.append(cert.norm)
            if best is None or cert.norm < best.norm:
                best = cert
            if outer >= max_outer:
                return done(Status.OUTER_BUDGET, f"{max_outer} outer iterations used")
            dec = f_x - ry.value
            if dec < (delta / 2) * gn:
                raise AssertionError("descent invariant violated")
            hist.decreases.append(dec)
            outer += 1
            x, cur = y, ry
            wit = None
    except BinarySearchStalled as exc:
        hist.inner_counts.append(inner)
        return done(Status.STALLED, str(exc))
    except BudgetExceeded as exc:
        return done(Status.ORACLE_BUDGET, str(exc))


def deterministic_goldstein_sg(oracle, x0, cfg: SolverConfig) -> SolverResult:
    """Deterministic Goldstein subgradient method.

    Returns a (delta, eps)-stationary point with a checkable certificate when
    ``status`` is Converged.  Stalls, exhausted budgets, and resisting oracles
    that stop answering are reported through ``status`` instead of raising.
    """
    bs_cap = cfg.bs_cap()

    def new_gradient(x, g, first):
        r = binary_search(oracle, x, g, cfg.delta, cfg.epsilon, bs_cap, first=first)
        return r.g_new, r.point, r.steps

    return _goldstein_sg(oracle, x0, cfg, new_gradient)


def randomized_goldstein_sg(oracle, x0, cfg: SolverConfig, seed: int = 0) -> SolverResult:
    """The deterministic method with the bisection replaced by one uniform sample on the
    segment [x, x - delta g/||g||] per inner iteration."""
    rng = np.random.default_rng(seed)

    def new_gradient(x, g, first):
        s = rng.uniform(0.0, cfg.delta)
        y = x - s * g / np.linalg.norm(g)
        return oracle.query(y).gradient, y, 0

    return _goldstein_sg(oracle, x0, cfg, new_gradient)


# ---------------------------------------------------------------------------
# gradient-only methods

def _local_certificate(points, grads, x, delta):
    """Min-norm certificate over already-queried gradients inside B_delta(x)."""
    P, Gr = np.asarray(points), np.asarray(grads)
    inside = np.linalg.norm(P - x, axis=1) <= delta
    if not np.any(inside):
        return None
    res = min_norm_point(Gr[inside])
    return GoldsteinCertificate.from_weights(x, delta, P[inside], Gr[inside], res.weights)


def sgd_on_uniform_smoothing(oracle, x0, delta: float, epsilon: float, steps: int,
                             step_size: float, seed: int = 0, eval_last: int = 5,
                             cert_samples: int | None = None) -> SolverResult:
    """SGD on the ball smoothing f_delta(x) = E f(x + delta u).

    Each step uses the unbiased estimate grad f(x + delta u) with u uniform in
    the unit ball.  Afterwards the last ``eval_last`` iterates are certified
    (seeded uniform samples, gradients only) and the best one is returned.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    d = x.shape[0]
    n_cert = cert_samples if cert_samples is not None else 2 * d + 2
    start = oracle.call_count
    hist = SolverHistory()
    trail = []
    status, message, k = Status.OUTER_BUDGET, "", 0
    try:
        for k in range(steps):
            z = rng.standard_normal(d)
            z *= rng.random() ** (1.0 / d) / max(np.linalg.norm(z), 1e-300)
            gr = oracle.query(x + delta * z).gradient
            x = x - step_size * gr
            hist.iterates.append(x.copy())
            trail = hist.iterates[-eval_last:]
        if not trail:
            trail = [x.copy()]
        best = None
        for i, xi in enumerate(trail):
            c = certify(oracle, xi, delta, n_cert, "uniform", seed=seed * 7919 + i)
            hist.cert_norms.append(c.norm)
            if best is None or c.norm < best.norm:
                best = c
    except BudgetExceeded as exc:
        best = None
        status, message = Status.ORACLE_BUDGET, str(exc)
        return SolverResult(x, best, oracle.call_count - start, k, 0, status, None, hist, message)
    if best.norm <= epsilon:
        status = Status.CONVERGED
    return SolverResult(best.center.copy(), best, oracle.call_count - start, steps, 0,
                        status, None, hist, message)


def gradient_descent(oracle, x0, delta: float, epsilon: float, steps: int,
                     step_size: float) -> SolverResult:
    """Plain deterministic gradient descent using gradients only.

    The certificate is the min-norm point of the gradients already queried
    inside B_delta of the returned iterate, so certification costs no extra
    calls.
    """
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    start = oracle.call_count
    hist = SolverHistory()
    pts, grads = [], []
    status, message = Status.OUTER_BUDGET, ""
    k = 0
    try:
        for k in range(1, steps + 1):
            gr = oracle.query(x).gradient
            pts.append(x.copy())
            grads.append(gr)
            hist.iterates.append(x.copy())
            if k < steps:
                x = x - step_size * gr
    except BudgetExceeded as exc:
        status, message = Status.ORACLE_BUDGET, str(exc)
    cert = _local_certificate(pts, grads, x, delta) if pts else None
    if cert is not None and cert.norm <= epsilon:
        status = Status.CONVERGED
    return SolverResult(x, cert, oracle.call_count - start, len(pts), 0, status, None, hist, message)


ALGORITHMS = ("det", "rand-ls", "sgd", "gd")
