"""Resisting oracles and the hard instances consistent with their transcripts.

Two constructions are provided.

* First-order, dimension d >= 3: the oracle answers value 0 and gradient
  (L/7) e_1 to at most d-2 queries.  Afterwards a function
  f = max{(L/7) h, -Delta} is built that reproduces those answers and has no
  (delta, L/252)-stationary points near any queried point.
* Gradient-only, one dimension: the oracle answers derivative 1.  The
  materialized f is linear with slope 1 around the returned point and flat
  (with small slope-1 bumps at queried points) elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import BudgetExceeded, Oracle, OracleTranscript
from .solver import (SolverConfig, deterministic_goldstein_sg, gradient_descent,
                     randomized_goldstein_sg, sgd_on_uniform_smoothing)

HULL_BOUND = 1.0 / (math.sqrt(2.0) + 4.0) ** 2  # min norm over the bump gradient hull
MIN_GAP = 1e-9


class QueryRefused(BudgetExceeded):
    """The resisting oracle's validity budget (d - 2 queries) is spent."""


class ConstructionError(RuntimeError):
    """A materialized instance failed one of its own defining checks."""


def _unique_points(points) -> np.ndarray:
    out = []
    for p in np.atleast_2d(np.asarray(points, dtype=float)):
        if not any(np.array_equal(p, q) for q in out):
            out.append(p)
    return np.array(out)


def _points_of(transcript_or_points) -> np.ndarray:
    if isinstance(transcript_or_points, OracleTranscript):
        return transcript_or_points.points
    return np.asarray(transcript_or_points, dtype=float)


# ---------------------------------------------------------------------------
# first-order construction

class ResistingOracleDet(Oracle):
    """Answers (0, (L/7) e_1) to every query; refuses after d - 2 queries."""

    def __init__(self, d: int, L: float = 7.0, max_calls: int | None = None):
        if d < 3:
            raise ValueError("the first-order resisting oracle needs d >= 3")
        cap = d - 2 if max_calls is None else min(int(max_calls), d - 2)
        super().__init__(d, cap)
        self.L = float(L)
        self._g = np.zeros(d)
        self._g[0] = self.L / 7.0

    def _over_budget(self):
        return QueryRefused(f"resisting oracle answers at most {self.max_calls} queries in d={self.dim}")

    def _evaluate(self, x):
        return 0.0, self._g.copy()


def resisting_oracle_det(d: int, L: float = 7.0, max_calls: int | None = None) -> ResistingOracleDet:
    return ResistingOracleDet(d, L, max_calls)


def orthogonal_direction(points, d: int) -> np.ndarray:
    """Unit v orthogonal to e_1 and every point.

    Modified Gram-Schmidt (two passes) over e_1, the points, then e_2, e_3, ...;
    the first basis vector that survives after the points is returned.
    """
    basis: list[np.ndarray] = []

    def reduce(w):
        for _ in range(2):
            for q in basis:
                w = w - (q @ w) * q
        return w

    e = np.eye(d)
    for w in [e[0], *np.atleast_2d(points)]:
        scale = max(1.0, float(np.linalg.norm(w)))
        w = reduce(np.array(w, dtype=float))
        if np.linalg.norm(w) > 1e-10 * scale:
            basis.append(w / np.linalg.norm(w))
    for k in range(1, d):
        w = reduce(e[k].copy())
        n = np.linalg.norm(w)
        if n > 1e-8:
            v = reduce(w / n)
            return v / np.linalg.norm(v)
    raise ValueError("no direction orthogonal to e_1 and the queried points (need d >= T + 2)")


@dataclass
class HardInstanceDet:
    """f(x) = max{(L/7) h(x), -Delta} with slope-v background and e_1 bumps.

    ``h(x) = v.x`` outside every B_r(x_t) and ``g_{x_t}(x)`` inside, where
    g_z(x) = m v.x + (1 - m) e_1.(x - z) and m = ||x - z||^2 / r^2.
    """

    points: np.ndarray
    v: np.ndarray
    r: float
    L: float
    Delta: float

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    def _nearest(self, x):
        dist = np.linalg.norm(self.points - x, axis=1)
        t = int(np.argmin(dist))
        return t, float(dist[t])

    def h_value_and_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        t, dist = self._nearest(x)
        vx = float(self.v @ x)
        if dist >= self.r:
            return vx, self.v.copy()
        z = self.points[t]
        w = x - z
        m = dist * dist / (self.r * self.r)
        val = m * vx + (1 - m) * w[0]
        e1 = np.zeros_like(x)
        e1[0] = 1.0
        grad = (2 * vx / self.r ** 2) * w + m * self.v - (2 * w[0] / self.r ** 2) * w - m * e1 + e1
        return val, grad

    def h(self, x) -> float:
        return self.h_value_and_grad(x)[0]

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        hv, hg = self.h_value_and_grad(x)
        s = self.L / 7.0
        if s * hv > -self.Delta:
            return s * hv, s * hg
        return -self.Delta, np.zeros_like(hg)

    def eval(self, x) -> float:
        return self.value_and_grad(x)[0]

    def grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def stationary_distance_bound(self, x) -> float:
        """Lower bound on the distance from x to {f = -Delta} (f is L-Lipschitz)."""
        return (self.eval(x) + self.Delta) / self.L

    def is_nonstationary(self, x, delta: float, epsilon: float) -> bool:
        """Analytic check: the whole delta-ball sees only (L/7) * grad h, whose
        hull avoids the (L/7)/(sqrt 2 + 4)^2 ball around 0."""
        return (self.stationary_distance_bound(x) > delta
                and epsilon < (self.L / 7.0) * HULL_BOUND)


def materialize_det(transcript, L: float = 7.0, Delta: float = 1.0) -> HardInstanceDet:
    """Build the hard instance consistent with a first-order resisting transcript.

    Exact repeats of a query are merged; distinct queries closer than 1e-9
    are refused.
    """
    P = _unique_points(_points_of(transcript))
    T, d = P.shape
    if d < T + 2:
        raise ValueError(f"{T} distinct queries need d >= {T + 2}, got d={d}")
    if T >= 2:
        diff = P[:, None, :] - P[None, :, :]
        D = np.linalg.norm(diff, axis=2)
        gap = float(D[np.triu_indices(T, 1)].min())
        if gap < MIN_GAP:
            raise ValueError(f"queried points are {gap:.3g} apart; below the {MIN_GAP:g} floor")
        r = gap / 4.0
    else:
        r = 1.0
    v = orthogonal_direction(P, d)
    return HardInstanceDet(P, v, r, float(L), float(Delta))


def hull_vectors(v, X, lam):
    """Canonical gradient combinations lam_1 v + lam_2 grad g_0(x), ||x|| <= 1.

    Written as (l1 + l2 |x|^2) v + 2 l2 ((v - e1).x) x + l2 (1 - |x|^2) e1.
    """
    X = np.atleast_2d(X)
    lam = np.asarray(lam, dtype=float).reshape(-1, 1)
    l1, l2 = 1.0 - lam, lam
    e1 = np.zeros(X.shape[1])
    e1[0] = 1.0
    sq = np.einsum("ij,ij->i", X, X)[:, None]
    proj = (X @ (v - e1))[:, None]
    return (l1 + l2 * sq) * v + 2 * l2 * proj * X + l2 * (1 - sq) * e1


@dataclass
class EvidenceReport:
    samples: int
    min_norm: float
    bound: float = HULL_BOUND
    threshold: float = 1.0 / 36.0

    @property
    def ok(self) -> bool:
        return self.min_norm > self.threshold


def nonstationarity_evidence_det(instance: HardInstanceDet, M: int, seed: int = 0,
                                 chunk: int = 100_000) -> EvidenceReport:
    """Monte-Carlo falsification of the 1/36 hull bound.

    Half of the x samples are drawn in the plane span{e_1, v}, where the
    minimum lives, and half in the full unit ball.

    Raises
    ------
    ConstructionError
        If any sampled combination has norm <= 1/36.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(seed)
    v, d = instance.v, instance.dim
    e1 = np.zeros(d)
    e1[0] = 1.0
    best = math.inf
    done = 0
    while done < M:
        n = min(chunk, M - done)
        Z = rng.standard_normal((n, d))
        half = n // 2
        plane = rng.standard_normal((half, 2))
        Z[:half] = plane[:, :1] * e1 + plane[:, 1:] * v
        Z /= np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), 1e-300)
        rad = rng.random((n, 1)) ** (1.0 / np.where(np.arange(n) < half, 2, d))[:, None]
        X = Z * rad
        lam = rng.random(n)
        U = hull_vectors(v, X, lam)
        norms = np.linalg.norm(U, axis=1)
        k = int(np.argmin(norms))
        if norms[k] <= 1.0 / 36.0:
            raise ConstructionError(
                f"hull vector of norm {norms[k]:.3g} at lambda={lam[k]:.6g}, x={X[k].tolist()}")
        best = min(best, float(norms[k]))
        done += n
    return EvidenceReport(M, best)


# ---------------------------------------------------------------------------
# gradient-only construction in one dimension

class ResistingOracleGradOnly(Oracle):
    """Answers derivative 1 to every query and never reveals values."""

    provides_values = False

    def __init__(self, max_calls: int | None = None):
        super().__init__(1, max_calls)

    def _evaluate(self, x):
        return None, np.ones(1)


def resisting_oracle_grad_only(max_calls: int | None = None) -> ResistingOracleGradOnly:
    return ResistingOracleGradOnly(max_calls)


@dataclass
class HardInstance1D:
    """Piecewise-linear 1-Lipschitz f: R -> [-1, 1] given by its knots.

    f(x) = x - x_hat on [x_hat - c, x_hat + c] with c = delta + eta, constant
    +-c beyond, plus width-r bumps whose middle piece has slope 1 at every
    query on the plateaus.  f is constant outside the knot range.
    """

    queries: np.ndarray
    x_hat: float
    delta: float
    eta: float
    r: float
    knots_x: np.ndarray
    knots_f: np.ndarray

    dim = 1

    @property
    def c(self) -> float:
        return self.delta + self.eta

    def eval(self, x) -> float:
        return float(np.interp(np.asarray(x, dtype=float).reshape(-1)[0], self.knots_x, self.knots_f))

    def _slopes(self) -> np.ndarray:
        # every piece has slope 0 or +-1 by construction; snap away rounding
        return np.rint(np.diff(self.knots_f) / np.diff(self.knots_x))

    def deriv(self, x) -> float:
        """Slope of the piece [k_i, k_{i+1}) containing x (0 outside)."""
        x = float(np.asarray(x, dtype=float).reshape(-1)[0])
        i = int(np.searchsorted(self.knots_x, x, side="right")) - 1
        if i < 0 or i >= len(self.knots_x) - 1:
            return 0.0
        return float(self._slopes()[i])

    def value_and_grad(self, x):
        return self.eval(x), np.array([self.deriv(x)])

    def grad(self, x):
        return np.array([self.deriv(x)])

    def goldstein_interval(self, x, delta: float) -> tuple[float, float]:
        """Exact delta-subdifferential [lo, hi]: hull of slopes meeting [x-delta, x+delta]."""
        x = float(np.asarray(x, dtype=float).reshape(-1)[0])
        lo_x, hi_x = x - delta, x + delta
        kx = self.knots_x
        sl = list(self._slopes())
        segs = list(zip(kx[:-1], kx[1:], sl))
        slopes = [s for a, b, s in segs if b >= lo_x and a <= hi_x]
        if lo_x <= kx[0] or hi_x >= kx[-1]:
            slopes.append(0.0)
        return min(slopes), max(slopes)

    def goldstein_min_norm(self, x, delta: float) -> float:
        lo, hi = self.goldstein_interval(x, delta)
        if lo <= 0.0 <= hi:
            return 0.0
        return min(abs(lo), abs(hi))


def _choose_eta(Q, x_hat, delta, max_k: int = 200) -> float:
    qs = set(np.asarray(Q, dtype=float).tolist())
    for k in range(1, max_k + 1):
        eta = 2.0 ** (-k) * (1.0 - delta) / 2.0
        c = delta + eta
        if (x_hat + c) not in qs and (x_hat - c) not in qs:
            return eta
    raise ValueError("no admissible eta found")


def materialize_1d(transcript, x_hat: float, delta: float) -> HardInstance1D:
    """Build the 1-D hard instance from a gradient-only transcript and the
    returned point x_hat."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    Q = np.unique(_points_of(transcript).reshape(-1))
    x_hat = float(np.asarray(x_hat, dtype=float).reshape(-1)[0])
    eta = _choose_eta(Q, x_hat, delta)
    c = delta + eta
    Qbar = np.unique(np.concatenate([Q, [x_hat - c, x_hat + c]]))
    gap = float(np.diff(Qbar).min()) if len(Qbar) > 1 else math.inf
    r = min(gap / 10.0, delta)

    kx, kf = [x_hat - c, x_hat + c], [-c, c]
    for q in Q:
        if q > x_hat + c:
            kx += [q - r, q - r / 4, q + r / 2]
            kf += [c, c - 0.75 * r, c]
        elif q < x_hat - c:
            kx += [q - r / 2, q + r / 4, q + r]
            kf += [-c, -c + 0.75 * r, -c]
    order = np.argsort(kx, kind="stable")
    kx = np.asarray(kx)[order]
    kf = np.asarray(kf)[order]
    if np.any(np.diff(kx) <= 0):
        raise ConstructionError("bump knots overlap")
    return HardInstance1D(Q, x_hat, float(delta), eta, r, kx, kf)


# ---------------------------------------------------------------------------
# attack harness

@dataclass
class AttackReport:
    mode: str
    algo: str
    consistent: bool
    iterates: list = field(default_factory=list)
    returned: dict = field(default_factory=dict)
    min_sampled_hull_norm: float | None = None
    solver_status: str = ""
    oracle_calls: int = 0
    instance: object = None
    result: object = None

    @property
    def all_nonstationary(self) -> bool:
        return all(it["cert_evidence"]["nonstationary"] for it in self.iterates)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "algo": self.algo,
            "consistent": self.consistent,
            "solver_status": self.solver_status,
            "oracle_calls": self.oracle_calls,
            "iterates": self.iterates,
            "returned": self.returned,
            "all_nonstationary": self.all_nonstationary,
            "min_sampled_hull_norm": self.min_sampled_hull_norm,
        }


def _run_solver(algo, oracle, x0, delta, epsilon, budget, seed, step_size):
    if algo == "det":
        if not oracle.provides_values:
            return gradient_descent(oracle, x0, delta, epsilon, budget, step_size)
        cfg = SolverConfig(delta, epsilon, max_outer=max(budget, 1))
        return deterministic_goldstein_sg(oracle, x0, cfg)
    if algo == "gd":
        return gradient_descent(oracle, x0, delta, epsilon, budget, step_size)
    if algo == "rand-ls":
        if not oracle.provides_values:
            raise ValueError("rand-ls needs function values; not available in grad-only mode")
        cfg = SolverConfig(delta, epsilon, max_outer=max(budget, 1))
        return randomized_goldstein_sg(oracle, x0, cfg, seed)
    if algo == "sgd":
        return sgd_on_uniform_smoothing(oracle, x0, delta, epsilon, budget, step_size, seed)
    raise ValueError(f"unknown algorithm {algo!r}")


def attack(algo: str, mode: str, d: int, budget: int, delta: float, epsilon: float,
           L: float = 7.0, Delta: float = 1.0, seed: int = 0, x0=None,
           step_size: float | None = None, hull_samples: int = 100_000) -> AttackReport:
    """Run a solver against a resisting oracle and check the materialized instance.

    Parameters
    ----------
    algo : {"det", "rand-ls", "sgd", "gd"}
        In grad-only mode "det" means deterministic gradient descent.
    mode : {"first-order", "grad-only"}
    budget : int
        Oracle calls allowed (capped at d - 2 in first-order mode).
    """
    if mode == "first-order":
        return _attack_det(algo, d, budget, delta, epsilon, L, Delta, seed, x0,
                           step_size, hull_samples)
    if mode == "grad-only":
        return _attack_1d(algo, budget, delta, epsilon, seed, x0, step_size)
    raise ValueError(f"unknown adversary mode {mode!r}")


def _attack_det(algo, d, budget, delta, epsilon, L, Delta, seed, x0, step_size, hull_samples):
    if budget > d - 2:
        raise ValueError(f"budget {budget} exceeds the construction limit d - 2 = {d - 2}")
    oracle = ResistingOracleDet(d, L, budget)
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    res = _run_solver(algo, oracle, x0, delta, epsilon, budget, seed,
                      step_size if step_size is not None else delta)
    inst = materialize_det(oracle.transcript, L, Delta)
    consistent = True
    for x, resp in oracle.transcript.queries:
        val, gr = inst.value_and_grad(x)
        if abs(val - resp.value) > 1e-9 or np.linalg.norm(gr - resp.gradient) > 1e-9:
            consistent = False

    def evidence(x):
        dist = inst.stationary_distance_bound(x)
        return {"distance_to_stationary_region_lb": float(dist),
                "hull_norm_lb": (L / 7.0) * HULL_BOUND,
                "nonstationary": bool(inst.is_nonstationary(x, delta, epsilon))}

    iterates = [{"x": x.tolist(), "f": inst.eval(x), "cert_evidence": evidence(x)}
                for x in _unique_points(oracle.transcript.points)]
    returned = {"x": res.point.tolist(), "f": inst.eval(res.point),
                "cert_evidence": evidence(res.point)}
    ev = nonstationarity_evidence_det(inst, hull_samples, seed)
    return AttackReport("first-order", algo, consistent, iterates, returned, ev.min_norm,
                        str(res.status), res.oracle_calls, inst, res)


def _attack_1d(algo, budget, delta, epsilon, seed, x0, step_size):
    oracle = ResistingOracleGradOnly(budget)
    x0 = np.zeros(1) if x0 is None else np.asarray(x0, dtype=float).reshape(1)
    res = _run_solver(algo, oracle, x0, delta, epsilon, budget, seed,
                      step_size if step_size is not None else 0.01 * delta)
    inst = materialize_1d(oracle.transcript, res.point[0], delta)
    consistent = all(abs(inst.deriv(x) - 1.0) <= 1e-9 for x, _ in oracle.transcript.queries)

    def evidence(x):
        lo, hi = inst.goldstein_interval(x, delta)
        mn = inst.goldstein_min_norm(x, delta)
        return {"goldstein_interval": [float(lo), float(hi)], "min_norm": float(mn),
                "nonstationary": bool(mn > epsilon)}

    iterates = [{"x": [float(q)], "f": inst.eval(q), "cert_evidence": evidence(q)}
                for q in inst.queries]
    returned = {"x": res.point.tolist(), "f": inst.eval(res.point),
                "cert_evidence": evidence(res.point)}
    return AttackReport("grad-only", algo, consistent, iterates, returned, None,
                        str(res.status), res.oracle_calls, inst, res)
