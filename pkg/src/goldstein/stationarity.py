"""Goldstein (delta, eps)-stationarity certificates.

A certificate is a convex combination of gradients taken at points of the
closed ball B_delta(x).  Its norm upper-bounds the distance from 0 to the
Goldstein subdifferential, so a small norm proves stationarity while a large
one proves nothing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

MNP_TOL = 1e-9
MNP_MAX_ITER = 10_000

POLICIES = ("grid", "lds", "uniform")


@dataclass
class MinNormResult:
    weights: np.ndarray
    g: np.ndarray
    converged: bool
    iterations: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.g))


def _affine_minimizer(P: np.ndarray) -> np.ndarray:
    """Weights mu (sum 1) minimising ||P.T @ mu|| over the affine hull of rows of P."""
    k = P.shape[0]
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = P @ P.T
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    mu = sol[:k]
    return mu / mu.sum()


def min_norm_point(vectors, tol: float = MNP_TOL, max_iter: int = MNP_MAX_ITER) -> MinNormResult:
    """Minimum-norm point of the convex hull of ``vectors`` (Wolfe's algorithm).

    Parameters
    ----------
    vectors : array_like, shape (m, d)
        Nonempty list of vectors of a common dimension.
    tol : float
        Stop once ``max_i (g.g - g.v_i) <= tol * (1 + ||g||^2)``.
    max_iter : int
        Cap on corrective steps.  When hit, the best point found so far is
        returned with ``converged=False``.

    Returns
    -------
    MinNormResult
        Convex weights over all inputs and the point ``g = weights @ vectors``.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.size == 0 or V.shape[0] == 0:
        raise ValueError("min_norm_point needs at least one vector")
    m = V.shape[0]
    sq = np.einsum("ij,ij->i", V, V)

    start = int(np.argmin(sq))
    S = [start]
    lam = np.array([1.0])
    g = V[start].copy()
    best_w, best_g = _dense(S, lam, m), g.copy()
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        gg = g @ g
        dots = V @ g
        j = int(np.argmin(dots))
        if gg - dots[j] <= tol * (1.0 + gg) or j in S:
            converged = gg - dots[j] <= tol * (1.0 + gg) or j in S
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        # minor cycle: move toward the affine minimiser while staying feasible
        while it < max_iter:
            it += 1
            mu = _affine_minimizer(V[S])
            if np.all(mu > 1e-14):
                lam = mu
                break
            neg = mu <= 1e-14
            ratios = lam[neg] / np.maximum(lam[neg] - mu[neg], 1e-300)
            theta = min(1.0, float(ratios.min()))
            lam = (1 - theta) * lam + theta * mu
            keep = lam > 1e-14
            if not np.any(keep):
                keep[np.argmax(lam)] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        lam = np.clip(lam, 0.0, None)
        lam = lam / lam.sum()
        g = lam @ V[S]
        if g @ g < best_g @ best_g:
            best_w, best_g = _dense(S, lam, m), g.copy()
    else:
        converged = False

    w = _dense(S, lam, m)
    g = w @ V
    if best_g @ best_g < g @ g:
        w, g = best_w, best_w @ V
    return MinNormResult(w, g, converged, it)


def _dense(S, lam, m):
    w = np.zeros(m)
    for s, l in zip(S, lam):
        w[s] += l
    return w


# ---------------------------------------------------------------------------
# sampling policies over the closed ball B_delta(x)

def _unit_ball_from_cube(U: np.ndarray, d: int) -> np.ndarray:
    """Map points of [0,1)^(d+1) into the unit ball: normal direction, radius u^(1/d)."""
    U = np.clip(U, 1e-12, 1 - 1e-12)
    Z = ndtri(U[:, :d])
    nrm = np.linalg.norm(Z, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    return Z / nrm * U[:, d:d + 1] ** (1.0 / d)


def ball_lds(d: int, n: int) -> np.ndarray:
    """Deterministic Sobol points (unscrambled, first point skipped) in the unit ball."""
    sob = qmc.Sobol(d + 1, scramble=False)
    sob.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        U = sob.random(n)
    return _unit_ball_from_cube(U, d)


def ball_uniform(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded uniform samples in the unit ball."""
    Z = rng.standard_normal((n, d))
    nrm = np.linalg.norm(Z, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    return Z / nrm * rng.random((n, 1)) ** (1.0 / d)


def ball_grid(d: int, n: int) -> np.ndarray:
    """Axis-star grid: points +-(k/m) e_i ordered by level, then axis, then sign.

    In one dimension this is the symmetric grid of n points in [-1, 1] minus 0.
    """
    m = max(1, math.ceil(n / (2 * d)))
    pts = []
    for k in range(1, m + 1):
        for i in range(d):
            for s in (-1.0, 1.0):
                p = np.zeros(d)
                p[i] = s * k / m
                pts.append(p)
    return np.array(pts[:n]).reshape(n, d)


def sample_ball(x, delta: float, n: int, policy: str = "lds", seed: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    if policy == "lds":
        B = ball_lds(d, n)
    elif policy == "grid":
        B = ball_grid(d, n)
    elif policy == "uniform":
        B = ball_uniform(d, n, np.random.default_rng(seed))
    else:
        raise ValueError(f"unknown sampling policy {policy!r}; expected one of {POLICIES}")
    return x + delta * B


# ---------------------------------------------------------------------------
# certificates

@dataclass
class GoldsteinCertificate:
    """Witness g = sum_i w_i grad f(y_i) with every y_i in B_delta(center)."""

    center: np.ndarray
    delta: float
    points: np.ndarray   # (n, d)
    grads: np.ndarray    # (n, d)
    weights: np.ndarray  # (n,)
    g: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.g))

    @property
    def support(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.points, self.grads))

    @classmethod
    def from_weights(cls, center, delta, points, grads, weights, prune: bool = True):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        grads = np.atleast_2d(np.asarray(grads, dtype=float))
        weights = np.asarray(weights, dtype=float)
        if prune:
            keep = weights > 0
            points, grads, weights = points[keep], grads[keep], weights[keep]
        weights = weights / weights.sum()
        return cls(np.asarray(center, dtype=float), float(delta), points, grads,
                   weights, weights @ grads)

    def to_dict(self) -> dict:
        return {
            "norm": self.norm,
            "delta": self.delta,
            "center": self.center.tolist(),
            "g": self.g.tolist(),
            "weights": self.weights.tolist(),
            "points": self.points.tolist(),
            "grads": self.grads.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GoldsteinCertificate":
        return cls(np.array(d["center"], float), float(d["delta"]),
                   np.array(d["points"], float), np.array(d["grads"], float),
                   np.array(d["weights"], float), np.array(d["g"], float))


def certify(oracle, x, delta: float, samples: int, policy: str = "lds",
            seed: int = 0) -> GoldsteinCertificate:
    """Sample gradients at x and ``samples`` policy points of B_delta(x), then
    take the min-norm point of their hull."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    P = np.vstack([x[None, :], sample_ball(x, delta, samples, policy, seed)])
    Gr = np.array([oracle.query(p).gradient for p in P])
    res = min_norm_point(Gr)
    return GoldsteinCertificate.from_weights(x, delta, P, Gr, res.weights)


def verify_certificate(cert: GoldsteinCertificate, oracle=None, grad_tol: float = 1e-9) -> bool:
    """Re-check every certificate invariant; re-query support gradients when an
    oracle is given."""
    w = np.asarray(cert.weights, dtype=float)
    P = np.atleast_2d(cert.points)
    Gr = np.atleast_2d(cert.grads)
    if w.ndim != 1 or len(w) == 0 or P.shape[0] != len(w) or Gr.shape[0] != len(w):
        return False
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(Gr)) and np.all(np.isfinite(P))):
        return False
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        return False
    if np.any(np.linalg.norm(P - cert.center, axis=1) > cert.delta + 1e-12):
        return False
    if np.linalg.norm(w @ Gr - cert.g) > 1e-9:
        return False
    if oracle is not None:
        for p, gr in zip(P, Gr):
            fresh = oracle.query(p).gradient
            if np.linalg.norm(fresh - gr) > grad_tol * (1.0 + np.linalg.norm(gr)):
                return False
    return True
