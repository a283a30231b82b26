"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np
from scipy.integrate import quad

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, ball_points, central_fd  # noqa: E402

from goldstein.adversary import (ResistingOracleDet, attack, materialize_det,  # noqa: E402
                                 nonstationarity_evidence_det)
from goldstein.circuit import analyze_bounds  # noqa: E402
from goldstein.instances import builtin_instances, get_builtin  # noqa: E402
from goldstein.oracle import circuit_oracle, gradient_only  # noqa: E402
from goldstein.smoothing import SmoothingParams, VacuousBoundsWarning, smooth, softrelu, softrelu_grad  # noqa: E402
from goldstein.solver import (SolverConfig, Status, deterministic_goldstein_sg,  # noqa: E402
                              inner_bound, randomized_goldstein_sg, sgd_on_uniform_smoothing)
from goldstein.stationarity import min_norm_point, verify_certificate  # noqa: E402


def record(number, title, limit_s, body):
    """Run ``body`` (which returns (ok, detail)), check the time limit, and log a line."""
    t0 = time.perf_counter()
    try:
        ok, detail = body()
    except Exception as exc:
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - t0
    if elapsed >= limit_s:
        ok, detail = False, f"{detail}; runtime {elapsed:.1f}s over {limit_s}s"
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({elapsed:.2f}s) {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def smoothed(name, delta=0.1, eps=0.1, gamma=0.1, diam=2.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VacuousBoundsWarning)
        return smooth(get_builtin(name).circuit, SmoothingParams(delta, eps, gamma), diam)


# 1 ---------------------------------------------------------------------------------

def _softrelu_properties():
    rng = np.random.default_rng(1)
    n = 10_000
    z = rng.uniform(-3, 3, n)
    w = z + rng.normal(scale=0.3, size=n)
    a = 10 ** rng.uniform(-3, 0.3, n)
    s_z = np.array([softrelu(zi, ai) for zi, ai in zip(z, a)])
    err = np.abs(np.maximum(z, 0) - s_z)
    s_w = np.array([softrelu(wi, ai) for wi, ai in zip(w, a)])
    d_z = np.array([softrelu_grad(zi, ai) for zi, ai in zip(z, a)])
    d_w = np.array([softrelu_grad(wi, ai) for wi, ai in zip(w, a)])
    gap_ok = bool(np.all(err <= a / 4))
    lip = float(np.max(np.abs(s_z - s_w) / np.abs(z - w)))
    dlip = float(np.max(np.abs(d_z - d_w) / np.abs(z - w) * (2 * a)))
    # independent adaptive quadrature with the kink as a breakpoint
    qerr = 0.0
    for zi, ai in zip(z, a):
        val = quad(lambda xi: max(zi + xi, 0.0), -ai, ai,
                   points=[-zi] if -ai < -zi < ai else None, epsabs=1e-13, epsrel=1e-13)[0] / (2 * ai)
        qerr = max(qerr, abs(val - softrelu(zi, ai)))
    ok = gap_ok and lip <= 1 + 1e-12 and dlip <= 1 + 1e-9 and qerr <= 1e-8
    return ok, f"gap<=a/4={gap_ok} lip={lip:.6f} dlip*2a={dlip:.6f} quad_err={qerr:.2e}"


def test_criterion_1_softrelu_properties():
    record(1, "softrelu properties", 5.0, _softrelu_properties)


# 2 ---------------------------------------------------------------------------------

def _gradients():
    rng = np.random.default_rng(2)
    worst, checked = 0.0, 0
    for name, inst in builtin_instances().items():
        for fn in (inst.circuit, smoothed(name).circuit):
            X = rng.uniform(-1, 1, (3000, fn.dim))
            keep = np.all(np.abs(fn.preactivations(X)) > 1e-5, axis=1)
            X = X[keep][:1000]
            G = fn.value_and_grad(X)[1]
            FD = central_fd(fn.eval, X)
            rel = np.linalg.norm(G - FD, axis=1) / (1 + np.linalg.norm(G, axis=1))
            worst = max(worst, float(rel.max()))
            checked += len(X) == 1000
    n_fn = 2 * len(builtin_instances())
    return worst <= 1e-4 and checked == n_fn, f"{checked}/{n_fn} circuits x 1000 points, worst rel err {worst:.2e}"


def test_criterion_2_gradient_correctness():
    record(2, "reverse-mode gradients match finite differences", 30.0, _gradients)


# 3 ---------------------------------------------------------------------------------

def _descent():
    notes = []
    ok = True
    for name in ("abs1d", "maxlin-5", "relu-reg-4"):
        sc = smoothed(name)
        oracle = circuit_oracle(sc)
        res = deterministic_goldstein_sg(oracle, get_builtin(name).x0,
                                         SolverConfig(0.1, 0.1, max_outer=10_000, lipschitz=sc.bounds.L))
        vals = res.history.values
        steps = np.diff(vals)
        dec_ok = bool(np.all(-steps >= 0.005 - 1e-12)) if len(steps) else True
        ver = verify_certificate(res.certificate, circuit_oracle(sc))
        this = res.status is Status.CONVERGED and dec_ok and res.cert_norm <= 0.1 and ver
        ok &= this
        notes.append(f"{name}: {res.outer_iters} steps, min decrease "
                     f"{(-steps).min() if len(steps) else float('nan'):.4f}, cert {res.cert_norm:.3g}, verified={ver}")
    return ok, "; ".join(notes)


def test_criterion_3_descent_invariant():
    record(3, "descent invariant and verified certificates", 60.0, _descent)


# 4 ---------------------------------------------------------------------------------

def _complexity():
    Delta, L = 1.0, 1.0
    sc = smoothed("abs1d")
    x0 = get_builtin("abs1d").x0
    assert sc.eval(x0) - 0.0 <= Delta  # abs1d is nonnegative with f(x0) = 1
    H = math.exp(sc.bounds.log_S)
    ok, notes = True, []
    for delta in (0.1, 0.05):
        for eps in (0.1, 0.05):
            cfg = SolverConfig(delta, eps, max_outer=100_000, smoothness=H)
            res = deterministic_goldstein_sg(circuit_oracle(sc), x0, cfg)
            call_cap = 64 * Delta * L ** 2 * math.log(8 * H * L * delta / eps) / (delta * eps ** 3)
            inner_cap = inner_bound(L, eps)
            bs_cap = math.ceil(math.log2(8 * H * delta / eps)) + 2
            bs = max(res.history.bs_steps, default=0)
            inner = max(res.history.inner_counts, default=0)
            this = (res.status is Status.CONVERGED and res.oracle_calls <= call_cap
                    and inner <= inner_cap and bs <= bs_cap)
            ok &= this
            notes.append(f"(d={delta},e={eps}) calls {res.oracle_calls}<={call_cap:.3g} "
                         f"inner {inner}<={inner_cap} bs {bs}<={bs_cap}")
    return ok, "; ".join(notes)


def test_criterion_4_complexity_ceilings():
    record(4, "oracle-call, inner-loop and bisection ceilings", 120.0, _complexity)


# 5 ---------------------------------------------------------------------------------

def _smoothing_soundness():
    rng = np.random.default_rng(5)
    ok, notes = True, []
    for name in ("deep-chain-2", "relu-reg-2"):
        sc = smoothed(name, gamma=0.1, diam=2.0)
        base = sc.base
        X = ball_points(rng, 10_000, sc.dim)
        Y = ball_points(rng, 10_000, sc.dim)
        gap = float(np.abs(base.eval(X) - sc.eval(X)).max())
        lip = float((np.abs(sc.eval(X) - sc.eval(Y)) / np.linalg.norm(X - Y, axis=1)).max())
        Yc = X + 1e-4 * ball_points(rng, 10_000, sc.dim)
        gr = np.linalg.norm(sc.value_and_grad(X)[1] - sc.value_and_grad(Yc)[1], axis=1)
        gratio = float((gr / np.linalg.norm(X - Yc, axis=1)).max())
        log_ratio = math.log(gratio) if gratio > 0 else -math.inf
        this = gap <= 0.1 and lip <= sc.bounds.L and log_ratio <= sc.bounds.log_S
        ok &= this
        notes.append(f"{name}: gap {gap:.2e}<=0.1 lip {lip:.3f}<={sc.bounds.L:.3g} "
                     f"log grad ratio {log_ratio:.2f}<=log S {sc.bounds.log_S:.1f}")
    return ok, "; ".join(notes)


def test_criterion_5_smoothing_soundness():
    record(5, "smoothing soundness", 60.0, _smoothing_soundness)


# 6 ---------------------------------------------------------------------------------

def _det_attack():
    rep = attack("det", "first-order", 10, 8, 0.01, 0.02, L=7.0, Delta=1.0, hull_samples=1_000)
    inst = rep.instance
    rng = np.random.default_rng(6)
    worst = 0.0
    for t in range(len(inst.points)):
        X = inst.points[t] + 1.2 * inst.r * ball_points(rng, 2000, 10)
        Y = inst.points[t] + 1.2 * inst.r * ball_points(rng, 2000, 10)
        hx = np.array([inst.h(x) for x in X])
        hy = np.array([inst.h(y) for y in Y])
        worst = max(worst, float((np.abs(hx - hy) / np.linalg.norm(X - Y, axis=1)).max()))
    ev = nonstationarity_evidence_det(inst, 1_000_000, seed=6)
    ok = rep.consistent and worst <= 7.0 and ev.min_norm > 1 / 36 and rep.all_nonstationary \
        and rep.returned["cert_evidence"]["nonstationary"]
    return ok, (f"consistent={rep.consistent} queries={rep.oracle_calls} lip(h)={worst:.4f} "
                f"min hull norm={ev.min_norm:.4f}>1/36 all iterates nonstationary={rep.all_nonstationary}")


def test_criterion_6_first_order_attack():
    record(6, "first-order resisting-oracle attack", 120.0, _det_attack)


# 7 ---------------------------------------------------------------------------------

def _grad_only_attack():
    rep = attack("det", "grad-only", 1, 50, 0.1, 0.5)
    inst = rep.instance
    rng = np.random.default_rng(7)
    lo, hi = inst.knots_x[0] - 1, inst.knots_x[-1] + 1
    X = rng.uniform(lo, hi, 100_000)
    Y = np.concatenate([X[:50_000] + rng.normal(scale=inst.r, size=50_000),
                        rng.uniform(lo, hi, 50_000)])
    fx = np.array([inst.eval(x) for x in X])
    fy = np.array([inst.eval(y) for y in Y])
    img = float(max(np.abs(fx).max(), np.abs(fy).max()))
    far = np.abs(X - Y) > 1e-6  # closer pairs only measure rounding in the difference quotient
    lip = float((np.abs(fx - fy)[far] / np.abs(X - Y)[far]).max())
    knot_slope = float(np.abs(np.diff(inst.knots_f) / np.diff(inst.knots_x)).max())
    ev = rep.returned["cert_evidence"]
    ok = (rep.consistent and rep.oracle_calls == 50 and ev["goldstein_interval"] == [1.0, 1.0]
          and ev["min_norm"] > 0.5 and img <= 1.0 and lip <= 1.0 + 1e-9 and knot_slope <= 1.0)
    return ok, (f"consistent={rep.consistent} d_delta f(x_hat)={ev['goldstein_interval']} "
                f"|f|<={img:.3f} sampled lip={lip:.9f} max knot slope={knot_slope:.9f}")


def test_criterion_7_gradient_only_attack():
    record(7, "gradient-only resisting-oracle attack", 10.0, _grad_only_attack)


# 8 ---------------------------------------------------------------------------------

def _contrast():
    d, L, Delta, delta, eps = 10, 7.0, 1.0, 0.01, 0.02
    rng = np.random.default_rng(8)
    det_fail = rand_ok = sgd_ok = 0
    for seed in range(20):
        x0 = 0.5 * ball_points(rng, 1, d)[0]
        oracle = ResistingOracleDet(d, L)
        res = deterministic_goldstein_sg(oracle, x0, SolverConfig(delta, eps, max_outer=d))
        det_fail += res.status is not Status.CONVERGED and res.cert_norm > eps
        inst = materialize_det(oracle.transcript, L, Delta)
        r = randomized_goldstein_sg(circuit_oracle(inst), x0,
                                    SolverConfig(delta, eps, max_outer=2000), seed=seed)
        rand_ok += r.status is Status.CONVERGED and verify_certificate(r.certificate, circuit_oracle(inst))
        s = sgd_on_uniform_smoothing(gradient_only(circuit_oracle(inst)), x0, delta, eps,
                                     steps=200, step_size=0.05, seed=seed)
        sgd_ok += s.status is Status.CONVERGED and s.cert_norm <= eps
    ok = det_fail == 20 and rand_ok >= 1 and sgd_ok >= 1
    return ok, f"det failed on {det_fail}/20; rand-ls certified on {rand_ok}/20; sgd certified on {sgd_ok}/20"


def test_criterion_8_randomized_escape():
    record(8, "randomized escape contrast", 300.0, _contrast)


# 9 ---------------------------------------------------------------------------------

def brute_force_min_norm(V, rounds=12, n=101):
    """Zooming grid over the simplex (barycentric), independent of the solver."""
    m = V.shape[0]
    if m == 1:
        return V[0]
    center, width = np.full(m - 1, 1.0 / m), 1.0
    best = None
    for _ in range(rounds):
        axes = [np.linspace(c - width, c + width, n) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m - 1)
        grid = np.clip(grid, 0, 1)
        grid = grid[grid.sum(axis=1) <= 1]
        W = np.hstack([grid, 1 - grid.sum(axis=1, keepdims=True)])
        P = W @ V
        k = int(np.argmin(np.einsum("ij,ij->i", P, P)))
        best, center = P[k], grid[k]
        width /= 8
    return best


def _mnp_equivalence():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        m, d = rng.integers(1, 4), rng.integers(1, 4)
        V = rng.normal(size=(m, d))
        g = min_norm_point(V).g
        ref = brute_force_min_norm(V)
        worst = max(worst, abs(np.linalg.norm(g) - np.linalg.norm(ref)), float(np.linalg.norm(g - ref)))
    mono = 0
    for _ in range(200):
        m, d = rng.integers(1, 4), rng.integers(1, 4)
        A = rng.normal(size=(m, d))
        B = np.vstack([A, rng.normal(size=(rng.integers(1, 3), d))])
        mono += min_norm_point(B).norm <= min_norm_point(A).norm + 1e-12
    return worst <= 1e-6 and mono == 200, f"max deviation {worst:.2e}; monotone on {mono}/200"


def test_criterion_9_min_norm_point():
    record(9, "min-norm point vs brute force", 30.0, _mnp_equivalence)


if __name__ == "__main__":
    failed = 0
    for fn in (test_criterion_1_softrelu_properties, test_criterion_2_gradient_correctness,
               test_criterion_3_descent_invariant, test_criterion_4_complexity_ceilings,
               test_criterion_5_smoothing_soundness, test_criterion_6_first_order_attack,
               test_criterion_7_gradient_only_attack, test_criterion_8_randomized_escape,
               test_criterion_9_min_norm_point):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
