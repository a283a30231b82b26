import math

import numpy as np
import pytest

from goldstein.adversary import (HULL_BOUND, ConstructionError, QueryRefused,
                                 ResistingOracleDet, ResistingOracleGradOnly, attack,
                                 hull_vectors, materialize_1d, materialize_det,
                                 nonstationarity_evidence_det, orthogonal_direction)
from goldstein.oracle import circuit_oracle
from goldstein.solver import SolverConfig, deterministic_goldstein_sg

from conftest import ball_points


def det_transcript(d=10, L=7.0, x0=None):
    o = ResistingOracleDet(d, L)
    deterministic_goldstein_sg(o, np.zeros(d) if x0 is None else x0, SolverConfig(0.01, 0.02, max_outer=50))
    return o


# -- first-order resisting oracle -----------------------------------------------

def test_resisting_answers(rng):
    o = ResistingOracleDet(6, L=3.5)
    r = o.query(rng.normal(size=6))
    assert r.value == 0.0
    np.testing.assert_array_equal(r.gradient, [0.5, 0, 0, 0, 0, 0])


def test_resisting_refuses_after_d_minus_2():
    o = ResistingOracleDet(5)
    for k in range(3):
        o.query(np.full(5, float(k)))
    with pytest.raises(QueryRefused):
        o.query(np.ones(5))
    assert len(o.transcript) == o.call_count == 3


def test_resisting_needs_d3():
    with pytest.raises(ValueError):
        ResistingOracleDet(2)


def test_det_transcript_shape():
    o = det_transcript()
    P = o.transcript.points
    assert len(P) == 8
    # first probe is x0 - delta e1, then bisection towards it
    np.testing.assert_array_equal(P[1], -0.01 * np.eye(10)[0])
    assert np.all(P[:, 1:] == 0)


def test_materialize_orthogonality_and_radius():
    o = det_transcript()
    inst = materialize_det(o.transcript, 7.0, 1.0)
    P = o.transcript.points
    assert abs(np.linalg.norm(inst.v) - 1) <= 1e-12
    assert abs(inst.v[0]) <= 1e-10
    for x in P:
        assert abs(inst.v @ x) <= 1e-10 * max(1.0, np.linalg.norm(x))
    gaps = [np.linalg.norm(a - b) for i, a in enumerate(P) for b in P[i + 1:]]
    assert inst.r == pytest.approx(min(gaps) / 4)


def test_orthogonal_direction_general_points(rng):
    P = rng.normal(size=(5, 8))
    v = orthogonal_direction(P, 8)
    assert abs(v[0]) <= 1e-10 and np.all(np.abs(P @ v) <= 1e-10 * np.linalg.norm(P, axis=1))


def test_replay_consistency():
    o = det_transcript()
    inst = materialize_det(o.transcript, 7.0, 1.0)
    for x, resp in o.transcript.queries:
        val, g = inst.value_and_grad(x)
        assert abs(val - resp.value) <= 1e-9
        assert np.linalg.norm(g - resp.gradient) <= 1e-9


def test_far_point_is_linear():
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    x = 0.3 * inst.v + np.eye(10)[3] * 0.0 + 5.0 * np.eye(10)[0]
    assert inst.eval(x) == pytest.approx(inst.v @ x)


def test_clip_and_gap():
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    x = -3.0 * inst.v + 5.0 * np.eye(10)[0]
    assert inst.eval(x) == -1.0 and np.all(inst.grad(x) == 0)
    assert inst.eval(np.zeros(10)) - (-1.0) <= 1.0


def test_bump_boundary_continuity(rng):
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    for t in range(len(inst.points)):
        U = ball_points(rng, 125, 10)
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        for u in U:
            x = inst.points[t] + inst.r * u
            assert abs(inst.h(x) - inst.v @ x) <= 1e-9


def test_no_point_in_two_bumps():
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    P = inst.points
    D = np.linalg.norm(P[:, None] - P[None], axis=2) + np.eye(len(P)) * 1e9
    assert D.min() >= 2 * inst.r


def test_h_is_seven_lipschitz(rng):
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    worst = 0.0
    n = 100_000
    for k in range(n // 1000):
        t = k % len(inst.points)
        X = inst.points[t] + inst.r * 1.2 * ball_points(rng, 1000, 10)
        Y = inst.points[t] + inst.r * 1.2 * ball_points(rng, 1000, 10)
        hx = np.array([inst.h(x) for x in X])
        hy = np.array([inst.h(y) for y in Y])
        worst = max(worst, float((np.abs(hx - hy) / np.linalg.norm(X - Y, axis=1)).max()))
    assert worst <= 7 + 1e-6


def test_h_gradient_matches_fd(rng):
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    for _ in range(50):
        t = rng.integers(len(inst.points))
        x = inst.points[t] + 0.5 * inst.r * ball_points(rng, 1, 10)[0]
        h = 1e-3 * inst.r
        fd = np.array([(inst.h(x + h * e) - inst.h(x - h * e)) / (2 * h) for e in np.eye(10)])
        np.testing.assert_allclose(inst.h_value_and_grad(x)[1], fd, atol=1e-5)


def test_materialize_errors():
    P = np.zeros((3, 4))
    P[1, 0] = 1.0
    P[2, 0] = 1.0 + 1e-12
    with pytest.raises(ValueError):
        materialize_det(P, 7.0, 1.0)
    with pytest.raises(ValueError):
        materialize_det(np.eye(4), 7.0, 1.0)  # T = 4 > d - 2


def test_exact_repeats_merged():
    P = np.array([[0.0, 0, 0, 0], [1.0, 0, 0, 0], [0.0, 0, 0, 0]])
    inst = materialize_det(P, 7.0, 1.0)
    assert len(inst.points) == 2


def test_hull_examples():
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    u = hull_vectors(inst.v, np.zeros((1, 10)), [0.0])[0]
    np.testing.assert_allclose(u, inst.v)
    u = hull_vectors(inst.v, np.zeros((1, 10)), [1.0])[0]
    np.testing.assert_allclose(u, np.eye(10)[0])


def test_hull_vectors_match_bump_gradients(rng):
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    z = inst.points[2]
    for _ in range(20):
        w = inst.r * ball_points(rng, 1, 10)[0]
        g = inst.h_value_and_grad(z + w)[1]
        np.testing.assert_allclose(hull_vectors(inst.v, (w / inst.r)[None], [1.0])[0], g, atol=1e-9)


def test_evidence_min_norm():
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    rep = nonstationarity_evidence_det(inst, 200_000, seed=1)
    assert rep.ok and rep.min_norm > 1 / 36
    assert rep.min_norm >= HULL_BOUND


def test_evidence_flags_broken_construction():
    inst = materialize_det(det_transcript().transcript, 7.0, 1.0)
    broken = type(inst)(inst.points, np.eye(10)[0] * -1.0, inst.r, 7.0, 1.0)  # v = -e1
    with pytest.raises(ConstructionError):
        nonstationarity_evidence_det(broken, 10_000, seed=0)


# -- gradient-only 1-D ------------------------------------------------------------

def test_grad_only_oracle():
    o = ResistingOracleGradOnly()
    r = o.query([3.0])
    assert r.value is None and r.gradient[0] == 1.0


def spread_instance():
    Q = np.array([-2.0, -0.6, 0.0, 0.05, 0.3, 0.42, 0.9, 1.7])
    return materialize_1d(Q, 0.0, 0.1), Q


def test_1d_core_properties():
    inst, Q = spread_instance()
    assert inst.eval(0.0) == 0.0
    for x in np.linspace(-inst.c + 1e-9, inst.c - 1e-9, 51):
        assert inst.deriv(x) == 1.0
    assert inst.goldstein_interval(0.0, 0.1) == (1.0, 1.0)
    for q in Q:
        assert inst.deriv(q) == 1.0
    assert 0 < inst.eta < 1 - inst.delta
    assert inst.r <= inst.delta


def test_1d_eta_avoids_queries():
    delta = 0.1
    first = 0.25 * (1 - delta)   # k = 1 candidate
    Q = np.array([delta + first, 0.0])
    inst = materialize_1d(Q, 0.0, delta)
    assert inst.eta == pytest.approx(first / 2)


def test_1d_bounded_and_lipschitz(rng):
    inst, _ = spread_instance()
    X = rng.uniform(-3, 3, 100_000)
    Y = X + rng.normal(scale=0.05, size=X.shape)
    fx = np.interp(X, inst.knots_x, inst.knots_f)
    fy = np.interp(Y, inst.knots_x, inst.knots_f)
    assert np.abs(fx).max() <= 1.0
    assert (np.abs(fx - fy) / np.abs(X - Y)).max() <= 1 + 1e-9


def test_1d_plateau_points_are_stationary():
    inst, _ = spread_instance()
    assert inst.goldstein_min_norm(2.5, 0.1) == 0.0


# -- attack harness ------------------------------------------------------------------

def test_attack_first_order_det():
    rep = attack("det", "first-order", 10, 8, 0.01, 7 / 300, L=7.0, Delta=1.0, hull_samples=20_000)
    assert rep.consistent and rep.all_nonstationary
    assert rep.returned["cert_evidence"]["nonstationary"]
    assert rep.solver_status == "OracleBudgetExhausted"
    assert rep.min_sampled_hull_norm > 1 / 36


def test_attack_budget_limit():
    with pytest.raises(ValueError):
        attack("det", "first-order", 10, 9, 0.01, 0.02)


@pytest.mark.parametrize("seed", range(5))
def test_attack_randomized_consistent(seed):
    rep = attack("rand-ls", "first-order", 10, 8, 0.01, 0.02, seed=seed, hull_samples=1000)
    assert rep.consistent


def test_attack_grad_only():
    rep = attack("det", "grad-only", 1, 50, 0.1, 0.5)
    assert rep.consistent
    assert rep.returned["cert_evidence"]["goldstein_interval"] == [1.0, 1.0]
    assert rep.returned["cert_evidence"]["nonstationary"]
    assert rep.oracle_calls == 50


def test_attack_grad_only_rejects_value_solvers():
    with pytest.raises(ValueError):
        attack("rand-ls", "grad-only", 1, 10, 0.1, 0.5)


def test_attack_report_json_ready():
    import json
    rep = attack("det", "first-order", 6, 4, 0.01, 0.02, hull_samples=1000)
    json.dumps(rep.to_dict())
