"""Batch benchmark harness: one CSV row per (instance, algorithm, seed)."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .instances import is_builtin_name, resolve_circuit
from .oracle import circuit_oracle
from .smoothing import SmoothingParams, smooth
from .solver import (SolverConfig, deterministic_goldstein_sg, gradient_descent,
                     randomized_goldstein_sg, sgd_on_uniform_smoothing)

COLUMNS = ("instance", "smooth", "gamma", "algo", "delta", "eps", "seed", "oracle_calls",
           "outer_iters", "inner_iters", "final_value", "cert_norm", "status", "wall_time_ms")
DETERMINISTIC = {"det", "gd"}
ALGOS = ("det", "rand-ls", "sgd", "gd")


@dataclass
class BenchRun:
    circuit: str
    algo: str
    delta: float
    eps: float
    smooth: bool = False
    gamma: float | None = None
    seeds: list = field(default_factory=lambda: [0])
    max_outer: int = 1000
    max_inner: int | None = None
    steps: int = 1000          # sgd / gd iterations
    step_size: float | None = None
    diam: float = 2.0
    x0: list | None = None


@dataclass
class BenchSpec:
    runs: list[BenchRun]

    def __post_init__(self):
        if not self.runs:
            raise ValueError("bench spec has no runs")
        for r in self.runs:
            if not (os.path.exists(r.circuit) or is_builtin_name(r.circuit)):
                raise ValueError(f"circuit {r.circuit!r} is neither a file nor a builtin")
            if r.algo not in ALGOS:
                raise ValueError(f"unknown algorithm {r.algo!r}")
            if not (r.delta > 0 and r.eps > 0):
                raise ValueError("delta and eps must be positive")
            if r.smooth and not (r.gamma is not None and r.gamma > 0):
                raise ValueError("smoothed runs need gamma > 0")
            if not r.seeds:
                raise ValueError("each run needs at least one seed")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        return cls([BenchRun(**r) for r in d["runs"]])

    @classmethod
    def load(cls, path) -> "BenchSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"runs": [asdict(r) for r in self.runs]}


def run_single(run: BenchRun, seed: int) -> dict:
    """Execute one row.  Failures land in the status column."""
    det = run.algo in DETERMINISTIC
    row = {"instance": run.circuit, "smooth": int(run.smooth),
           "gamma": run.gamma if run.smooth else "", "algo": run.algo,
           "delta": run.delta, "eps": run.eps, "seed": 0 if det else seed}
    t0 = time.perf_counter()
    try:
        circuit, x0 = resolve_circuit(run.circuit)
        if run.x0 is not None:
            x0 = np.asarray(run.x0, dtype=float)
        elif x0 is None:
            x0 = np.zeros(circuit.dim)
        fn = circuit
        if run.smooth:
            fn = smooth(circuit, SmoothingParams(run.delta, run.eps, run.gamma), run.diam)
        oracle = circuit_oracle(fn)
        eta = run.step_size if run.step_size is not None else run.delta
        if run.algo in ("det", "rand-ls"):
            cfg = SolverConfig(run.delta, min(run.eps, 1.0), max_outer=run.max_outer,
                               max_inner=run.max_inner)
            res = (deterministic_goldstein_sg(oracle, x0, cfg) if run.algo == "det"
                   else randomized_goldstein_sg(oracle, x0, cfg, seed))
        elif run.algo == "sgd":
            res = sgd_on_uniform_smoothing(oracle, x0, run.delta, run.eps, run.steps, eta, seed)
        else:
            res = gradient_descent(oracle, x0, run.delta, run.eps, run.steps, eta)
        row.update(oracle_calls=res.oracle_calls, outer_iters=res.outer_iters,
                   inner_iters=res.inner_iters_total,
                   final_value=fn.eval(res.point), cert_norm=res.cert_norm,
                   status=str(res.status))
    except Exception as exc:  # recorded, never aborts the batch
        row.update(oracle_calls="", outer_iters="", inner_iters="", final_value="",
                   cert_norm="", status=f"Error: {type(exc).__name__}: {exc}")
    row["wall_time_ms"] = round(1000 * (time.perf_counter() - t0), 3)
    return row


def default_workers() -> int:
    env = os.environ.get("GOLDSTEIN_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def run_bench(spec: BenchSpec, workers: int | None = None) -> list[dict]:
    """Run every (run, seed) pair and return rows sorted by their key."""
    jobs = []
    for i, run in enumerate(spec.runs):
        for k, s in enumerate(run.seeds):
            recorded = 0 if run.algo in DETERMINISTIC else s
            jobs.append(((run.circuit, run.algo, run.delta, run.eps, recorded, i, k), run, s))
    workers = workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda j: run_single(j[1], j[2]), jobs))
    else:
        rows = [run_single(run, s) for _, run, s in jobs]
    keyed = sorted(zip([j[0] for j in jobs], rows), key=lambda kr: kr[0])
    return [r for _, r in keyed]


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return v


def write_csv(rows: list[dict], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=COLUMNS)
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in COLUMNS})
