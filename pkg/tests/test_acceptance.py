"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py`` (lines are printed even under
capture) or ``python tests/test_acceptance.py``.
"""

import itertools
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from trellisexp.async_exponent import AsyncObjectiveParams, AsyncSolver, SolverConfig, comparison_curve, grid_oracle
from trellisexp.channels import BinaryOp, Dmc, bsc, symmetric_capacity_input, virtual_mac, z_channel
from trellisexp.gallager import e0
from trellisexp.packing import LemmaConfig, verify_lemma
from trellisexp.prob_core import Dist, TypeVector, nearest_type
from trellisexp.trellis import (
    FrameLayout,
    SimConfig,
    brute_force_ml,
    deinterleave,
    encode_frame,
    generate_codebook,
    monte_carlo,
    simulate_channel,
    trellis_view,
    viterbi_decode,
)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok
    return emit


def free_paths(layout, M):
    free = layout.free_steps()
    for combo in itertools.product(range(1, M + 1), repeat=len(free)):
        m = [0] * layout.steps
        for s, v in zip(free, combo):
            m[s - 1] = v
        yield m


def test_criterion_1_gallager_sanity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_zero, worst_mono, worst_conc = 0.0, 0.0, 0.0
    grid = np.round(np.arange(0.0, 1.0001, 0.01), 10)
    for _ in range(20):
        nx, nz = rng.integers(2, 5, size=2)
        w = rng.random((nx, nz))
        dmc = Dmc(w / w.sum(axis=1, keepdims=True))
        p = Dist(rng.dirichlet(np.ones(nx)))
        worst_zero = max(worst_zero, abs(e0(0.0, p, dmc)))
        vals = np.array([e0(r, p, dmc) for r in grid])
        worst_mono = max(worst_mono, float(-np.diff(vals).min()))
        worst_conc = max(worst_conc, float((vals[:-2] + vals[2:] - 2 * vals[1:-1]).max()))
    u = Dist([0.5, 0.5])
    bsc_err = abs(e0(1.0, u, bsc(0.1)) - (1 - math.log2(1.6)))
    noiseless_err = max(abs(e0(r, u, Dmc(np.eye(2))) - r) for r in grid)
    elapsed = time.perf_counter() - t0
    ok = (worst_zero <= 1e-12 and worst_mono <= 1e-9 and worst_conc <= 1e-9
          and bsc_err <= 1e-9 and noiseless_err <= 1e-12 and elapsed < 5)
    assert report(1, ok, f"|E0(0)|max={worst_zero:.1e} mono_viol={worst_mono:.1e} "
                         f"concav_viol={worst_conc:.1e} bsc_err={bsc_err:.1e} "
                         f"noiseless_err={noiseless_err:.1e} time={elapsed:.2f}s")


def test_criterion_2_async_oracle_sandwich(report):
    t0 = time.perf_counter()
    mac = virtual_mac(z_channel(0.101), BinaryOp.xor(2))
    ps = symmetric_capacity_input(mac)
    solver = AsyncSolver(mac, ps, SolverConfig())
    K = 3
    details, ok = [], True
    for rate in (0.05, 0.2, 0.4):
        value = solver.exponent(rate, K).exponent
        oracles = [grid_oracle(AsyncObjectiveParams.from_mac(mac, ps, L, K, rate), 1 / 32) for L in range(1, K + 1)]
        best = min(oracles, key=lambda o: o.value)
        gap = abs(value - best.value)
        below = value < best.value - best.slack
        ok &= gap <= 5e-3 and not below
        details.append(f"R={rate}: solver={value:.5f} oracle={best.value:.5f} gap={gap:.2e} slack={best.slack:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    assert report(2, ok, "; ".join(details) + f"; time={elapsed:.1f}s")


def test_criterion_3_comparison_shape(report):
    t0 = time.perf_counter()
    K = 9
    rates = [round(0.02 * i, 10) for i in range(1, 23)]  # plotted 0.04 .. 0.88
    c = comparison_curve(z_channel(0.101), BinaryOp.xor(2), K, rates, cfg=SolverConfig())
    x = np.array(c.forney.rates)
    f = np.array(c.forney.exponents)
    a = np.array(c.async_scaled.exponents)
    cond_a = bool(np.any(a >= 1.05 * f))
    cond_b = c.high_rate_gap < c.low_rate_max_gap
    cond_c = bool(np.all(np.diff(f) <= 1e-12) and np.all(np.diff(a) <= 1e-12) and f[-1] == 0 and a[-1] == 0)
    elapsed = time.perf_counter() - t0
    ok = len(rates) >= 20 and cond_a and cond_b and cond_c and elapsed < 1800
    ratio = a[f > 0] / f[f > 0]
    assert report(3, ok, f"(a) max async/forney={ratio.max():.3f} at x={x[f > 0][ratio.argmax()]:.2f} "
                         f"-> {cond_a}; (b) high gap {c.high_rate_gap:.4f} at x={c.high_rate:.2f} "
                         f"< low max gap {c.low_rate_max_gap:.4f} -> {cond_b}; (c) nonincreasing, zero at "
                         f"x={x[-1]:.2f} -> {cond_c}; points={len(rates)} time={elapsed:.1f}s")


def test_criterion_4_construction_equivalence(report):
    t0 = time.perf_counter()
    layout = FrameLayout.from_k(2, 3)
    count, ok = 0, True
    for seed in range(3):
        cb = generate_codebook(np.random.default_rng(seed), 2, TypeVector([1, 1]), 2)
        tc = trellis_view(cb)
        ok &= tc.time_invariant
        for m in free_paths(layout, 2):
            i, j = deinterleave(m)
            ok &= encode_frame(i, j, cb, layout).tobytes() == tc.emit(m).tobytes()
            count += 1
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1
    assert report(4, ok, f"{count} tuples over 3 codebooks byte-equal, time-invariant, time={elapsed:.3f}s")


def test_criterion_5_decoder_correctness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    layout = FrameLayout.from_k(2, 3)
    dmc = z_channel(0.3)
    cb = generate_codebook(rng, 2, TypeVector([1, 1]), 2)
    tc = trellis_view(cb)
    paths = list(free_paths(layout, 2))
    sent = [paths[i] for i in rng.integers(0, len(paths), 1000)]
    z = np.array([simulate_channel(tc.emit(m), dmc, rng) for m in sent])
    dec = viterbi_decode(z, tc, dmc, layout)
    mismatches = sum(dec[b].tolist() != brute_force_ml(z[b], tc, dmc, layout) for b in range(len(sent)))
    injective = len({tc.emit(m).tobytes() for m in paths}) == len(paths)
    clean = viterbi_decode(np.array([tc.emit(m) for m in paths]), tc, Dmc(np.eye(2)), layout)
    exact = clean.tolist() == paths
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and injective and exact and elapsed < 60
    assert report(5, ok, f"ML mismatches {mismatches}/1000; noiseless exact on {len(paths)} tuples={exact} "
                         f"(injective map={injective}); time={elapsed:.2f}s")


def test_criterion_6_exponential_decay(report):
    t0 = time.perf_counter()
    dmc = z_channel(0.101)
    ps = symmetric_capacity_input(virtual_mac(dmc, BinaryOp.xor(2)))
    stats = {}
    for k in (8, 16):
        layout = FrameLayout.from_k(k, 5)
        M = round(2 ** (layout.n * 0.1))
        cfg = SimConfig(dmc, layout, nearest_type(ps, k), M, trials=100_000, seed=k, batch=500)
        stats[k] = monte_carlo(cfg)
    s8, s16 = stats[8], stats[16]
    elapsed = time.perf_counter() - t0
    ok = (s16.frame_error_rate < s8.frame_error_rate and s16.frame_wilson[1] < s8.frame_wilson[0]
          and abs(s8.realized_rate - 0.1) < 0.01 and abs(s16.realized_rate - 0.1) < 0.01 and elapsed < 600)
    assert report(6, ok, f"k=8: FER={s8.frame_error_rate:.2e} CI=[{s8.frame_wilson[0]:.2e},{s8.frame_wilson[1]:.2e}] "
                         f"R={s8.realized_rate:.4f}; k=16: FER={s16.frame_error_rate:.2e} "
                         f"CI=[{s16.frame_wilson[0]:.2e},{s16.frame_wilson[1]:.2e}] R={s16.realized_rate:.4f}; "
                         f"time={elapsed:.1f}s")


def test_criterion_7_packing_lemma(report):
    t0 = time.perf_counter()
    cfg = LemmaConfig(k=4, K=3, M=2, comp_type=TypeVector([2, 2]), trials=200, slack_exp=8, seed=0)
    rep = verify_lemma(cfg)
    failing = [c for c in rep.cells if not c.mean_pass]
    excess = max((math.log2(c.mean_lhs) - c.rhs_log2 for c in failing), default=0.0)
    elapsed = time.perf_counter() - t0
    ok = not failing and elapsed < 900
    assert report(7, ok, f"mean-count pass in {len(rep.cells) - len(failing)}/{len(rep.cells)} cells "
                         f"(self-overlap cells {rep.recurrent_cells}, pass {rep.recurrent_mean_pass_fraction:.4f}); "
                         f"max excess {excess:.2f} bits; codebooks passing every cell {rep.codebooks_all_pass}/200; "
                         f"warnings={len(rep.warnings)}; time={elapsed:.1f}s")


CLI_RUNS = {
    "gallager": ["gallager", "--channel", "z:0.101", "--rates", "0.02:0.02:0.8", "--memory", "1"],
    "async": ["async", "--channel", "z:0.101", "--K", "3", "--rates", "0.05:0.05:0.5", "--restarts", "4",
              "--oracle", "--oracle-grid", "16", "--seed", "3"],
    "compare": ["compare", "--channel", "z:0.101", "--K", "5", "--rates", "0.02:0.04:0.46", "--restarts", "2",
                "--seed", "3"],
    "simulate": ["simulate", "--channel", "z:0.101", "--k", "8", "--K", "5", "--rate", "0.1", "--trials", "3000",
                 "--seed", "3"],
    "verify-packing": ["verify-packing", "--k", "2", "--K", "3", "--M", "2", "--trials", "20", "--seed", "3"],
}


def test_criterion_8_cli_determinism(report, tmp_path):
    results = {}
    for name, argv in CLI_RUNS.items():
        for fmt in ("csv", "json"):
            outputs = []
            for attempt in range(2):
                out = tmp_path / f"{name}-{fmt}-{attempt}"
                env = dict(os.environ)
                # the second simulate run uses two worker processes
                env["TRELLISEXP_WORKERS"] = "2" if attempt else "1"
                res = subprocess.run([sys.executable, "-m", "trellisexp.cli", *argv, "--format", fmt,
                                      "--out", str(out)], env=env, capture_output=True, text=True)
                assert res.returncode == 0, res.stderr
                outputs.append(out.read_bytes())
            results[f"{name}/{fmt}"] = outputs[0] == outputs[1] and len(outputs[0]) > 0
    ok = all(results.values())
    assert report(8, ok, " ".join(f"{k}={'same' if v else 'DIFF'}" for k, v in results.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
