"""Memory-1 trellis code built from one constant-composition codebook.

Two virtual streams are combined symbol-wise; the second stream is shifted
circularly by k = n/2 inside each frame of K codeword slots. Reading the
frame in k-symbol subblocks gives a trellis whose emission at interleaved step
s depends only on the current message and the previous one.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import binomtest

from .channels import BinaryOp, Dmc
from .prob_core import TypeVector, sample_type_class

TIE_TOL = 1e-9
# finite stand-in for log(0) so masked sums stay NaN-free
IMPOSSIBLE = -1e9
WORKERS_ENV = "TRELLISEXP_WORKERS"


@dataclass(frozen=True)
class FrameLayout:
    n: int
    K: int

    def __post_init__(self):
        if self.n <= 0 or self.n % 2:
            raise ValueError(f"blocklength n={self.n} must be even and positive")
        if self.K < 3 or self.K % 2 == 0:
            raise ValueError(f"K={self.K} must be odd and at least 3")

    @classmethod
    def from_k(cls, k: int, K: int) -> "FrameLayout":
        return cls(2 * k, K)

    @property
    def k(self) -> int:
        return self.n // 2

    @property
    def l(self) -> int:
        return (self.K - 1) // 2

    @property
    def delay(self) -> Fraction:
        return Fraction(2 * self.l + 1, 2) * self.n

    @property
    def sync_slot_1(self) -> int:
        return self.l + 1

    @property
    def sync_slot_2(self) -> int:
        return self.K

    @property
    def steps(self) -> int:
        return 2 * self.K

    def sync_steps(self) -> tuple[int, int]:
        """Interleaved steps (1-based) that carry a synch word."""
        return 2 * self.sync_slot_1 - 1, 2 * self.K

    def free_steps(self) -> list[int]:
        sync = self.sync_steps()
        return [s for s in range(1, self.steps + 1) if s not in sync]


@dataclass(frozen=True, eq=False)
class Codebook:
    """Words ``words[0]`` (synch) to ``words[M]``; each half has type ``comp_type``."""

    words: np.ndarray
    comp_type: TypeVector

    def __post_init__(self):
        self.words.setflags(write=False)

    @property
    def M(self) -> int:
        return self.words.shape[0] - 1

    @property
    def n(self) -> int:
        return self.words.shape[1]

    @property
    def k(self) -> int:
        return self.n // 2

    def first(self, m) -> np.ndarray:
        return self.words[m, : self.k]

    def last(self, m) -> np.ndarray:
        return self.words[m, self.k:]


def generate_codebook(rng: np.random.Generator, k: int, comp_type: TypeVector, M: int) -> Codebook:
    if comp_type.denominator != k or comp_type.counts.ndim != 1:
        raise ValueError(f"composition type must be a 1-D type with denominator k={k}")
    if M < 1:
        raise ValueError("codebook needs at least one message word")
    words = np.empty((M + 1, 2 * k), dtype=np.int64)
    for m in range(M + 1):
        words[m, :k] = sample_type_class(comp_type, rng)
        words[m, k:] = sample_type_class(comp_type, rng)
    return Codebook(words, comp_type)


def interleave(messages_1, messages_2) -> list[int]:
    return [m for pair in zip(messages_1, messages_2) for m in pair]


def deinterleave(m) -> tuple[list[int], list[int]]:
    m = list(m)
    return m[0::2], m[1::2]


def check_messages(messages_1, messages_2, M: int, layout: FrameLayout) -> None:
    if len(messages_1) != layout.K or len(messages_2) != layout.K:
        raise ValueError(f"each stream needs K={layout.K} message indices")
    for t, (i, j) in enumerate(zip(messages_1, messages_2), start=1):
        if not (0 <= i <= M and 0 <= j <= M):
            raise ValueError(f"message index out of range at slot {t}")
        if (t == layout.sync_slot_1) != (i == 0):
            raise ValueError(f"stream 1 must carry the synch word exactly at slot {layout.sync_slot_1}")
        if (t == layout.sync_slot_2) != (j == 0):
            raise ValueError(f"stream 2 must carry the synch word exactly at slot {layout.sync_slot_2}")


def encode_frame(messages_1, messages_2, cb: Codebook, layout: FrameLayout,
                 cb2: Codebook | None = None, op: BinaryOp | None = None) -> np.ndarray:
    """Channel input for one frame of ``n*K`` symbols.

    Stream 2 is rotated right by k inside the frame, so it starts with the last
    k symbols of its final (synch) word. ``cb2`` defaults to ``cb``.
    """
    cb2 = cb if cb2 is None else cb2
    op = op or BinaryOp.xor(2)
    if cb.n != layout.n or cb2.n != layout.n:
        raise ValueError("codebook blocklength does not match layout")
    check_messages(messages_1, messages_2, min(cb.M, cb2.M), layout)
    x = cb.words[list(messages_1)].ravel()
    y = np.roll(cb2.words[list(messages_2)].ravel(), layout.k)
    return op.table[x, y]


@dataclass(frozen=True, eq=False)
class TrellisCode:
    """Emission tables ``odd[m, m_prev]`` and ``even[m, m_prev]`` of k symbols each."""

    odd: np.ndarray
    even: np.ndarray

    @property
    def M(self) -> int:
        return self.odd.shape[0] - 1

    @property
    def k(self) -> int:
        return self.odd.shape[2]

    @property
    def time_invariant(self) -> bool:
        return bool(np.array_equal(self.odd, self.even))

    def table(self, step: int) -> np.ndarray:
        return self.odd if step % 2 else self.even

    def emit(self, m) -> np.ndarray:
        """Concatenated emissions for interleaved messages m_1..m_2K (m_0 = m_2K)."""
        m = list(m)
        prev = [m[-1]] + m[:-1]
        return np.concatenate([self.table(s)[m[s - 1], prev[s - 1]] for s in range(1, len(m) + 1)])


def trellis_view(cb: Codebook, cb2: Codebook | None = None, op: BinaryOp | None = None) -> TrellisCode:
    """Per-step emission tables of the frame encoder.

    Odd steps carry stream-1 word i_t against the tail of stream-2 word j_{t-1};
    even steps carry stream-2 word j_t against the tail of stream-1 word i_t.
    With one shared codebook and a commutative operation both tables coincide,
    which makes the trellis time-invariant.
    """
    cb2 = cb if cb2 is None else cb2
    op = op or BinaryOp.xor(2)
    f1 = cb.words[:, : cb.k]
    l1 = cb.words[:, cb.k:]
    f2 = cb2.words[:, : cb2.k]
    l2 = cb2.words[:, cb2.k:]
    odd = op.table[f1[:, None, :], l2[None, :, :]]
    even = op.table[l1[None, :, :], f2[:, None, :]]
    odd.setflags(write=False)
    even.setflags(write=False)
    return TrellisCode(odd, even)


def simulate_channel(x: np.ndarray, dmc: Dmc, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() >= dmc.n_inputs):
        raise ValueError("input symbol out of range")
    cum = np.cumsum(dmc.w, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(x.shape)
    return (u[..., None] >= cum[x]).sum(axis=-1)


def _log_channel(dmc: Dmc) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lw = np.log2(dmc.w)
    return np.where(dmc.w > 0, lw, IMPOSSIBLE)


def branch_metrics(z: np.ndarray, tc: TrellisCode, dmc: Dmc, layout: FrameLayout) -> list[np.ndarray]:
    """Log-likelihoods ``metric[s][b, m, m_prev]`` for every step of a batch of frames."""
    z = np.atleast_2d(z)
    lw = _log_channel(dmc)
    k = layout.k
    tables = {1: lw[tc.odd], 0: lw[tc.even]}  # (M+1, M+1, k, |Z|)
    out = []
    for s in range(1, layout.steps + 1):
        block = z[:, (s - 1) * k: s * k]
        onehot = (block[:, :, None] == np.arange(dmc.n_outputs)).astype(float)
        out.append(np.einsum("bic,mnic->bmn", onehot, tables[s % 2], optimize=True))
    return out


def _allowed(layout: FrameLayout, M: int) -> list[np.ndarray]:
    sync = layout.sync_steps()
    msgs = np.arange(1, M + 1)
    return [np.array([0]) if s in sync else msgs for s in range(1, layout.steps + 1)]


def viterbi_decode(z: np.ndarray, tc: TrellisCode, dmc: Dmc, layout: FrameLayout) -> np.ndarray:
    """Maximum-likelihood interleaved messages for one frame or a batch of frames.

    Synch steps are pinned to word 0 and the path starts and ends in state 0.
    Among paths whose log-likelihood is within ``TIE_TOL`` of the best, the
    lexicographically smallest message sequence is returned: a backward pass
    stores best completions, then a forward pass takes the smallest message
    that still attains the optimum.
    """
    z = np.asarray(z)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != layout.n * layout.K:
        raise ValueError(f"frame length {z.shape[1]} != nK = {layout.n * layout.K}")
    B, S, M = z.shape[0], layout.steps, tc.M
    metrics = branch_metrics(z, tc, dmc, layout)
    allowed = _allowed(layout, M)
    mask = np.full((S, M + 1), -np.inf)
    for s in range(S):
        mask[s, allowed[s]] = 0.0

    # beta[s][b, m]: best score of steps s+1..S given state m after step s
    beta = [None] * (S + 1)
    beta[S] = np.zeros((B, M + 1))
    for s in range(S, 0, -1):
        cand = metrics[s - 1] + (beta[s] + mask[s - 1])[:, :, None]
        beta[s - 1] = cand.max(axis=1)
    opt = beta[0][:, 0]
    tol = TIE_TOL * (1.0 + np.abs(opt))

    decoded = np.zeros((B, S), dtype=np.int64)
    prev = np.zeros(B, dtype=np.int64)
    prefix = np.zeros(B)
    rows = np.arange(B)
    for s in range(1, S + 1):
        step_metric = metrics[s - 1][rows, :, prev]  # (B, M+1)
        total = prefix[:, None] + step_metric + beta[s] + mask[s - 1][None, :]
        ok = total >= (opt - tol)[:, None]
        choice = np.argmax(ok, axis=1)
        decoded[:, s - 1] = choice
        prefix = prefix + step_metric[rows, choice]
        prev = choice
    return decoded[0] if single else decoded


def path_loglik(z: np.ndarray, m, tc: TrellisCode, dmc: Dmc) -> float:
    """Exact log-likelihood (with -inf) of one interleaved path; used as a brute-force reference."""
    with np.errstate(divide="ignore"):
        lw = np.log2(dmc.w)
    x = tc.emit(m)
    return float(lw[x, np.asarray(z)].sum())


def brute_force_ml(z: np.ndarray, tc: TrellisCode, dmc: Dmc, layout: FrameLayout) -> list[int]:
    free = layout.free_steps()
    best_score, best = -math.inf, None
    scored = []
    for combo in itertools.product(range(1, tc.M + 1), repeat=len(free)):
        m = [0] * layout.steps
        for s, v in zip(free, combo):
            m[s - 1] = v
        score = path_loglik(z, m, tc, dmc)
        scored.append((score, m))
        best_score = max(best_score, score)
    tol = TIE_TOL * (1.0 + abs(best_score))
    for score, m in scored:
        if score >= best_score - tol and (best is None or m < best):
            best = m
    return best


# -- Monte Carlo ----------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    dmc: Dmc
    layout: FrameLayout
    comp_type: TypeVector
    M: int
    trials: int
    seed: int = 0
    batch: int = 200
    shared: bool = True
    op: BinaryOp | None = None


@dataclass(frozen=True)
class ErrorStats:
    trials: int
    frame_errors: int
    message_errors: int
    messages: int
    frame_error_rate: float
    message_error_rate: float
    frame_wilson: tuple[float, float]
    message_wilson: tuple[float, float]
    realized_rate: float


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _run_batch(cfg: SimConfig, seed_seq: np.random.SeedSequence, size: int) -> tuple[int, int]:
    rng = np.random.default_rng(seed_seq)
    layout = cfg.layout
    cb = generate_codebook(rng, layout.k, cfg.comp_type, cfg.M)
    cb2 = cb if cfg.shared else generate_codebook(rng, layout.k, cfg.comp_type, cfg.M)
    tc = trellis_view(cb, cb2, cfg.op)
    free = np.array(layout.free_steps()) - 1
    msgs = np.zeros((size, layout.steps), dtype=np.int64)
    msgs[:, free] = rng.integers(1, cfg.M + 1, size=(size, len(free)))
    prev = np.concatenate([msgs[:, -1:], msgs[:, :-1]], axis=1)
    x = np.concatenate([tc.table(s)[msgs[:, s - 1], prev[:, s - 1]] for s in range(1, layout.steps + 1)], axis=1)
    z = simulate_channel(x, cfg.dmc, rng)
    dec = viterbi_decode(z, tc, cfg.dmc, layout)
    wrong = dec[:, free] != msgs[:, free]
    return int(wrong.any(axis=1).sum()), int(wrong.sum())


def _run_batch_star(args):
    return _run_batch(*args)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def monte_carlo(cfg: SimConfig, workers: int | None = None) -> ErrorStats:
    """Frame and message error rates with a fresh random codebook per batch.

    Batches get independent child seeds of ``cfg.seed``; counts are summed, so
    the result does not depend on the number of workers.
    """
    if cfg.trials < 1:
        raise ValueError("trials must be at least 1")
    sizes = [cfg.batch] * (cfg.trials // cfg.batch)
    if cfg.trials % cfg.batch:
        sizes.append(cfg.trials % cfg.batch)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    jobs = [(cfg, s, n) for s, n in zip(seeds, sizes)]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_batch_star, jobs))
    else:
        results = [_run_batch(*j) for j in jobs]
    fe = sum(r[0] for r in results)
    me = sum(r[1] for r in results)
    n_msgs = cfg.trials * len(cfg.layout.free_steps())
    return ErrorStats(
        trials=cfg.trials,
        frame_errors=fe,
        message_errors=me,
        messages=n_msgs,
        frame_error_rate=fe / cfg.trials,
        message_error_rate=me / n_msgs,
        frame_wilson=wilson_interval(fe, cfg.trials),
        message_wilson=wilson_interval(me, n_msgs),
        realized_rate=math.log2(cfg.M) / cfg.layout.n if cfg.M > 0 else 0.0,
    )
