"""Error patterns of the shifted two-stream frame and an empirical check of the
packing inequality for a single shared codebook.

Subblocks are numbered 1..2K. Stream-1 word t covers subblocks 2t-1 and 2t;
the shifted stream-2 word t covers 2t and 2t+1 (word K wraps to subblock 1).
Equivalently, interleaved message m_s covers subblocks s and s+1.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .prob_core import JointDist, TypeVector, multi_information
from .trellis import Codebook, FrameLayout, generate_codebook

DEFAULT_ENUM_CAP = 1_000_000
TYPE_AXES = ("X", "Xh", "Y", "Yh")


class EnumerationCapExceeded(ValueError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"enumeration needs {required} message tuples per codebook, cap is {cap}; "
                         f"lower M or K, or raise the cap")
        self.required = required
        self.cap = cap


@dataclass(frozen=True)
class ErrorPattern:
    s1: frozenset = frozenset()
    s2: frozenset = frozenset()
    s12: frozenset = frozenset()
    size: int | None = None  # 2K, when known

    def __post_init__(self):
        for name in ("s1", "s2", "s12"):
            object.__setattr__(self, name, frozenset(int(v) for v in getattr(self, name)))
        if self.s1 & self.s2 or self.s1 & self.s12 or self.s2 & self.s12:
            raise ValueError("pattern index sets must be disjoint")
        if self.size is not None and any(not 1 <= s <= self.size for s in self.s):
            raise ValueError(f"subblock index outside 1..{self.size}")

    @property
    def s(self) -> frozenset:
        return self.s1 | self.s2 | self.s12

    @property
    def empty(self) -> bool:
        return not self.s

    def key(self) -> tuple:
        return (tuple(sorted(self.s1)), tuple(sorted(self.s2)), tuple(sorted(self.s12)))

    def __str__(self) -> str:
        a, b, c = self.key()
        return f"S1={list(a)} S2={list(b)} S12={list(c)}"


def stream_word_of_subblock(s: int, K: int) -> tuple[int, int]:
    """(stream-1 slot, stream-2 slot) overlapping subblock s, all 1-based."""
    t1 = (s + 1) // 2
    t2 = s // 2 if s % 2 == 0 else ((s - 1) // 2 or K)
    return t1, t2


def classify_tuple(i, i_hat, j, j_hat, layout: FrameLayout) -> ErrorPattern:
    K = layout.K
    vecs = [list(map(int, v)) for v in (i, i_hat, j, j_hat)]
    if any(len(v) != K for v in vecs):
        raise ValueError(f"message vectors must have length K={K}")
    i, i_hat, j, j_hat = vecs
    a, b = layout.sync_slot_1 - 1, layout.sync_slot_2 - 1
    if not (i[a] == i_hat[a] == 0 and j[b] == j_hat[b] == 0):
        raise ValueError("synch slots must hold word 0 in both true and decoded vectors")
    s1, s2, s12 = set(), set(), set()
    for s in range(1, 2 * K + 1):
        t1, t2 = stream_word_of_subblock(s, K)
        e1 = i[t1 - 1] != i_hat[t1 - 1]
        e2 = j[t2 - 1] != j_hat[t2 - 1]
        if e1 and e2:
            s12.add(s)
        elif e1:
            s1.add(s)
        elif e2:
            s2.add(s)
    return ErrorPattern(s1, s2, s12, 2 * K)


@dataclass(frozen=True)
class IrreducibleShape:
    """Run of ``length`` consecutive wrong interleaved messages."""

    length: int
    first_user: int
    last_user: int
    representative: ErrorPattern
    starts: tuple[int, ...]
    realizable_starts: tuple[int, ...]

    @property
    def multiplicity(self) -> int:
        return len(self.starts)

    @property
    def span(self) -> int:
        return self.length + 1


def run_pattern(start: int, length: int, K: int) -> ErrorPattern:
    """Pattern of wrong messages m_start..m_{start+length-1}: single-user ends, S12 interior."""
    end = start + length  # last covered subblock
    user_first = 1 if start % 2 else 2
    user_last = 1 if (start + length - 1) % 2 else 2
    singles = {1: set(), 2: set()}
    singles[user_first].add(start)
    singles[user_last].add(end)
    return ErrorPattern(singles[1], singles[2], set(range(start + 1, end)), 2 * K)


def enumerate_irreducible(K: int) -> list[IrreducibleShape]:
    """All contiguous runs inside 1..2K with single-user end subblocks and S12 interior.

    Shapes are grouped by run length and the user at the leading end. A start
    is realizable when the run avoids both synch messages, which are never
    decoded in error.
    """
    layout = FrameLayout(2, K)
    sync = set(layout.sync_steps())
    groups: dict[tuple[int, int], list[int]] = defaultdict(list)
    for length in range(1, 2 * K):
        for start in range(1, 2 * K - length + 1):
            groups[(length, 1 if start % 2 else 2)].append(start)
    shapes = []
    for (length, user), starts in sorted(groups.items()):
        rep = run_pattern(starts[0], length, K)
        last_user = 1 if (starts[0] + length - 1) % 2 else 2
        ok = tuple(a for a in starts if not sync & set(range(a, a + length)))
        shapes.append(IrreducibleShape(length, user, last_user, rep, tuple(starts), ok))
    return shapes


def realizable_lengths(K: int) -> list[int]:
    return sorted({s.length for s in enumerate_irreducible(K) if s.realizable_starts})


# -- the counting inequality ---------------------------------------------------

def type_measures(t: TypeVector) -> dict[str, float]:
    v = t.as_dist(TYPE_AXES)
    return {
        "xy": multi_information(v, ("X", "Y")),
        "xh_x_y": multi_information(v, ("Xh", "X", "Y")),
        "yh_x_y": multi_information(v, ("Yh", "X", "Y")),
        "xh_yh_x_y": multi_information(v, ("Xh", "Yh", "X", "Y")),
    }


def rhs_log2(pattern: ErrorPattern, types, r1: float, r2: float, k: int, K: int, slack_exp: float) -> float:
    n = 2 * k
    if len(types) != 2 * K:
        raise ValueError(f"type sequence must have 2K={2 * K} entries")
    e = n * (K - 1) * (r1 + r2)
    for s in range(1, 2 * K + 1):
        m = type_measures(types[s - 1])
        if s in pattern.s1:
            e -= k * (m["xh_x_y"] - r1)
        elif s in pattern.s2:
            e -= k * (m["yh_x_y"] - r2)
        elif s in pattern.s12:
            e -= k * (m["xh_yh_x_y"] - r1 - r2)
        else:
            e -= k * m["xy"]
    return slack_exp * math.log2(n + 1) + e


def rhs_bound(pattern: ErrorPattern, types, r1: float, r2: float, k: int, K: int, slack_exp: float = 8) -> float:
    """Right side of the packing inequality with p_n = (n+1)**slack_exp."""
    e = rhs_log2(pattern, types, r1, r2, k, K, slack_exp)
    return math.inf if e > 1023 else 2.0 ** e


def _message_vectors(layout: FrameLayout, M: int, stream: int) -> np.ndarray:
    sync = (layout.sync_slot_1 if stream == 1 else layout.sync_slot_2) - 1
    free = [t for t in range(layout.K) if t != sync]
    out = []
    for combo in itertools.product(range(1, M + 1), repeat=len(free)):
        v = [0] * layout.K
        for t, c in zip(free, combo):
            v[t] = c
        out.append(v)
    return np.array(out, dtype=np.int64)


def tuple_count(layout: FrameLayout, M: int) -> int:
    return (M ** (layout.K - 1)) ** 4


def has_recurrence(i, i_hat, j, j_hat) -> bool:
    """True when some message word occupies two different (stream, slot) places."""
    seen = []
    for t in range(len(i)):
        seen.append(i[t])
        if i_hat[t] != i[t]:
            seen.append(i_hat[t])
        seen.append(j[t])
        if j_hat[t] != j[t]:
            seen.append(j_hat[t])
    words = [w for w in seen if w != 0]
    return len(words) != len(set(words))


@dataclass
class CellTable:
    """Per-codebook tuple counts keyed by (pattern key, type-sequence key)."""

    counts: dict = field(default_factory=dict)
    types: dict = field(default_factory=dict)
    patterns: dict = field(default_factory=dict)
    recurrent: set = field(default_factory=set)
    total: int = 0


def tabulate_cells(cb: Codebook, layout: FrameLayout, cap: int = DEFAULT_ENUM_CAP) -> CellTable:
    """Classify every message tuple (i, i_hat, j, j_hat) of one shared codebook."""
    M, k, K = cb.M, layout.k, layout.K
    required = tuple_count(layout, M)
    if required > cap:
        raise EnumerationCapExceeded(required, cap)
    q = cb.comp_type.counts.size
    v1 = _message_vectors(layout, M, 1)
    v2 = _message_vectors(layout, M, 2)
    s1 = cb.words[v1].reshape(len(v1), -1)  # stream-1 symbols per vector
    s2 = np.roll(cb.words[v2].reshape(len(v2), -1), k, axis=1)
    table = CellTable(total=required)
    n1, n2 = len(v1), len(v2)
    ii, ih, jj, jh = np.meshgrid(np.arange(n1), np.arange(n1), np.arange(n2), np.arange(n2), indexing="ij")
    ii, ih, jj, jh = ii.ravel(), ih.ravel(), jj.ravel(), jh.ravel()
    code = ((s1[ii] * q + s1[ih]) * q + s2[jj]) * q + s2[jh]  # (T, nK)
    code = code.reshape(len(ii), 2 * K, k)
    cells = q ** 4
    onehot = np.zeros((len(ii), 2 * K, cells), dtype=np.int64)
    np.add.at(onehot, (np.arange(len(ii))[:, None, None], np.arange(2 * K)[None, :, None], code), 1)
    pattern_cache: dict = {}
    for t in range(len(ii)):
        pk = (ii[t], ih[t], jj[t], jh[t])
        vec = (v1[pk[0]], v1[pk[1]], v2[pk[2]], v2[pk[3]])
        pat = classify_tuple(*vec, layout)
        tkey = onehot[t].tobytes()
        key = (pat.key(), tkey)
        table.counts[key] = table.counts.get(key, 0) + 1
        if key not in table.types:
            table.types[key] = tuple(TypeVector(onehot[t, s].reshape(q, q, q, q), k) for s in range(2 * K))
            pattern_cache.setdefault(pat.key(), pat)
            table.patterns[key] = pattern_cache[pat.key()]
        if has_recurrence(*vec):
            table.recurrent.add(key)
    return table


def count_lhs(cb: Codebook, pattern: ErrorPattern, types, layout: FrameLayout,
              cap: int = DEFAULT_ENUM_CAP) -> int:
    """Number of tuples in the pattern class whose subblock joint types equal ``types``."""
    table = tabulate_cells(cb, layout, cap)
    tkey = b"".join(t.counts.astype(np.int64).tobytes() for t in types)
    return table.counts.get((pattern.key(), tkey), 0)


@dataclass(frozen=True)
class LemmaConfig:
    k: int
    K: int
    M: int
    comp_type: TypeVector
    trials: int
    slack_exp: float = 8
    seed: int = 0
    cap: int = DEFAULT_ENUM_CAP


@dataclass(frozen=True)
class CellResult:
    pattern: ErrorPattern
    types: tuple
    mean_lhs: float
    max_lhs: int
    rhs: float
    rhs_log2: float
    pass_rate: float
    mean_pass: bool
    recurrent: bool


@dataclass(frozen=True)
class LemmaReport:
    config: LemmaConfig
    rate: float
    delta_n: float
    cells: tuple
    per_trial_pass_fraction: float
    mean_pass_fraction: float
    recurrent_cells: int
    recurrent_mean_pass_fraction: float
    codebooks_all_pass: int
    warnings: tuple
    tuples_per_trial: int


def delta_n(n: int, alphabet: int) -> float:
    return 3 * math.log2(n) / n * alphabet


def verify_lemma(cfg: LemmaConfig) -> LemmaReport:
    """Average the tuple counts over random shared codebooks and compare with the bound.

    A cell is a (pattern, type sequence) pair that is nonempty for at least one
    sampled codebook; the mean count includes the trials where it is empty.
    """
    layout = FrameLayout.from_k(cfg.k, cfg.K)
    n = layout.n
    rate = math.log2(cfg.M) / n
    q = cfg.comp_type.counts.size
    dn = delta_n(n, q)
    h = float(-sum(p * math.log2(p) for p in cfg.comp_type.counts / cfg.k if p > 0))
    warnings = []
    if rate >= h - dn:
        warnings.append(f"rate {rate:.6g} is not below H(P)-delta_n = {h - dn:.6g}; the lemma's hypothesis fails")
    rng = np.random.default_rng(cfg.seed)
    sums: dict = defaultdict(int)
    maxes: dict = defaultdict(int)
    fails: dict = defaultdict(int)
    types: dict = {}
    patterns: dict = {}
    recurrent: set = set()
    rhs_cache: dict = {}
    total = 0
    all_pass = 0
    for _ in range(cfg.trials):
        cb = generate_codebook(rng, cfg.k, cfg.comp_type, cfg.M)
        table = tabulate_cells(cb, layout, cfg.cap)
        total = table.total
        ok = True
        for key, c in table.counts.items():
            if key not in rhs_cache:
                types[key] = table.types[key]
                patterns[key] = table.patterns[key]
                rhs_cache[key] = rhs_log2(patterns[key], types[key], rate, rate, cfg.k, cfg.K, cfg.slack_exp)
            sums[key] += c
            maxes[key] = max(maxes[key], c)
            if math.log2(c) > rhs_cache[key]:
                fails[key] += 1
                ok = False
        all_pass += ok
        recurrent |= table.recurrent
    cells = []
    for key in sorted(sums, key=lambda kk: (kk[0], kk[1])):
        mean = sums[key] / cfg.trials
        e = rhs_cache[key]
        cells.append(CellResult(
            pattern=patterns[key],
            types=types[key],
            mean_lhs=mean,
            max_lhs=maxes[key],
            rhs=math.inf if e > 1023 else 2.0 ** e,
            rhs_log2=e,
            pass_rate=1.0 - fails[key] / cfg.trials,
            mean_pass=math.log2(mean) <= e,
            recurrent=key in recurrent,
        ))
    rec = [c for c in cells if c.recurrent]
    return LemmaReport(
        config=cfg,
        rate=rate,
        delta_n=dn,
        cells=tuple(cells),
        per_trial_pass_fraction=float(np.mean([c.pass_rate for c in cells])) if cells else 1.0,
        mean_pass_fraction=float(np.mean([c.mean_pass for c in cells])) if cells else 1.0,
        recurrent_cells=len(rec),
        recurrent_mean_pass_fraction=float(np.mean([c.mean_pass for c in rec])) if rec else 1.0,
        codebooks_all_pass=all_pass,
        warnings=tuple(warnings),
        tuples_per_trial=total,
    )


def report_to_dict(rep: LemmaReport) -> dict:
    cfg = rep.config
    return {
        "config": {"k": cfg.k, "K": cfg.K, "M": cfg.M, "comp_type": cfg.comp_type.counts.tolist(),
                   "trials": cfg.trials, "slack_exp": cfg.slack_exp, "seed": cfg.seed},
        "rate": rep.rate,
        "delta_n": rep.delta_n,
        "warnings": list(rep.warnings),
        "tuples_per_trial": rep.tuples_per_trial,
        "cells": len(rep.cells),
        "per_trial_pass_fraction": rep.per_trial_pass_fraction,
        "mean_pass_fraction": rep.mean_pass_fraction,
        "recurrent_cells": rep.recurrent_cells,
        "recurrent_mean_pass_fraction": rep.recurrent_mean_pass_fraction,
        "codebooks_all_pass": rep.codebooks_all_pass,
        "failing_cells": [
            {"pattern": str(c.pattern), "mean_lhs": c.mean_lhs, "rhs_log2": c.rhs_log2,
             "pass_rate": c.pass_rate, "recurrent": c.recurrent,
             "types": [t.counts.ravel().tolist() for t in c.types]}
            for c in rep.cells if not c.mean_pass
        ],
    }
