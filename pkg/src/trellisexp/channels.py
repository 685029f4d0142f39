"""Single-user DMCs, combining operations and the virtual two-user MAC."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.optimize import minimize_scalar

from .prob_core import PROB_TOL, Dist, DistributionError, JointDist, entropy_array

SPEC_ROW_TOL = 1e-9


class ChannelSpecError(ValueError):
    """Malformed channel description; the message names the offending field."""


def _stochastic(w, tol: float = PROB_TOL) -> np.ndarray:
    arr = np.array(w, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DistributionError("channel entries must be finite and nonnegative")
    bad = np.abs(arr.sum(axis=-1) - 1.0) > tol
    if np.any(bad):
        raise DistributionError(f"rows {np.argwhere(bad).tolist()} do not sum to 1")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dmc:
    """Row-stochastic matrix ``w[x, z] = W(z|x)``."""

    w: np.ndarray

    def __init__(self, w, tol: float = PROB_TOL):
        arr = _stochastic(w, tol)
        if arr.ndim != 2:
            raise DistributionError("a DMC matrix must be 2-D")
        object.__setattr__(self, "w", arr)

    @property
    def n_inputs(self) -> int:
        return self.w.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.w.shape[1]

    def row(self, x: int) -> Dist:
        return Dist(self.w[x], ("Z",))


@dataclass(frozen=True, eq=False)
class BinaryOp:
    """Total function ``table[x1, x2]`` into an alphabet of size ``n_out``."""

    table: np.ndarray
    n_out: int

    def __init__(self, table, n_out: int | None = None):
        arr = np.array(table, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("operation table must be 2-D")
        if n_out is None:
            n_out = int(arr.max()) + 1
        if np.any(arr < 0) or np.any(arr >= n_out):
            raise ValueError(f"operation table entries must lie in [0, {n_out})")
        arr.setflags(write=False)
        object.__setattr__(self, "table", arr)
        object.__setattr__(self, "n_out", int(n_out))

    @classmethod
    def xor(cls, size: int = 2) -> "BinaryOp":
        if size <= 0 or size & (size - 1):
            raise ValueError("xor needs a power-of-two alphabet")
        a = np.arange(size)
        return cls(a[:, None] ^ a[None, :], size)

    def __call__(self, x1, x2):
        return self.table[x1, x2]


@dataclass(frozen=True, eq=False)
class MacChannel:
    """Two-input channel ``w[x, y, z] = W(z|x, y)``."""

    w: np.ndarray

    def __init__(self, w, tol: float = PROB_TOL):
        arr = _stochastic(w, tol)
        if arr.ndim != 3:
            raise DistributionError("a MAC array must be 3-D")
        object.__setattr__(self, "w", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.w.shape


def z_channel(p_flip: float) -> Dmc:
    """Binary Z-channel: 0 is received cleanly, 1 flips to 0 with ``p_flip``."""
    if not 0.0 <= p_flip <= 1.0:
        raise ValueError(f"crossover probability {p_flip} outside [0, 1]")
    return Dmc([[1.0, 0.0], [p_flip, 1.0 - p_flip]])


def bsc(p_flip: float) -> Dmc:
    if not 0.0 <= p_flip <= 1.0:
        raise ValueError(f"crossover probability {p_flip} outside [0, 1]")
    return Dmc([[1.0 - p_flip, p_flip], [p_flip, 1.0 - p_flip]])


def virtual_mac(dmc: Dmc, op: BinaryOp) -> MacChannel:
    if op.n_out != dmc.n_inputs:
        raise ValueError(f"operation range {op.n_out} != channel input alphabet {dmc.n_inputs}")
    return MacChannel(dmc.w[op.table])


def compose_joint(mac: MacChannel, p1: Dist, p2: Dist) -> JointDist:
    """P(x, y, z) = W(z|x, y) p1(x) p2(y)."""
    nx, ny, _ = mac.shape
    if len(p1) != nx or len(p2) != ny:
        raise ValueError(f"input distributions {len(p1)}, {len(p2)} do not match MAC {mac.shape}")
    arr = mac.w * p1.probs[:, None, None] * p2.probs[None, :, None]
    return JointDist(arr, ("X", "Y", "Z"))


def mutual_information_array(p: np.ndarray, w: np.ndarray) -> float:
    """I(p, W) for an input distribution ``p`` and row-stochastic ``w``."""
    q = p @ w
    h_cond = -sum(p[x] * float(np.sum(w[x][w[x] > 0] * np.log2(w[x][w[x] > 0])))
                  for x in range(len(p)) if p[x] > 0)
    return max(entropy_array(q) - h_cond, 0.0)


def channel_mutual_information(p: Dist, dmc: Dmc) -> float:
    return mutual_information_array(p.probs, dmc.w)


def sum_rate(mac: MacChannel, p: np.ndarray) -> float:
    """I(X,Y ; Z) when X and Y are independent with common law ``p``."""
    pxy = np.outer(p, p).ravel()
    return mutual_information_array(pxy, mac.w.reshape(-1, mac.shape[2]))


def _binary(t: float) -> np.ndarray:
    return np.array([t, 1.0 - t])


def symmetric_capacity_input(mac: MacChannel, tol: float = 1e-10, grid_step: float = 1e-4) -> Dist:
    """Input law maximizing I(X,Y ; Z) over i.i.d. inputs X, Y.

    Binary inputs: grid scan on P(0) followed by a bounded scalar refinement
    around the best grid point. Among (numerically) tied grid maxima the
    lexicographically smallest vector wins; a flat objective returns uniform.
    """
    nx, ny, _ = mac.shape
    if nx != ny:
        raise ValueError("symmetric capacity input needs identical input alphabets")
    if nx == 1:
        return Dist([1.0])
    if nx == 2:
        grid = np.linspace(0.0, 1.0, int(round(1.0 / grid_step)) + 1)
        vals = np.array([sum_rate(mac, _binary(t)) for t in grid])
        best = vals.max()
        if best - vals.min() <= tol:
            return Dist.uniform(2)
        # larger P(0) is lexicographically larger, so take the smallest tied index
        i = int(np.flatnonzero(vals >= best - tol)[0])
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(lambda t: -sum_rate(mac, _binary(t)), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        t = float(res.x) if -res.fun >= best else float(grid[i])
        return Dist(_binary(t))
    return _symmetric_capacity_general(mac, tol)


def _symmetric_capacity_general(mac: MacChannel, tol: float, restarts: int = 16) -> Dist:
    from scipy.optimize import minimize

    n = mac.shape[0]
    rng = np.random.default_rng(0)

    def neg(theta):
        p = np.exp(theta - theta.max())
        return -sum_rate(mac, p / p.sum())

    starts = [np.zeros(n)] + [rng.normal(size=n) for _ in range(restarts - 1)]
    best_val, best_p = -math.inf, None
    for s in starts:
        res = minimize(neg, s, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": tol, "maxiter": 20000})
        p = np.exp(res.x - res.x.max())
        p /= p.sum()
        if -res.fun > best_val + tol:
            best_val, best_p = -res.fun, p
    return Dist(best_p)


def parse_channel_spec(text: str) -> tuple[Dmc, BinaryOp]:
    """Parse ``z:<p>``, ``bsc:<p>`` or a JSON channel document.

    The JSON document carries ``input_alphabet``, ``output_alphabet``, ``rows``
    (row-major, validated row-stochastic within 1e-9) and an optional ``op``
    that is either ``"xor"`` or an explicit integer table.
    """
    text = text.strip()
    for prefix, ctor in (("z:", z_channel), ("bsc:", bsc)):
        if text.startswith(prefix):
            try:
                p = float(text[len(prefix):])
            except ValueError:
                raise ChannelSpecError(f"field p: cannot parse {text[len(prefix):]!r} as a number") from None
            try:
                return ctor(p), BinaryOp.xor(2)
            except ValueError as e:
                raise ChannelSpecError(f"field p: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ChannelSpecError(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ChannelSpecError("document: expected a JSON object")
    return _channel_from_doc(doc)


def _field(doc: dict, name: str) -> Any:
    if name not in doc:
        raise ChannelSpecError(f"field {name}: missing")
    return doc[name]


def _channel_from_doc(doc: dict) -> tuple[Dmc, BinaryOp]:
    nin, nout = _field(doc, "input_alphabet"), _field(doc, "output_alphabet")
    for name, v in (("input_alphabet", nin), ("output_alphabet", nout)):
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise ChannelSpecError(f"field {name}: expected a positive integer, got {v!r}")
    rows = _field(doc, "rows")
    try:
        arr = np.array(rows, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ChannelSpecError("field rows: expected a list of numbers") from None
    if arr.size != nin * nout:
        raise ChannelSpecError(f"field rows: expected {nin * nout} entries, got {arr.size}")
    try:
        dmc = Dmc(arr.reshape(nin, nout), tol=SPEC_ROW_TOL)
    except DistributionError as e:
        raise ChannelSpecError(f"field rows: {e}") from None
    # renormalize within the accepted tolerance so downstream checks are exact
    dmc = Dmc(dmc.w / dmc.w.sum(axis=1, keepdims=True))
    op_field = doc.get("op", "xor")
    try:
        if op_field == "xor":
            op = BinaryOp.xor(nin)
        else:
            op = BinaryOp(op_field, nin)
    except (ValueError, TypeError) as e:
        raise ChannelSpecError(f"field op: {e}") from None
    return dmc, op


def blahut_arimoto(dmc: Dmc, tol: float = 1e-12, max_iter: int = 100_000) -> tuple[float, Dist]:
    """Capacity (bits) and a capacity-achieving input of ``dmc``."""
    w = dmc.w
    logw = np.where(w > 0, np.log2(np.where(w > 0, w, 1.0)), 0.0)
    p = np.full(dmc.n_inputs, 1.0 / dmc.n_inputs)
    for _ in range(max_iter):
        q = p @ w
        logq = np.log2(np.where(q > 0, q, 1.0))
        d = np.sum(w * (logw - logq), axis=1)
        upper, lower = float(d.max()), float(p @ d)
        if upper - lower < tol:
            break
        p = p * np.exp2(d)
        p /= p.sum()
    return mutual_information_array(p, w), Dist(p)
