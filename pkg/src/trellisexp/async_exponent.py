"""Random-coding exponent of the controlled-asynchronous two-user MAC.

For a fixed number ``L`` of erroneous codewords the exponent is

    min  D(V1||P) + w D(V12||P) + |I_V1(X;Z|Y) + w I_V12(X;Y;Z) - L R|^+,
    w = (L - 1) / 2,

over joint laws V1, V12 on X x Y x Z whose X- and Y-marginals equal ``p_star``,
and ``P(x, y, z) = W(z|x, y) p_star(x) p_star(y)``. The full exponent is the
minimum over ``L`` in ``1..K``.

Solution method. Writing |t|^+ = max over lam in [0, 1] of lam * t and swapping
min and max (the inner objective is convex in (V1, V12) for every lam, and
linear in lam) gives

    E_L(R) = max_lam  m1(lam) + w m12(lam) - lam L R,

    m1(lam)  = min_V D(V||P) + lam I_V(X;Z|Y),
    m12(lam) = min_V D(V||P) + lam I_V(X;Y;Z).

Neither table depends on L or R, so one cache serves a whole curve. Each
inner problem is solved by alternating minimization: the conditional
V(z|x,y) has a closed form given an auxiliary output law, and V(x,y) is the
I-projection of a product weight onto the marginal constraints, computed by
iterative proportional fitting. The outer concave maximization bisects on the
sign of the derivative, which is the bracket evaluated at the inner
minimizers. lam* = 0 is the clipped branch (bracket <= 0, exponent 0),
lam* = 1 the active branch, and interior lam* puts the optimum on the kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .channels import MacChannel, compose_joint
from .prob_core import PROB_TOL, Dist, JointDist, cond_mutual_information, kl_divergence, multi_information

FLOOR = 1e-12


class SolverNonConvergence(RuntimeError):
    def __init__(self, message: str, best_value: float, residual: float):
        super().__init__(f"{message} (best value {best_value:.6g}, residual {residual:.3g})")
        self.best_value = best_value
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 32
    max_iter: int = 5000
    tol: float = 1e-13
    lambda_tol: float = 1e-10
    ipf_tol: float = 1e-14
    seed: int = 0


@dataclass(frozen=True)
class AsyncObjectiveParams:
    L: int
    K: int
    rate: float
    p_star: Dist
    composed: JointDist

    def __post_init__(self):
        if self.K < 1 or not 1 <= self.L <= self.K:
            raise ValueError(f"L={self.L} must lie in 1..K={self.K}")
        if self.composed.axes != ("X", "Y", "Z"):
            raise ValueError("composed law must have axes X, Y, Z")
        px = self.composed.probs.sum(axis=(1, 2))
        py = self.composed.probs.sum(axis=(0, 2))
        if len(px) != len(self.p_star) or len(py) != len(self.p_star):
            raise ValueError("composed law alphabet does not match p_star")
        if np.abs(px - self.p_star.probs).max() > PROB_TOL or np.abs(py - self.p_star.probs).max() > PROB_TOL:
            raise ValueError("composed law marginals differ from p_star")

    @property
    def weight(self) -> float:
        return (self.L - 1) / 2.0

    @classmethod
    def from_mac(cls, mac: MacChannel, p_star: Dist, L: int, K: int, rate: float) -> "AsyncObjectiveParams":
        return cls(L, K, rate, p_star, compose_joint(mac, p_star, p_star))


@dataclass(frozen=True)
class AsyncResult:
    exponent: float
    arg_v1: JointDist
    arg_v12: JointDist
    l_star: int
    branch: str
    lam: float = 0.0
    residual: float = 0.0
    per_l: tuple[float, ...] = field(default=(), compare=False)


def objective(v1: JointDist, v12: JointDist, params: AsyncObjectiveParams) -> float:
    """Inner expression of the exponent, +inf when a divergence is infinite."""
    p = params.composed
    if v1.shape != p.shape or v12.shape != p.shape:
        raise ValueError(f"shape mismatch: {v1.shape}, {v12.shape} vs {p.shape}")
    w = params.weight
    d1 = kl_divergence(v1, p)
    d12 = kl_divergence(v12, p) if w > 0 else 0.0
    if math.isinf(d1) or math.isinf(d12):
        return math.inf
    i1 = cond_mutual_information(v1, "X", "Z", "Y")
    i12 = multi_information(v12, ("X", "Y", "Z")) if w > 0 else 0.0
    return d1 + w * d12 + max(i1 + w * i12 - params.L * params.rate, 0.0)


# -- array-level measures used inside the solver -------------------------------

def _xlogy(x, y):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(y[pos])
    return out


def _h(a) -> float:
    return float(-_xlogy(a, a).sum())


def _kl(v, p) -> float:
    pos = v > 0
    if np.any(p[pos] <= 0):
        return math.inf
    return max(float(np.sum(v[pos] * np.log2(v[pos] / p[pos]))), 0.0)


def cmi_xz_given_y(v) -> float:
    return max(_h(v.sum(axis=2)) + _h(v.sum(axis=0)) - _h(v.sum(axis=(0, 2))) - _h(v), 0.0)


def multi_info3(v) -> float:
    return max(_h(v.sum(axis=(1, 2))) + _h(v.sum(axis=(0, 2))) + _h(v.sum(axis=(0, 1))) - _h(v), 0.0)


def ipf(r: np.ndarray, px: np.ndarray, py: np.ndarray, tol: float = 1e-14, max_iter: int = 10_000) -> np.ndarray:
    """Scale a nonnegative matrix so its row and column sums are ``px`` and ``py``."""
    m = np.array(r, dtype=float)
    for _ in range(max_iter):
        rows = m.sum(axis=1)
        m *= np.divide(px, rows, out=np.zeros_like(px), where=rows > 0)[:, None]
        cols = m.sum(axis=0)
        m *= np.divide(py, cols, out=np.zeros_like(py), where=cols > 0)[None, :]
        if np.abs(m.sum(axis=1) - px).max() < tol:
            break
    return m


@dataclass
class InnerSolution:
    value: float
    divergence: float
    information: float
    v: np.ndarray


class _InnerProblem:
    """min_V D(V||P) + lam * info(V) under fixed X and Y marginals."""

    def __init__(self, w: np.ndarray, p_star: np.ndarray, kind: str, cfg: SolverConfig):
        self.w = w
        self.px = p_star
        self.pxy = np.outer(p_star, p_star)
        self.p = w * self.pxy[:, :, None]
        self.kind = kind
        self.cfg = cfg
        self.info = cmi_xz_given_y if kind == "v1" else multi_info3

    def evaluate(self, v: np.ndarray, lam: float) -> tuple[float, float, float]:
        d = _kl(v, self.p)
        i = self.info(v)
        return d + lam * i, d, i

    def _initial(self, restart: int) -> np.ndarray:
        if restart == 0:
            return self.p.copy()
        rng = np.random.default_rng([self.cfg.seed, restart])
        cond = self.w * rng.uniform(0.05, 1.0, size=self.w.shape)
        cond /= cond.sum(axis=2, keepdims=True)
        xy = ipf(rng.uniform(0.05, 1.0, size=self.pxy.shape), self.px, self.px, self.cfg.ipf_tol)
        return xy[:, :, None] * cond

    def _step(self, v: np.ndarray, lam: float) -> np.ndarray:
        a = 1.0 / (1.0 + lam)
        if self.kind == "v1":
            vyz = v.sum(axis=0)
            q = np.divide(vyz, vyz.sum(axis=1, keepdims=True), out=np.zeros_like(vyz),
                          where=vyz.sum(axis=1, keepdims=True) > 0)[None, :, :]
            expo = 1.0 + lam
        else:
            q = v.sum(axis=(0, 1))[None, None, :]
            expo = 1.0
        t = np.power(self.w, a) * np.power(q, lam * a)
        c = t.sum(axis=2)
        cond = np.divide(t, c[:, :, None], out=np.zeros_like(t), where=c[:, :, None] > 0)
        xy = ipf(self.pxy * np.power(c, expo), self.px, self.px, self.cfg.ipf_tol)
        return xy[:, :, None] * cond

    def solve(self, lam: float) -> InnerSolution:
        if lam == 0.0:
            _, d, i = self.evaluate(self.p, 0.0)
            return InnerSolution(0.0, d, i, self.p.copy())
        best = None
        worst_gap = 0.0
        for r in range(self.cfg.restarts):
            v = self._initial(r)
            val = self.evaluate(v, lam)[0]
            converged = False
            for _ in range(self.cfg.max_iter):
                v_new = self._step(v, lam)
                new_val = self.evaluate(v_new, lam)[0]
                delta = val - new_val
                v, val = v_new, new_val
                if abs(delta) <= self.cfg.tol * (1.0 + abs(val)):
                    converged = True
                    break
            if not converged:
                worst_gap = max(worst_gap, abs(delta))
            if best is None or val < best[0] - 1e-15:
                best = (val, v)
        if worst_gap > 1e-8:
            raise SolverNonConvergence(f"{self.kind} inner solve at lam={lam} did not converge", best[0], worst_gap)
        val, d, i = self.evaluate(best[1], lam)
        return InnerSolution(val, d, i, best[1])


class AsyncSolver:
    """Cached dual tables for one (MAC, p_star) pair; evaluates any (L, R)."""

    def __init__(self, mac: MacChannel, p_star: Dist, cfg: SolverConfig | None = None):
        self.mac = mac
        self.p_star = p_star
        self.cfg = cfg or SolverConfig()
        self.composed = compose_joint(mac, p_star, p_star)
        w = np.asarray(mac.w)
        self._v1 = _InnerProblem(w, p_star.probs, "v1", self.cfg)
        self._v12 = _InnerProblem(w, p_star.probs, "v12", self.cfg)
        self.inner_v1 = lru_cache(maxsize=None)(self._v1.solve)
        self.inner_v12 = lru_cache(maxsize=None)(self._v12.solve)

    def params(self, L: int, K: int, rate: float) -> AsyncObjectiveParams:
        return AsyncObjectiveParams(L, K, rate, self.p_star, self.composed)

    def _bracket(self, lam: float, L: int, rate: float) -> float:
        w = (L - 1) / 2.0
        return self.inner_v1(lam).information + w * self.inner_v12(lam).information - L * rate

    def _dual(self, lam: float, L: int, rate: float) -> float:
        w = (L - 1) / 2.0
        return self.inner_v1(lam).value + w * self.inner_v12(lam).value - lam * L * rate

    def _primal(self, v1: np.ndarray, v12: np.ndarray, L: int, rate: float) -> float:
        w = (L - 1) / 2.0
        d1 = _kl(v1, self._v1.p)
        d12 = _kl(v12, self._v12.p) if w > 0 else 0.0
        i12 = multi_info3(v12) if w > 0 else 0.0
        return d1 + w * d12 + max(cmi_xz_given_y(v1) + w * i12 - L * rate, 0.0)

    def minimize_fixed_l(self, L: int, K: int, rate: float) -> AsyncResult:
        self.params(L, K, rate)
        if self._bracket(0.0, L, rate) <= 0.0:
            lam, v1, v12 = 0.0, self._v1.p, self._v12.p
            value = 0.0
        elif self._bracket(1.0, L, rate) >= 0.0:
            lam = 1.0
            v1, v12 = self.inner_v1(1.0).v, self.inner_v12(1.0).v
            value = self._primal(v1, v12, L, rate)
        else:
            lo, hi = 0.0, 1.0
            while hi - lo > self.cfg.lambda_tol:
                mid = 0.5 * (lo + hi)
                if self._bracket(mid, L, rate) > 0.0:
                    lo = mid
                else:
                    hi = mid
            candidates = []
            for lam_c in (lo, hi):
                v1c, v12c = self.inner_v1(lam_c).v, self.inner_v12(lam_c).v
                candidates.append((self._primal(v1c, v12c, L, rate), lam_c, v1c, v12c))
            # feasible mixture of the two bracketing solutions, weighted to zero the bracket
            b_lo, b_hi = self._bracket(lo, L, rate), self._bracket(hi, L, rate)
            theta = b_lo / (b_lo - b_hi) if b_lo != b_hi else 0.5
            lo_s, hi_s = candidates[0], candidates[1]
            v1m = (1 - theta) * lo_s[2] + theta * hi_s[2]
            v12m = (1 - theta) * lo_s[3] + theta * hi_s[3]
            candidates.append((self._primal(v1m, v12m, L, rate), 0.5 * (lo + hi), v1m, v12m))
            value, lam, v1, v12 = min(candidates, key=lambda c: c[0])
        dual = self._dual(lam, L, rate)
        w = (L - 1) / 2.0
        bracket = cmi_xz_given_y(v1) + w * (multi_info3(v12) if w > 0 else 0.0) - L * rate
        branch = "active" if bracket > 1e-6 else "clipped"
        axes = ("X", "Y", "Z")
        return AsyncResult(
            exponent=max(value, 0.0),
            arg_v1=JointDist(v1 / v1.sum(), axes),
            arg_v12=JointDist(v12 / v12.sum(), axes),
            l_star=L,
            branch=branch,
            lam=lam,
            residual=value - dual,
        )

    def exponent(self, rate: float, K: int, l_values=None) -> AsyncResult:
        if K < 3 or K % 2 == 0:
            raise ValueError(f"K={K} must be odd and at least 3")
        ls = list(l_values) if l_values is not None else list(range(1, K + 1))
        results = [self.minimize_fixed_l(L, K, rate) for L in ls]
        # lowest L wins ties
        best = min(results, key=lambda r: (r.exponent, r.l_star))
        return AsyncResult(best.exponent, best.arg_v1, best.arg_v12, best.l_star, best.branch,
                           best.lam, best.residual, tuple(r.exponent for r in results))

    def zero_threshold(self, K: int) -> float:
        """Smallest rate at which some L has a nonpositive bracket at V = P."""
        i1 = self.inner_v1(0.0).information
        i12 = self.inner_v12(0.0).information
        return min((i1 + (L - 1) / 2.0 * i12) / L for L in range(1, K + 1))


def minimize_fixed_l(params: AsyncObjectiveParams, mac: MacChannel, cfg: SolverConfig | None = None) -> AsyncResult:
    return AsyncSolver(mac, params.p_star, cfg).minimize_fixed_l(params.L, params.K, params.rate)


def async_exponent(rate: float, K: int, mac: MacChannel, p_star: Dist,
                   cfg: SolverConfig | None = None) -> AsyncResult:
    return AsyncSolver(mac, p_star, cfg).exponent(rate, K)



@dataclass(frozen=True)
class ExponentCurve:
    label: str
    rates: tuple
    exponents: tuple


@dataclass(frozen=True)
class Comparison:
    """Single-user trellis exponent against the scaled asynchronous MAC exponent."""

    forney: ExponentCurve
    async_scaled: ExponentCurve
    results: tuple
    low_rate_max_gap: float
    high_rate_gap: float
    high_rate: float


def relative_gap(a: float, f: float) -> float:
    return abs(a - f) / f if f > 0 else math.inf


def comparison_curve(dmc, op, K: int, rate_grid, p_star: Dist | None = None,
                     cfg: SolverConfig | None = None, effective: bool = False,
                     forney_input: Dist | None = None, floor: float = 0.01) -> Comparison:
    """Evaluate both curves at MAC rates R, plotting 2R against 2 E_r(R).

    ``effective`` multiplies the plotted axis by (1 - 1/K) for both curves.
    The low-rate gap is the largest relative gap over plotted rates up to half
    the single-user capacity; the high-rate gap is taken at the largest
    plotted rate where both curves exceed ``floor``.
    """
    from .channels import blahut_arimoto, symmetric_capacity_input, virtual_mac
    from .gallager import trellis_exponent

    mac = virtual_mac(dmc, op)
    p_star = p_star if p_star is not None else symmetric_capacity_input(mac)
    solver = AsyncSolver(mac, p_star, cfg)
    scale = (1.0 - 1.0 / K) if effective else 1.0
    capacity = blahut_arimoto(dmc)[0]
    plotted, forney, scaled, results = [], [], [], []
    for r in rate_grid:
        if r <= 0:
            raise ValueError("rates must be positive")
        res = solver.exponent(r, K)
        results.append(res)
        plotted.append(2 * r * scale)
        forney.append(trellis_exponent(2 * r, 1, forney_input, dmc).exponent)
        scaled.append(2 * res.exponent)
    low = [relative_gap(a, f) for x, a, f in zip(plotted, scaled, forney) if x <= 0.5 * capacity * scale and f > 0]
    both = [i for i in range(len(plotted)) if scaled[i] > floor and forney[i] > floor]
    hi = both[-1] if both else None
    return Comparison(
        forney=ExponentCurve("forney_memory1", tuple(plotted), tuple(forney)),
        async_scaled=ExponentCurve("async_scaled", tuple(plotted), tuple(scaled)),
        results=tuple(results),
        low_rate_max_gap=max(low) if low else math.nan,
        high_rate_gap=relative_gap(scaled[hi], forney[hi]) if hi is not None else math.nan,
        high_rate=plotted[hi] if hi is not None else math.nan,
    )


# -- brute-force grid oracle ---------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    value: float
    slack: float
    projected_value: float
    points: int

    @property
    def lower(self) -> float:
        return self.value - self.slack


def _grid_points(n: int, p_star: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Binary joint laws on the 1/n grid with X/Y marginals within 1/(2n) of p_star.

    Points outside the support of ``p`` (infinite divergence) are dropped.
    """
    target = n * p_star[0]
    allowed = [m for m in range(n + 1) if abs(m - target) <= 0.5 + 1e-12]
    out = []
    for mx in allowed:
        for my in allowed:
            for q00 in range(max(0, mx + my - n), min(mx, my) + 1):
                q = np.array([[q00, mx - q00], [my - q00, n - mx - my + q00]])
                axes = [np.arange(c + 1) for c in q.ravel()]
                z0 = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
                pts = np.empty((len(z0), 2, 2, 2))
                pts[:, :, :, 0] = z0.reshape(-1, 2, 2)
                pts[:, :, :, 1] = q[None] - pts[:, :, :, 0]
                out.append(pts / n)
    pts = np.concatenate(out)
    ok = np.all((pts == 0) | (p[None] > 0), axis=(1, 2, 3))
    return pts[ok]


def _ent(a: np.ndarray, axes) -> np.ndarray:
    m = a.sum(axis=axes) if axes else a
    flat = m.reshape(len(m), -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(flat > 0, flat * np.log2(np.where(flat > 0, flat, 1.0)), 0.0)
    return -t.sum(axis=1)


def _measures(pts: np.ndarray, p: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pts > 0, pts / np.where(p > 0, p, 1.0)[None], 1.0)
    d = np.sum(np.where(pts > 0, pts * np.log2(ratio), 0.0), axis=(1, 2, 3))
    h_xyz = _ent(pts, None)
    h_xy, h_yz, h_y = _ent(pts, (3,)), _ent(pts, (1,)), _ent(pts, (1, 3))
    h_x, h_z = _ent(pts, (2, 3)), _ent(pts, (1, 2))
    cmi = h_xy + h_yz - h_y - h_xyz
    mi3 = h_x + h_y + h_z - h_xyz
    return np.maximum(d, 0.0), np.maximum(cmi, 0.0), np.maximum(mi3, 0.0)


def _pareto(d: np.ndarray, i: np.ndarray) -> np.ndarray:
    order = np.lexsort((d, i))
    keep, best = [], math.inf
    for idx in order:
        if d[idx] < best:
            keep.append(idx)
            best = d[idx]
    return np.array(keep, dtype=np.int64)


def _grid_min(d1, i1, d12, i12, L, rate):
    w = (L - 1) / 2.0
    if w == 0:
        vals = d1 + np.maximum(i1 - L * rate, 0.0)
        k = int(np.argmin(vals))
        return float(vals[k]), k, int(np.argmin(d12))
    f1, f12 = _pareto(d1, i1), _pareto(d12, i12)
    vals = (d1[f1][:, None] + w * d12[f12][None, :]
            + np.maximum(i1[f1][:, None] + w * i12[f12][None, :] - L * rate, 0.0))
    a, b = np.unravel_index(int(np.argmin(vals)), vals.shape)
    return float(vals[a, b]), int(f1[a]), int(f12[b])


def _neighbours(pts_index: dict, pt: np.ndarray, n: int):
    counts = np.rint(pt * n).astype(int).ravel()
    for a in range(8):
        if counts[a] == 0:
            continue
        for b in range(8):
            if a == b:
                continue
            c = counts.copy()
            c[a] -= 1
            c[b] += 1
            j = pts_index.get(tuple(c))
            if j is not None:
                yield j


def grid_oracle(params: AsyncObjectiveParams, step: float) -> OracleResult:
    """Exhaustive minimum of the objective over grid laws (binary alphabets only).

    ``slack`` is the largest increase of the objective over single-unit grid
    moves from the minimizing pair, a local modulus of the grid at scale
    ``step``. ``projected_value`` evaluates the minimizing pair after rescaling
    its (x, y) part onto the exact marginals.
    """
    p = params.composed.probs
    if p.shape != (2, 2, 2):
        raise ValueError("oracle limited to binary alphabets")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-12 or n > 32:
        raise ValueError("step must be 1/n with n <= 32")
    pts = _grid_points(n, params.p_star.probs, p)
    d, cmi, mi3 = _measures(pts, p)
    L, rate = params.L, params.rate
    value, a, b = _grid_min(d, cmi, d, mi3, L, rate)
    w = params.weight

    def obj(i, j):
        return d[i] + w * d[j] + max(cmi[i] + w * mi3[j] - L * rate, 0.0)

    index = {tuple(np.rint(pt * n).astype(int).ravel()): k for k, pt in enumerate(pts)}
    slack = 0.0
    for j in _neighbours(index, pts[a], n):
        slack = max(slack, obj(j, b) - value)
    if w > 0:
        for j in _neighbours(index, pts[b], n):
            slack = max(slack, obj(a, j) - value)

    def project(pt):
        cond = np.divide(pt, pt.sum(axis=2, keepdims=True), out=np.zeros_like(pt),
                         where=pt.sum(axis=2, keepdims=True) > 0)
        # empty (x, y) cells get the channel row so the projection stays in support
        empty = pt.sum(axis=2) == 0
        cond[empty] = p[empty] / np.where(p[empty].sum(axis=1, keepdims=True) > 0,
                                          p[empty].sum(axis=1, keepdims=True), 1.0)
        xy = ipf(np.maximum(pt.sum(axis=2), 1e-300), params.p_star.probs, params.p_star.probs)
        return xy[:, :, None] * cond

    v1, v12 = project(pts[a]), project(pts[b])
    pv, pc, pm = _measures(np.stack([v1, v12]), p)
    projected = pv[0] + w * pv[1] + max(pc[0] + w * pm[1] - L * rate, 0.0)
    return OracleResult(value, slack, float(projected), len(pts))
