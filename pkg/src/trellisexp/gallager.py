"""Gallager's E0 function and the time-varying trellis exponent a*E0(rho*)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .channels import Dmc, blahut_arimoto, channel_mutual_information
from .prob_core import Dist

RHO_TOL = 1e-10


class RateAboveThreshold(ValueError):
    """The requested rate is not below the mutual information of the input."""


@dataclass(frozen=True)
class GallagerPoint:
    rate: float
    rho_star: float
    exponent: float
    memory: int
    input_dist: tuple[float, ...]


def _e0_sum(rho: float, p: np.ndarray, w: np.ndarray) -> float:
    inner = p @ np.power(w, 1.0 / (1.0 + rho))
    return float(np.sum(np.power(inner, 1.0 + rho)))


def e0(rho: float, p: Dist, dmc: Dmc) -> float:
    """E0(rho) = -log2 sum_z (sum_x p(x) W(z|x)^(1/(1+rho)))^(1+rho)."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho={rho} outside [0, 1]")
    if len(p) != dmc.n_inputs:
        raise ValueError("input distribution does not match channel")
    return max(-math.log2(_e0_sum(rho, p.probs, dmc.w)), 0.0)


def optimize_input(dmc: Dmc, rho: float, tol: float = 1e-12, restarts: int = 16) -> Dist:
    """Input law maximizing e0(rho, ., dmc).

    The sum inside the logarithm is convex in the input law, so the binary case
    is a bounded scalar minimization; larger alphabets use exponentiated
    gradient steps from several starting points. A flat objective (rho = 0)
    returns the uniform law.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho={rho} outside [0, 1]")
    n = dmc.n_inputs
    w = dmc.w
    uniform = np.full(n, 1.0 / n)
    if n == 1:
        return Dist([1.0])

    def f(p):
        return _e0_sum(rho, p, w)

    if n == 2:
        res = minimize_scalar(lambda t: f(np.array([t, 1.0 - t])), bounds=(0.0, 1.0),
                              method="bounded", options={"xatol": 1e-12})
        cand = np.array([res.x, 1.0 - res.x])
        # endpoints are excluded by the bounded method
        for p in (np.array([0.0, 1.0]), np.array([1.0, 0.0])):
            if f(p) < f(cand):
                cand = p
        if f(uniform) <= f(cand) + tol:
            return Dist(uniform)
        return Dist(cand)

    a = np.power(w, 1.0 / (1.0 + rho))
    rng = np.random.default_rng(0)
    best, best_val = uniform, f(uniform)
    for r in range(restarts):
        p = uniform if r == 0 else rng.dirichlet(np.ones(n))
        for _ in range(5000):
            inner = p @ a
            grad = (1.0 + rho) * (a @ np.power(inner, rho))
            step = p * np.exp(-grad / max(float(np.abs(grad).max()), 1e-300))
            p_new = step / step.sum()
            if np.abs(p_new - p).max() < 1e-13:
                p = p_new
                break
            p = p_new
        v = f(p)
        if v < best_val - tol:
            best, best_val = p, v
    return Dist(best)


def _ratio(rho: float, e0_of):
    return e0_of(rho) / rho


def rho_of_rate(rate: float, p: Dist | None, dmc: Dmc, tol: float = RHO_TOL,
                rho_max: float = 1.0) -> float | None:
    """Solve E0(rho)/rho = rate for rho in (0, rho_max] by bisection.

    ``p=None`` uses the input-optimized E0. Returns None when the ratio is still
    at or above ``rate`` at ``rho_max``, i.e. the root lies beyond the cap (or
    does not exist, as for a noiseless channel).
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if p is None:
        threshold = blahut_arimoto(dmc)[0]

        def e0_of(r):
            return e0(r, optimize_input(dmc, r), dmc)
    else:
        threshold = channel_mutual_information(p, dmc)

        def e0_of(r):
            return e0(r, p, dmc)
    if rate >= threshold:
        raise RateAboveThreshold(f"rate {rate} is not below the threshold {threshold}")
    if _ratio(rho_max, e0_of) >= rate:
        return None
    lo, hi = 0.0, rho_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid > 0 and _ratio(mid, e0_of) >= rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def trellis_exponent(rate: float, a: int, p: Dist | None, dmc: Dmc) -> GallagerPoint:
    """Exponent a*E0(rho*) with rho* = min(1, rho_R); zero at or above threshold.

    ``p=None`` optimizes the input law for each rho.
    """
    if a < 1:
        raise ValueError("memory must be a positive integer")
    if rate <= 0:
        raise ValueError("rate must be positive")
    try:
        rho_r = rho_of_rate(rate, p, dmc)
    except RateAboveThreshold:
        inp = p if p is not None else blahut_arimoto(dmc)[1]
        return GallagerPoint(rate, 0.0, 0.0, a, tuple(inp.probs.tolist()))
    rho = 1.0 if rho_r is None else min(1.0, rho_r)
    inp = p if p is not None else optimize_input(dmc, rho)
    return GallagerPoint(rate, rho, a * e0(rho, inp, dmc), a, tuple(inp.probs.tolist()))


def trellis_curve(rates, a: int, p: Dist | None, dmc: Dmc) -> list[GallagerPoint]:
    return [trellis_exponent(r, a, p, dmc) for r in rates]
