import math

import numpy as np
import pytest

from trellisexp.async_exponent import (
    AsyncObjectiveParams,
    AsyncSolver,
    SolverConfig,
    async_exponent,
    comparison_curve,
    grid_oracle,
    ipf,
    minimize_fixed_l,
    objective,
)
from trellisexp.channels import BinaryOp, MacChannel, compose_joint, symmetric_capacity_input, virtual_mac, z_channel
from trellisexp.prob_core import (
    Dist,
    JointDist,
    cond_mutual_information,
    kl_divergence,
    marginal,
    multi_information,
)

FAST = SolverConfig(restarts=2)


@pytest.fixture(scope="module")
def zmac():
    mac = virtual_mac(z_channel(0.101), BinaryOp.xor(2))
    return mac, symmetric_capacity_input(mac)


@pytest.fixture(scope="module")
def solver(zmac):
    return AsyncSolver(*zmac, FAST)


def random_feasible(rng, p_star):
    r = rng.random((2, 2)) + 0.05
    vxy = ipf(r, p_star.probs, p_star.probs)
    cond = rng.dirichlet(np.ones(2), size=(2, 2))
    return JointDist(vxy[:, :, None] * cond, ("X", "Y", "Z"))


def test_params_validation(zmac):
    mac, ps = zmac
    with pytest.raises(ValueError):
        AsyncObjectiveParams.from_mac(mac, ps, 4, 3, 0.1)
    bad = compose_joint(mac, Dist([0.5, 0.5]), Dist([0.5, 0.5]))
    with pytest.raises(ValueError):
        AsyncObjectiveParams(1, 3, 0.1, ps, bad)


def test_objective_cases(zmac):
    mac, ps = zmac
    rng = np.random.default_rng(0)
    P = compose_joint(mac, ps, ps)
    p1 = AsyncObjectiveParams.from_mac(mac, ps, 1, 3, 0.05)
    v1 = random_feasible(rng, ps)
    assert objective(v1, random_feasible(rng, ps), p1) == objective(v1, P, p1)
    i = cond_mutual_information(P)
    assert objective(P, P, AsyncObjectiveParams.from_mac(mac, ps, 1, 3, i + 1e-9)) == 0.0
    p3 = AsyncObjectiveParams.from_mac(mac, ps, 3, 3, 0.2)
    v12 = random_feasible(rng, ps)
    by_hand = (kl_divergence(v1, P) + kl_divergence(v12, P)
               + max(cond_mutual_information(v1) + multi_information(v12) - 0.6, 0.0))
    assert objective(v1, v12, p3) == pytest.approx(by_hand, abs=1e-12)
    off = np.zeros((2, 2, 2))
    off[1, 1, 1] = 1.0  # W(1 | 1 xor 1 = 0) = 0
    assert objective(JointDist(off, ("X", "Y", "Z")), P, p3) == math.inf
    with pytest.raises(ValueError):
        objective(JointDist(np.full((2, 2), 0.25)), P, p3)


def test_objective_symmetric_in_v12_relabeling(zmac):
    mac, ps = zmac
    rng = np.random.default_rng(1)
    p = AsyncObjectiveParams.from_mac(mac, ps, 3, 5, 0.1)
    v1 = random_feasible(rng, ps)
    v12 = random_feasible(rng, ps)
    swapped = JointDist(np.transpose(v12.probs, (1, 0, 2)), ("X", "Y", "Z"))
    assert objective(v1, v12, p) == pytest.approx(objective(v1, swapped, p), abs=1e-12)


def test_ipf_marginals():
    r = np.random.default_rng(2).random((3, 3)) + 0.1
    px, py = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.1, 0.3])
    v = ipf(r, px, py)
    np.testing.assert_allclose(v.sum(axis=1), px, atol=1e-13)
    np.testing.assert_allclose(v.sum(axis=0), py, atol=1e-13)


@pytest.mark.parametrize("L, rate", [(1, 0.05), (2, 0.1), (3, 0.2), (3, 0.35), (5, 0.3)])
def test_solver_feasible_and_below_p(solver, zmac, L, rate):
    mac, ps = zmac
    K = max(3, L if L % 2 else L + 1)
    res = solver.minimize_fixed_l(L, K, rate)
    params = AsyncObjectiveParams.from_mac(mac, ps, L, K, rate)
    P = params.composed
    assert 0.0 <= res.exponent <= objective(P, P, params) + 1e-12
    for v in (res.arg_v1, res.arg_v12):
        np.testing.assert_allclose(marginal(v, ("X",)).probs, ps.probs, atol=1e-9)
        np.testing.assert_allclose(marginal(v, ("Y",)).probs, ps.probs, atol=1e-9)
    assert res.exponent == pytest.approx(objective(res.arg_v1, res.arg_v12, params), abs=1e-9)
    assert abs(res.residual) < 1e-9
    w = (L - 1) / 2
    bracket = (cond_mutual_information(res.arg_v1) + w * multi_information(res.arg_v12) - L * rate)
    if res.branch == "clipped":
        assert bracket <= 1e-6
    else:
        assert bracket >= -1e-6


def test_rate_zero_active(solver):
    res = solver.exponent(1e-9, 3)
    assert res.exponent > 0 and res.branch == "active"


def test_exponent_monotone_in_rate_and_k(solver):
    rates = np.arange(0.02, 0.5, 0.04)
    e3 = [solver.exponent(r, 3).exponent for r in rates]
    e5 = [solver.exponent(r, 5).exponent for r in rates]
    assert np.all(np.diff(e3) <= 1e-10)
    assert np.all(np.array(e5) <= np.array(e3) + 1e-12)


def test_zero_threshold(solver):
    th = solver.zero_threshold(3)
    for r in (th, th + 0.01, th + 0.1):
        res = solver.exponent(r, 3)
        assert res.exponent == 0.0 and res.branch == "clipped"
    for r in np.arange(0.02, th - 0.01, 0.05):
        assert solver.exponent(r, 3).exponent > 0


def test_module_level_helpers_agree(zmac):
    mac, ps = zmac
    params = AsyncObjectiveParams.from_mac(mac, ps, 2, 3, 0.15)
    a = minimize_fixed_l(params, mac, FAST)
    b = AsyncSolver(mac, ps, FAST).minimize_fixed_l(2, 3, 0.15)
    assert a.exponent == b.exponent
    c = async_exponent(0.15, 3, mac, ps, FAST)
    assert c.exponent <= a.exponent
    assert c.exponent == min(c.per_l)


def test_restart_count_does_not_change_value(zmac):
    mac, ps = zmac
    a = AsyncSolver(mac, ps, SolverConfig(restarts=1)).exponent(0.2, 3)
    b = AsyncSolver(mac, ps, SolverConfig(restarts=6, seed=3)).exponent(0.2, 3)
    assert a.exponent == pytest.approx(b.exponent, abs=1e-10)


def test_noiseless_mac_support(solver):
    mac = virtual_mac(z_channel(0.0), BinaryOp.xor(2))
    ps = symmetric_capacity_input(mac)
    res = AsyncSolver(mac, ps, FAST).exponent(0.1, 3)
    assert math.isfinite(res.exponent) and res.exponent > 0
    P = compose_joint(mac, ps, ps).probs
    assert np.all(res.arg_v1.probs[P == 0] == 0)


def test_oracle_regression_fixture(zmac):
    mac, ps = zmac
    o = grid_oracle(AsyncObjectiveParams.from_mac(mac, ps, 1, 3, 0.05), 1 / 32)
    assert o.value == pytest.approx(0.505114853273, abs=1e-10)


def test_oracle_sandwich_exact_feasible(solver, zmac):
    mac, ps = zmac
    for L, rate in [(1, 0.05), (3, 0.2), (2, 0.3), (3, 0.4)]:
        params = AsyncObjectiveParams.from_mac(mac, ps, L, 3, rate)
        o = grid_oracle(params, 1 / 16)
        e = solver.minimize_fixed_l(L, 3, rate).exponent
        assert e <= o.projected_value + 1e-9
        assert e >= o.lower - 1e-9


def test_oracle_toy_and_nesting():
    mac = virtual_mac(z_channel(0.25), BinaryOp.xor(2))
    u = Dist([0.5, 0.5])
    params = AsyncObjectiveParams.from_mac(mac, u, 2, 3, 0.1)
    coarse = grid_oracle(params, 1 / 2)
    assert math.isfinite(coarse.value)
    exact = AsyncSolver(mac, u, FAST).minimize_fixed_l(2, 3, 0.1).exponent
    assert exact <= coarse.value + 1e-12
    assert grid_oracle(params, 1 / 16).value <= grid_oracle(params, 1 / 8).value + 1e-12


def test_oracle_rejects_nonbinary():
    w = np.full((3, 3, 3), 1 / 3)
    mac = MacChannel(w)
    params = AsyncObjectiveParams.from_mac(mac, Dist.uniform(3), 1, 3, 0.1)
    with pytest.raises(ValueError, match="oracle limited to binary"):
        grid_oracle(params, 1 / 4)


def test_comparison_curve_shape():
    c = comparison_curve(z_channel(0.101), BinaryOp.xor(2), 3, [0.02, 0.1, 0.2, 0.3, 0.5], cfg=FAST)
    assert c.forney.rates == c.async_scaled.rates == (0.04, 0.2, 0.4, 0.6, 1.0)
    assert c.async_scaled.exponents[0] > c.forney.exponents[0]
    assert c.async_scaled.exponents[-1] == 0.0 and c.forney.exponents[-1] == 0.0
    assert np.all(np.diff(c.async_scaled.exponents) <= 1e-12)
    eff = comparison_curve(z_channel(0.101), BinaryOp.xor(2), 3, [0.1], cfg=FAST, effective=True)
    assert eff.forney.rates[0] == pytest.approx(0.2 * (1 - 1 / 3))
