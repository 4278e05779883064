"""Shared fixtures for solver tests: tiny random instances and the
instance families used by the acceptance suite."""

import numpy as np

from facalloc.model import (
    Box,
    CustomUtility,
    FacilitySpec,
    LinearCost,
    PiecewiseLinearCost,
    ProblemInstance,
    QuadraticCost,
    QuadraticLatencyUtility,
    ScaledSimplex,
    UserSpec,
    ZeroUtility,
)
from facalloc.problems import GlbFacility, GlbSpec, GlbUser, build_glb


def random_tiny_instance(seed):
    """Random instance with N <= 3 users and n <= 2 facilities.

    Mixes utility kinds, set kinds and cost kinds so the reformulation
    equivalence is exercised across the whole built-in surface.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    n_users = int(rng.integers(1, 4))
    users = []
    for _ in range(n_users):
        kind = rng.integers(0, 3)
        t = float(rng.uniform(0.5, 2.0))
        if rng.random() < 0.5:
            fset = ScaledSimplex(t, n)
        else:
            fset = Box(np.zeros(n), rng.uniform(1.0, 3.0, n))
        if kind == 0:
            utility = ZeroUtility()
        elif kind == 1:
            utility = QuadraticLatencyUtility(
                float(rng.uniform(0.1, 2.0)), t, rng.uniform(0.05, 0.5, n))
        else:
            h = rng.uniform(0.5, 2.0, n)
            m = rng.uniform(0.2, 1.5, n)
            utility = CustomUtility(
                lambda x, h=h, m=m: -0.5 * float(np.dot(h, (x - m) ** 2)),
                lambda x, h=h, m=m: -h * (x - m),
                curvature=float(np.max(h)))
        users.append(UserSpec(utility, fset))
    facilities = []
    for j in range(n):
        kind = rng.integers(0, 3)
        hi = float(rng.uniform(1.0, 2.0) * n_users)
        if kind == 0:
            cost = LinearCost(float(rng.uniform(0.1, 1.5)))
        elif kind == 1:
            cost = QuadraticCost(float(rng.uniform(0.2, 1.0)),
                                 float(rng.uniform(-0.5, 0.5)))
        else:
            b = float(rng.uniform(0.3, 0.7)) * hi
            cost = PiecewiseLinearCost([b], [float(rng.uniform(0.1, 0.5)),
                                             float(rng.uniform(0.6, 2.0))])
        facilities.append(FacilitySpec(cost, (0.0, hi)))
    return ProblemInstance(tuple(users), tuple(facilities))


def normalized_glb(seed, n_users, n_facilities=5, q=0.4, capacity_ratio=1.4):
    """Load-balancing instance with O(1) demands, for reference-backed tests."""
    rng = np.random.default_rng(seed)
    users = tuple(
        GlbUser(float(rng.uniform(0.5, 1.5)),
                tuple(rng.uniform(0.05, 0.10, n_facilities)))
        for _ in range(n_users))
    total_t = sum(u.demand for u in users)
    raw = rng.uniform(0.5, 1.5, n_facilities)
    caps = raw * (capacity_ratio * total_t / raw.sum())
    facilities = tuple(
        GlbFacility(servers=float(caps[j]), price_energy=0.03 + 0.005 * j,
                    pue=1.5, p_idle=100.0, p_peak=200.0)
        for j in range(n_facilities))
    return build_glb(GlbSpec(users, facilities, q=q))


def linear_utility_quadratic_cost_instance(seed, n_users=5, n=2):
    """Non-strictly concave (linear) utilities against strictly convex
    quadratic costs: the configuration whose convergence is geometric
    through the cost side alone."""
    rng = np.random.default_rng(seed)
    users = []
    for _ in range(n_users):
        b = rng.uniform(0.2, 1.0, n)
        users.append(UserSpec(
            CustomUtility(lambda x, b=b: float(np.dot(b, x)),
                          lambda x, b=b: b.copy(), curvature=0.0),
            Box(np.zeros(n), np.full(n, 3.0))))
    facilities = tuple(
        FacilitySpec(QuadraticCost(0.8, -1.0 + 0.1 * j), (-30.0, 30.0))
        for j in range(n))
    return ProblemInstance(tuple(users), facilities)


def concave_quadratic_utility_instance(seed, n_users=6, n=2, cap=3.0,
                                       cost_slope=0.4):
    """Strictly concave quadratic utilities against linear costs: the
    configuration whose convergence is geometric through the utility side."""
    rng = np.random.default_rng(seed)
    users = []
    for _ in range(n_users):
        h = rng.uniform(0.5, 2.0, n)
        m = rng.uniform(0.5, 2.0, n)
        users.append(UserSpec(
            CustomUtility(lambda x, h=h, m=m: -0.5 * float(np.dot(h, (x - m) ** 2)),
                          lambda x, h=h, m=m: -h * (x - m),
                          curvature=float(np.max(h))),
            Box(np.zeros(n), np.full(n, cap))))
    facilities = tuple(
        FacilitySpec(LinearCost(cost_slope + 0.1 * j), (0.0, 15.0))
        for j in range(n))
    return ProblemInstance(tuple(users), facilities)
