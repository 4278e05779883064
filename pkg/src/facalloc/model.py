"""Abstract problem model: users with concave utilities, facilities with convex costs.

The problem being represented is

    maximize    sum_i f_i(x_i) - sum_j g_j(y_j)
    subject to  sum_i x_ij = y_j          for every facility j
                x_i in X_i                for every user i
                y_j in [y_lo_j, y_hi_j]   for every facility j

with concave utilities f_i, convex costs g_j, and compact convex feasible
sets.  Instances are immutable after construction and safe to share across
threads; every operation in this module is pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Array dimensions inconsistent with the instance."""


class DomainError(ValueError):
    """Value outside the domain an operation requires (NaN, empty set, ...)."""


class ParameterError(ValueError):
    """Invalid solver or model parameter."""


class BuildError(ValueError):
    """A domain spec cannot be compiled into a valid instance."""


class UnsupportedError(ValueError):
    """Operation intentionally restricted (e.g. oracle dimension limits)."""


def _as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def _freeze(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def column_sums(x):
    """Per-facility loads sum_i x_ij, accumulated in ascending user order.

    The fixed accumulation order makes the result bit-reproducible no matter
    how the per-user work was scheduled.
    """
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[1])
    for i in range(x.shape[0]):
        total = total + x[i]
    return total


def simplex_project(v, total):
    """Euclidean projection of ``v`` onto {x >= 0 : sum x = total}.

    Sorted-threshold method: the projection is max(v - theta, 0) where theta
    is the unique shift making the positive part sum to ``total``.
    """
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - total
    rho_candidates = u - cssv / np.arange(1, v.size + 1)
    k = np.nonzero(rho_candidates > 0)[0][-1]
    theta = cssv[k] / (k + 1.0)
    return np.maximum(v - theta, 0.0)


def left_inverse_matrix(entries):
    """Left inverse (A^T A)^{-1} A^T of a full-column-rank matrix."""
    a = np.asarray(entries, dtype=float)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {a.shape}")
    gram = a.T @ a
    if np.linalg.matrix_rank(a) < a.shape[1]:
        raise DomainError("matrix is not full column rank; no left inverse exists")
    return np.linalg.solve(gram, a.T)


# ---------------------------------------------------------------------------
# Utilities (concave, to be maximized)
# ---------------------------------------------------------------------------

class ConcaveUtility:
    """Base class for per-user utilities f_i.  Subclasses are immutable."""

    kind = "abstract"

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x):
        """Gradient of f at x, or None when unavailable."""
        return None

    def curvature_bound(self):
        """Upper bound on the spectral norm of the Hessian of -f, or None."""
        return None

    def to_dict(self) -> dict:
        raise DomainError(f"utility kind '{self.kind}' is not serializable")


class ZeroUtility(ConcaveUtility):
    """f(x) = 0; used when only costs matter."""

    kind = "zero"

    def value(self, x):
        return 0.0

    def gradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def curvature_bound(self):
        return 0.0

    def to_dict(self):
        return {"kind": "zero"}

    def __eq__(self, other):
        return isinstance(other, ZeroUtility)


class QuadraticLatencyUtility(ConcaveUtility):
    """f(x) = -q * t * (l.x / t)^2, the demand-weighted squared average latency.

    ``q`` is the performance weight in monetary units, ``t`` the user's total
    demand, and ``l`` the per-facility latency vector in seconds.  The Hessian
    is the rank-one matrix -(2q/t) l l^T, so f is concave but not strictly
    concave for dimension >= 2.
    """

    kind = "quadratic-latency"

    def __init__(self, q, t, l):
        if q < 0:
            raise ParameterError(f"latency weight must be nonnegative, got {q}")
        if t <= 0:
            raise ParameterError(f"total demand must be positive, got {t}")
        l = _as_vector(l, "latency vector")
        if np.any(l < 0):
            raise ParameterError("latencies must be nonnegative")
        self.q = float(q)
        self.t = float(t)
        self.l = _freeze(l)

    def value(self, x):
        s = float(np.dot(self.l, x))
        return -self.q / self.t * s * s

    def gradient(self, x):
        s = float(np.dot(self.l, x))
        return (-2.0 * self.q / self.t * s) * self.l

    def curvature_bound(self):
        return 2.0 * self.q / self.t * float(np.dot(self.l, self.l))

    def to_dict(self):
        return {"kind": "quadratic-latency", "q": self.q, "t": self.t,
                "l": self.l.tolist()}

    def __eq__(self, other):
        return (isinstance(other, QuadraticLatencyUtility)
                and self.q == other.q and self.t == other.t
                and np.array_equal(self.l, other.l))


class LogRateComposedUtility(ConcaveUtility):
    """f(x) = sum_p s_p * log(1 + w_p) with path rates w = B x.

    ``B`` is the left inverse of a path-to-link incidence matrix, so the
    utility is evaluated on path coordinates recovered from a link-space
    allocation.  A single-row selector B picks out one facility coordinate,
    which is how elastic batch workloads are modeled.  Strictly concave in w,
    but only (non-strictly) concave in x whenever B has a nontrivial kernel.
    """

    kind = "log-rate-composed"

    def __init__(self, left_inverse, scales):
        b = np.asarray(left_inverse, dtype=float)
        if b.ndim != 2:
            raise ShapeError(f"left inverse must be a matrix, got shape {b.shape}")
        scales = np.broadcast_to(np.asarray(scales, dtype=float), (b.shape[0],)).copy()
        if np.any(scales <= 0):
            raise ParameterError("log-utility scales must be positive")
        self.left_inverse = _freeze(b)
        self.scales = _freeze(scales)
        self._bnorm2 = float(np.linalg.norm(b, 2)) ** 2

    def value(self, x):
        w = self.left_inverse @ np.asarray(x, dtype=float)
        if np.any(w <= -1.0):
            return -np.inf
        return float(np.dot(self.scales, np.log1p(w)))

    def gradient(self, x):
        w = self.left_inverse @ np.asarray(x, dtype=float)
        return self.left_inverse.T @ (self.scales / (1.0 + w))

    def curvature_bound(self):
        return float(np.max(self.scales)) * self._bnorm2

    def to_dict(self):
        return {"kind": "log-rate-composed",
                "left_inverse": self.left_inverse.tolist(),
                "scales": self.scales.tolist()}

    def __eq__(self, other):
        return (isinstance(other, LogRateComposedUtility)
                and np.array_equal(self.left_inverse, other.left_inverse)
                and np.array_equal(self.scales, other.scales))


class CustomUtility(ConcaveUtility):
    """Caller-supplied separable concave utility.

    ``grad_fn`` is required by solvers that need first-order information;
    ``curvature`` bounds the Hessian spectral norm of -f and tightens the
    step size of the numeric subproblem solvers.  Not serializable.
    """

    kind = "custom"

    def __init__(self, value_fn, grad_fn=None, curvature=None):
        self.value_fn = value_fn
        self.grad_fn = grad_fn
        self.curvature = None if curvature is None else float(curvature)

    def value(self, x):
        return float(self.value_fn(np.asarray(x, dtype=float)))

    def gradient(self, x):
        if self.grad_fn is None:
            return None
        return np.asarray(self.grad_fn(np.asarray(x, dtype=float)), dtype=float)

    def curvature_bound(self):
        return self.curvature


# ---------------------------------------------------------------------------
# Feasible sets for user allocations
# ---------------------------------------------------------------------------

class FeasibleSet:
    """Compact convex feasible set X_i, exposed through its projection map."""

    kind = "abstract"
    dim = 0

    def project(self, v):
        raise NotImplementedError

    def distance_inf(self, x):
        """Infinity-norm distance from x to the set (0 for members)."""
        x = np.asarray(x, dtype=float)
        return float(np.max(np.abs(x - self.project(x)), initial=0.0))

    def to_dict(self) -> dict:
        raise DomainError(f"feasible-set kind '{self.kind}' is not serializable")


class ScaledSimplex(FeasibleSet):
    """{x >= 0 : sum x = t}; encodes workload conservation."""

    kind = "scaled-simplex"

    def __init__(self, t, dim):
        if t <= 0:
            raise ParameterError(f"simplex total must be positive, got {t}")
        self.t = float(t)
        self.dim = int(dim)

    def project(self, v):
        return simplex_project(np.asarray(v, dtype=float), self.t)

    def to_dict(self):
        return {"kind": "scaled-simplex", "t": self.t, "dim": self.dim}

    def __eq__(self, other):
        return (isinstance(other, ScaledSimplex)
                and self.t == other.t and self.dim == other.dim)


class Box(FeasibleSet):
    """Componentwise bounds lower <= x <= upper."""

    kind = "box"

    def __init__(self, lower, upper):
        lower = _as_vector(lower, "lower bound")
        upper = _as_vector(upper, "upper bound")
        if lower.shape != upper.shape:
            raise ShapeError("box bounds must have matching shapes")
        if np.any(lower > upper):
            raise DomainError("box is empty: lower > upper somewhere")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise DomainError("box bounds must be finite (sets must be compact)")
        self.lower = _freeze(lower)
        self.upper = _freeze(upper)
        self.dim = lower.size

    def project(self, v):
        return np.clip(np.asarray(v, dtype=float), self.lower, self.upper)

    def to_dict(self):
        return {"kind": "box", "lower": self.lower.tolist(),
                "upper": self.upper.tolist()}

    def __eq__(self, other):
        return (isinstance(other, Box)
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))


class NonnegCap(FeasibleSet):
    """Nonnegative orthant with componentwise caps, 0 <= x <= cap."""

    kind = "nonneg-orthant-with-cap"

    def __init__(self, cap):
        cap = _as_vector(cap, "cap")
        if np.any(cap < 0) or not np.all(np.isfinite(cap)):
            raise DomainError("caps must be finite and nonnegative")
        self.cap = _freeze(cap)
        self.dim = cap.size

    def project(self, v):
        return np.clip(np.asarray(v, dtype=float), 0.0, self.cap)

    def to_dict(self):
        return {"kind": "nonneg-orthant-with-cap", "cap": self.cap.tolist()}

    def __eq__(self, other):
        return isinstance(other, NonnegCap) and np.array_equal(self.cap, other.cap)


class PathImage(FeasibleSet):
    """{A w : 0 <= w <= w_cap} for a 0/1 link-by-path incidence matrix A.

    The set of link-space allocations reachable from nonnegative, capped
    path rates.  Projection goes through path coordinates: recover
    w = A^{-1} v with the left inverse, clip, and map back.  That map is
    idempotent and exact on members of the set; subproblem solvers that
    need the true constrained minimizer work directly in path coordinates.
    """

    kind = "path-image"

    def __init__(self, incidence, w_cap):
        a = np.asarray(incidence, dtype=float)
        if a.ndim != 2:
            raise ShapeError(f"incidence must be a matrix, got shape {a.shape}")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise DomainError("incidence entries must be 0 or 1")
        if np.any(a.sum(axis=0) == 0):
            raise DomainError("every path must traverse at least one link")
        w_cap = np.broadcast_to(np.asarray(w_cap, dtype=float), (a.shape[1],)).copy()
        if np.any(w_cap < 0) or not np.all(np.isfinite(w_cap)):
            raise DomainError("path-rate caps must be finite and nonnegative")
        self.incidence = _freeze(a)
        self.w_cap = _freeze(w_cap)
        self.left_inverse = _freeze(left_inverse_matrix(a))
        self.dim = a.shape[0]
        self._anorm2 = float(np.linalg.norm(a, 2)) ** 2

    @property
    def n_paths(self):
        return self.incidence.shape[1]

    def project_paths(self, w):
        return np.clip(np.asarray(w, dtype=float), 0.0, self.w_cap)

    def project(self, v):
        w = self.left_inverse @ np.asarray(v, dtype=float)
        return self.incidence @ self.project_paths(w)

    def to_dict(self):
        return {"kind": "path-image", "incidence": self.incidence.tolist(),
                "w_cap": self.w_cap.tolist()}

    def __eq__(self, other):
        return (isinstance(other, PathImage)
                and np.array_equal(self.incidence, other.incidence)
                and np.array_equal(self.w_cap, other.w_cap))


class CustomProjectionSet(FeasibleSet):
    """Caller-supplied set given by its Euclidean projection. Not serializable."""

    kind = "custom"

    def __init__(self, dim, project_fn):
        self.dim = int(dim)
        self.project_fn = project_fn

    def project(self, v):
        return np.asarray(self.project_fn(np.asarray(v, dtype=float)), dtype=float)


# ---------------------------------------------------------------------------
# Convex facility costs
# ---------------------------------------------------------------------------

class ConvexCost:
    """Base class for per-facility scalar convex costs g_j."""

    kind = "abstract"

    def value(self, y: float) -> float:
        raise NotImplementedError

    def derivative(self, y: float) -> float:
        """Right derivative of g at y."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise DomainError(f"cost kind '{self.kind}' is not serializable")


class LinearCost(ConvexCost):
    kind = "linear"

    def __init__(self, slope, intercept=0.0):
        self.slope = float(slope)
        self.intercept = float(intercept)

    def value(self, y):
        return self.intercept + self.slope * y

    def derivative(self, y):
        return self.slope

    def to_dict(self):
        return {"kind": "linear", "slope": self.slope, "intercept": self.intercept}

    def __eq__(self, other):
        return (isinstance(other, LinearCost)
                and self.slope == other.slope and self.intercept == other.intercept)


class EnergyCost(ConvexCost):
    """Data-center energy cost (price_energy + price_carbon) * PUE * E(y).

    Server power E(y) = servers * p_idle + (p_peak - p_idle) * y with powers
    in watts and ``y`` in server-equivalents; prices are $/kWh and the
    decision interval defaults to one hour so the products compose.  The
    carbon price defaults to zero.  Linear in y.
    """

    kind = "energy"

    def __init__(self, price_energy, pue, servers, p_idle, p_peak,
                 price_carbon=0.0, interval_hours=1.0):
        if servers < 0:
            raise ParameterError("server count must be nonnegative")
        if not (0.0 <= p_idle <= p_peak):
            raise ParameterError("need 0 <= p_idle <= p_peak")
        if interval_hours <= 0:
            raise ParameterError("interval length must be positive")
        self.price_energy = float(price_energy)
        self.price_carbon = float(price_carbon)
        self.pue = float(pue)
        self.servers = float(servers)
        self.p_idle = float(p_idle)
        self.p_peak = float(p_peak)
        self.interval_hours = float(interval_hours)

    def server_power(self, y):
        return self.servers * self.p_idle + (self.p_peak - self.p_idle) * y

    def value(self, y):
        return ((self.price_energy + self.price_carbon) * self.pue
                * self.server_power(y) * self.interval_hours)

    @property
    def slope(self):
        return ((self.price_energy + self.price_carbon) * self.pue
                * (self.p_peak - self.p_idle) * self.interval_hours)

    @property
    def intercept(self):
        return ((self.price_energy + self.price_carbon) * self.pue
                * self.servers * self.p_idle * self.interval_hours)

    def derivative(self, y):
        return self.slope

    def to_dict(self):
        return {"kind": "energy", "price_energy": self.price_energy,
                "price_carbon": self.price_carbon, "pue": self.pue,
                "servers": self.servers, "p_idle": self.p_idle,
                "p_peak": self.p_peak, "interval_hours": self.interval_hours}

    def __eq__(self, other):
        return (isinstance(other, EnergyCost)
                and self.to_dict() == other.to_dict())


class PiecewiseLinearCost(ConvexCost):
    """Convex piecewise-linear cost with strictly increasing slopes.

    ``breakpoints`` are the ascending points where the slope changes and
    ``slopes`` has one more entry than ``breakpoints``.  The value is
    anchored at g(0) = intercept and extended with the first/last slope
    beyond the breakpoint range.
    """

    kind = "piecewise-linear"

    def __init__(self, breakpoints, slopes, intercept=0.0):
        breakpoints = _as_vector(breakpoints, "breakpoints")
        slopes = _as_vector(slopes, "slopes")
        if slopes.size != breakpoints.size + 1:
            raise ShapeError("need exactly one more slope than breakpoints")
        if breakpoints.size and np.any(np.diff(breakpoints) <= 0):
            raise DomainError("breakpoints must be strictly increasing")
        if np.any(np.diff(slopes) <= 0):
            raise DomainError("slopes must be strictly increasing across pieces")
        self.breakpoints = _freeze(breakpoints)
        self.slopes = _freeze(slopes)
        self.intercept = float(intercept)
        # cumulative value at each breakpoint, anchored at g(0) = intercept
        vals = []
        acc = self.intercept
        prev = 0.0
        for b, s in zip(self.breakpoints, self.slopes[:-1]):
            acc = acc + s * (b - prev)
            vals.append(acc)
            prev = b
        self._bp_values = np.array(vals)

    def _piece(self, y):
        return int(np.searchsorted(self.breakpoints, y, side="right"))

    def value(self, y):
        k = self._piece(y)
        if k == 0:
            return self.intercept + self.slopes[0] * y
        return self._bp_values[k - 1] + self.slopes[k] * (y - self.breakpoints[k - 1])

    def derivative(self, y):
        return float(self.slopes[self._piece(y)])

    def shifted(self, extra_slope):
        """Same cost with a linear term added to every piece."""
        return PiecewiseLinearCost(self.breakpoints, self.slopes + extra_slope,
                                   self.intercept)

    def to_dict(self):
        return {"kind": "piecewise-linear",
                "breakpoints": self.breakpoints.tolist(),
                "slopes": self.slopes.tolist(), "intercept": self.intercept}

    def __eq__(self, other):
        return (isinstance(other, PiecewiseLinearCost)
                and np.array_equal(self.breakpoints, other.breakpoints)
                and np.array_equal(self.slopes, other.slopes)
                and self.intercept == other.intercept)


class QuadraticCost(ConvexCost):
    """g(y) = a*y^2 + b*y with a > 0; the strictly convex test case."""

    kind = "strictly-convex-quadratic"

    def __init__(self, a, b=0.0):
        if a <= 0:
            raise ParameterError(f"quadratic coefficient must be positive, got {a}")
        self.a = float(a)
        self.b = float(b)

    def value(self, y):
        return self.a * y * y + self.b * y

    def derivative(self, y):
        return 2.0 * self.a * y + self.b

    def to_dict(self):
        return {"kind": "strictly-convex-quadratic", "a": self.a, "b": self.b}

    def __eq__(self, other):
        return isinstance(other, QuadraticCost) and self.a == other.a and self.b == other.b


class CustomCost(ConvexCost):
    """Caller-supplied scalar convex cost with derivative. Not serializable."""

    kind = "custom"

    def __init__(self, value_fn, deriv_fn):
        self.value_fn = value_fn
        self.deriv_fn = deriv_fn

    def value(self, y):
        return float(self.value_fn(float(y)))

    def derivative(self, y):
        return float(self.deriv_fn(float(y)))


# ---------------------------------------------------------------------------
# Specs and instance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserSpec:
    utility: ConcaveUtility
    feasible_set: FeasibleSet

    def __post_init__(self):
        probe = self.feasible_set.project(np.zeros(self.feasible_set.dim))
        if not np.isfinite(self.utility.value(probe)):
            raise DomainError("utility is not finite on the feasible set")


@dataclass(frozen=True)
class FacilitySpec:
    cost: ConvexCost
    interval: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.interval
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise DomainError("capacity interval must be finite")
        if lo > hi:
            raise DomainError(f"capacity interval is empty: [{lo}, {hi}]")
        object.__setattr__(self, "interval", (float(lo), float(hi)))
        if not (np.isfinite(self.cost.value(lo)) and np.isfinite(self.cost.value(hi))):
            raise DomainError("cost must be finite on the capacity interval")


@dataclass(frozen=True)
class ProblemInstance:
    users: tuple[UserSpec, ...]
    facilities: tuple[FacilitySpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "facilities", tuple(self.facilities))
        if not self.users:
            raise DomainError("instance needs at least one user")
        if not self.facilities:
            raise DomainError("instance needs at least one facility")
        n = len(self.facilities)
        for i, user in enumerate(self.users):
            if user.feasible_set.dim != n:
                raise ShapeError(
                    f"user {i} allocates over {user.feasible_set.dim} facilities, "
                    f"instance has {n}")

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_facilities(self):
        return len(self.facilities)

    def interval_bounds(self):
        lo = np.array([f.interval[0] for f in self.facilities])
        hi = np.array([f.interval[1] for f in self.facilities])
        return lo, hi


def evaluate_objective(inst: ProblemInstance, x) -> float:
    """Social welfare sum_i f_i(x_i) - sum_j g_j(sum_i x_ij).

    Summation runs in fixed ascending index order so repeated evaluation is
    bit-identical for a given instance.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n_users, inst.n_facilities):
        raise ShapeError(
            f"allocation must have shape {(inst.n_users, inst.n_facilities)}, "
            f"got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("allocation contains non-finite entries")
    utility = 0.0
    for i, user in enumerate(inst.users):
        utility += user.utility.value(x[i])
    loads = column_sums(x)
    cost = 0.0
    for j, fac in enumerate(inst.facilities):
        cost += fac.cost.value(float(loads[j]))
    return utility - cost


def project_feasible_y(spec: FacilitySpec, y: float) -> float:
    """Clamp a facility load to its capacity interval."""
    if not np.isfinite(y):
        raise DomainError(f"facility load must be finite, got {y}")
    lo, hi = spec.interval
    return min(max(float(y), lo), hi)


@dataclass(frozen=True)
class FeasibilityReport:
    max_x_violation: float
    max_y_violation: float
    max_coupling_violation: float
    tol: float

    @property
    def feasible(self):
        return (self.max_x_violation <= self.tol
                and self.max_y_violation <= self.tol
                and self.max_coupling_violation <= self.tol)


def check_feasibility(inst: ProblemInstance, x, y, tol: float) -> FeasibilityReport:
    """Infinity-norm violations of the three constraint families.

    Reports the largest distance of any x_i to its set, of any y_j to its
    interval, and of any coupling equation sum_i x_ij = y_j.  All three are
    at most ``tol`` exactly when (x, y) is feasible at that tolerance.
    """
    x = np.asarray(x, dtype=float)
    y = _as_vector(y, "facility loads")
    if x.shape != (inst.n_users, inst.n_facilities) or y.size != inst.n_facilities:
        raise ShapeError("allocation/load shapes inconsistent with the instance")
    x_viol = 0.0
    for i, user in enumerate(inst.users):
        x_viol = max(x_viol, user.feasible_set.distance_inf(x[i]))
    lo, hi = inst.interval_bounds()
    y_viol = float(np.max(np.maximum(lo - y, y - hi), initial=0.0))
    y_viol = max(y_viol, 0.0)
    coupling = float(np.max(np.abs(column_sums(x) - y), initial=0.0))
    return FeasibilityReport(x_viol, y_viol, coupling, float(tol))


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_UTILITY_KINDS = {}
_SET_KINDS = {}
_COST_KINDS = {}


def _register():
    _UTILITY_KINDS["zero"] = lambda d: ZeroUtility()
    _UTILITY_KINDS["quadratic-latency"] = lambda d: QuadraticLatencyUtility(
        d["q"], d["t"], d["l"])
    _UTILITY_KINDS["log-rate-composed"] = lambda d: LogRateComposedUtility(
        d["left_inverse"], d["scales"])
    _SET_KINDS["scaled-simplex"] = lambda d: ScaledSimplex(d["t"], d["dim"])
    _SET_KINDS["box"] = lambda d: Box(d["lower"], d["upper"])
    _SET_KINDS["nonneg-orthant-with-cap"] = lambda d: NonnegCap(d["cap"])
    _SET_KINDS["path-image"] = lambda d: PathImage(d["incidence"], d["w_cap"])
    _COST_KINDS["linear"] = lambda d: LinearCost(d["slope"], d.get("intercept", 0.0))
    _COST_KINDS["energy"] = lambda d: EnergyCost(
        d["price_energy"], d["pue"], d["servers"], d["p_idle"], d["p_peak"],
        d.get("price_carbon", 0.0), d.get("interval_hours", 1.0))
    _COST_KINDS["piecewise-linear"] = lambda d: PiecewiseLinearCost(
        d["breakpoints"], d["slopes"], d.get("intercept", 0.0))
    _COST_KINDS["strictly-convex-quadratic"] = lambda d: QuadraticCost(
        d["a"], d.get("b", 0.0))


_register()


def _from_dict(d, registry, what):
    try:
        kind = d["kind"]
    except (TypeError, KeyError):
        raise DomainError(f"{what} object must carry a 'kind' field") from None
    if kind not in registry:
        raise DomainError(f"unknown {what} kind '{kind}'")
    return registry[kind](d)


def instance_to_dict(inst: ProblemInstance) -> dict:
    return {
        "n": inst.n_facilities,
        "users": [{"utility": u.utility.to_dict(),
                   "feasible": u.feasible_set.to_dict()}
                  for u in inst.users],
        "facilities": [{"cost": f.cost.to_dict(),
                        "interval": [f.interval[0], f.interval[1]]}
                       for f in inst.facilities],
    }


def instance_from_dict(d: dict) -> ProblemInstance:
    users = tuple(
        UserSpec(_from_dict(u["utility"], _UTILITY_KINDS, "utility"),
                 _from_dict(u["feasible"], _SET_KINDS, "feasible set"))
        for u in d["users"])
    facilities = tuple(
        FacilitySpec(_from_dict(f["cost"], _COST_KINDS, "cost"),
                     (f["interval"][0], f["interval"][1]))
        for f in d["facilities"])
    inst = ProblemInstance(users, facilities)
    if inst.n_facilities != d.get("n", inst.n_facilities):
        raise ShapeError("'n' field disagrees with the facility list length")
    return inst


def save_instance(inst: ProblemInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1)
        fh.write("\n")


def load_instance(path) -> ProblemInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
