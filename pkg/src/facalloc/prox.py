"""Exact or high-accuracy minimizers for the per-user and per-facility
subproblems, plus a brute-force grid oracle for testing.

Every subproblem here has the shape "convex function plus a quadratic
anchoring term", so minimizers are unique and the solvers can promise tight
stationarity.  Built-in kinds get closed forms where they exist; the rest go
through projected gradient (vector problems) or derivative bisection (scalar
problems).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    Box,
    ConcaveUtility,
    ConvexCost,
    CustomCost,
    DomainError,
    EnergyCost,
    FeasibleSet,
    LinearCost,
    NonnegCap,
    ParameterError,
    PathImage,
    PiecewiseLinearCost,
    QuadraticCost,
    QuadraticLatencyUtility,
    ScaledSimplex,
    UnsupportedError,
    ZeroUtility,
    simplex_project,
)

# fixed-point residual target and iteration cap for projected gradient
PG_TOL = 1e-10
PG_MAX_ITERS = 10_000

# bracket width target for derivative bisection on scalar subproblems
BISECT_TOL = 1e-12


@dataclass(frozen=True)
class ProxResult:
    """Return envelope for a subproblem solve."""
    minimizer: np.ndarray | float
    subproblem_value: float
    iterations_used: int


def project_scaled_simplex(v, t: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0 : sum x = t}.

    Parameters
    ----------
    v : array_like
        Point to project.
    t : float
        Simplex total, must be positive.

    Returns
    -------
    ndarray
        The unique closest point; its coordinates sum to ``t`` up to
        roundoff and are nonnegative.
    """
    if t <= 0:
        raise ParameterError(f"simplex total must be positive, got {t}")
    return simplex_project(np.asarray(v, dtype=float), float(t))


# ---------------------------------------------------------------------------
# Projected gradient engine
# ---------------------------------------------------------------------------

def _projected_gradient(project, grad, x0, lipschitz, hess_vec=None,
                        tol=PG_TOL, max_iters=PG_MAX_ITERS):
    """Minimize a smooth convex function over a convex set.

    Fixed step 1/L; when ``hess_vec`` is available (quadratic objectives)
    an exact line search runs along the feasible segment from the iterate
    to its projected-gradient target, never shorter than the plain step.
    Stops when the fixed-point residual ||P(x - grad/L) - x||_inf drops
    below ``tol``.

    Returns (x, iterations).
    """
    gamma = 1.0 / lipschitz
    x = np.asarray(x0, dtype=float)
    for it in range(max_iters):
        g = grad(x)
        target = project(x - gamma * g)
        d = target - x
        res = float(np.max(np.abs(d), initial=0.0))
        if res <= tol:
            return target, it + 1
        if hess_vec is not None:
            hd = hess_vec(x, d)
            curv = float(np.dot(d, hd))
            if curv > 0.0:
                # exact minimizer of the quadratic along the feasible
                # segment x + theta*d, theta in (0, 1]
                theta = min(1.0, -float(np.dot(g, d)) / curv)
                if theta <= 0.0:
                    theta = 1.0
            else:
                theta = 1.0
            x = x + theta * d
        else:
            x = target
    return x, max_iters


# ---------------------------------------------------------------------------
# Per-user subproblem
# ---------------------------------------------------------------------------

def prox_user(utility: ConcaveUtility, feasible_set: FeasibleSet,
              anchor, rho: float) -> ProxResult:
    """Minimize -f(x) + (rho/2) ||x - anchor||^2 over the feasible set.

    Parameters
    ----------
    utility : ConcaveUtility
        The user's utility f; the subproblem minimizes its negation.
    feasible_set : FeasibleSet
        Constraint set for x.
    anchor : array_like
        Center of the quadratic anchoring term.
    rho : float
        Anchoring weight, must be positive.  The objective is rho-strongly
        convex, so the minimizer is unique.

    Returns
    -------
    ProxResult
        Minimizer (in allocation space), its subproblem value, and inner
        iterations used (0 when a closed form applied).
    """
    if rho <= 0:
        raise ParameterError(f"prox weight must be positive, got {rho}")
    anchor = np.asarray(anchor, dtype=float)
    if anchor.shape != (feasible_set.dim,):
        raise DomainError(
            f"anchor has shape {anchor.shape}, set has dimension {feasible_set.dim}")

    if isinstance(utility, ZeroUtility):
        x = feasible_set.project(anchor)
        val = 0.5 * rho * float(np.dot(x - anchor, x - anchor))
        return ProxResult(x, val, 0)

    if isinstance(feasible_set, PathImage):
        return _prox_user_path_space(utility, feasible_set, anchor, rho)

    def objective(x):
        diff = x - anchor
        return -utility.value(x) + 0.5 * rho * float(np.dot(diff, diff))

    def grad(x):
        return -utility.gradient(x) + rho * (x - anchor)

    x0 = feasible_set.project(anchor)

    if isinstance(utility, QuadraticLatencyUtility):
        c = 2.0 * utility.q / utility.t
        l = utility.l

        def hess_vec(x, d):
            return c * float(np.dot(l, d)) * l + rho * d

        lip = rho + utility.curvature_bound()
        x, iters = _projected_gradient(feasible_set.project, grad, x0, lip,
                                       hess_vec=hess_vec)
        return ProxResult(x, objective(x), iters)

    if utility.gradient(x0) is None:
        raise DomainError("custom utilities need a gradient for the prox solver")
    curv = utility.curvature_bound()
    lip = rho + (curv if curv is not None else rho)
    x, iters = _projected_gradient(feasible_set.project, grad, x0, lip)
    return ProxResult(x, objective(x), iters)


def _prox_user_path_space(utility, pset: PathImage, anchor, rho):
    """Path-image prox solved in path coordinates.

    With x = A w the subproblem becomes
    minimize -f(A w) + (rho/2)||A w - anchor||^2 over 0 <= w <= cap,
    a smooth strongly convex problem with an exact box projection.
    """
    a_mat = pset.incidence

    def x_of(w):
        return a_mat @ w

    def objective(w):
        res = x_of(w) - anchor
        return -utility.value(x_of(w)) + 0.5 * rho * float(np.dot(res, res))

    def grad(w):
        gx = utility.gradient(x_of(w))
        if gx is None:
            raise DomainError("custom utilities need a gradient for the prox solver")
        return a_mat.T @ (-gx + rho * (x_of(w) - anchor))

    curv = utility.curvature_bound()
    if curv is None:
        curv = rho
    lip = (rho + curv) * pset._anorm2
    w0 = pset.project_paths(pset.left_inverse @ anchor)
    w, iters = _projected_gradient(pset.project_paths, grad, w0, lip)
    x = x_of(w)
    res = x - anchor
    val = -utility.value(x) + 0.5 * rho * float(np.dot(res, res))
    return ProxResult(x, val, iters)


def minimize_linear_tilt(utility: ConcaveUtility, feasible_set: FeasibleSet,
                         tilt, x_start, reg: float = 1e-12) -> ProxResult:
    """Minimize -f(x) + tilt^T x + reg*||x||^2 over the feasible set.

    The dual-decomposition user subproblem.  Without strict concavity the
    untilted problem can have many minimizers; the vanishing quadratic makes
    the map single-valued in the degenerate (linear) cases, where it reduces
    to projecting -tilt/(2*reg) onto the set.  The non-degenerate cases go
    through projected gradient warm-started at ``x_start`` with a
    scale-relative stopping rule: subgradient-ascent outer loops do not need
    the inner accuracy that the prox operators promise.
    """
    tilt = np.asarray(tilt, dtype=float)
    curv = utility.curvature_bound()

    if isinstance(utility, ZeroUtility) or curv == 0.0:
        x = feasible_set.project(-tilt / (2.0 * reg))
        val = (-utility.value(x) + float(np.dot(tilt, x))
               + reg * float(np.dot(x, x)))
        return ProxResult(x, val, 0)

    def objective(x):
        return (-utility.value(x) + float(np.dot(tilt, x))
                + reg * float(np.dot(x, x)))

    def grad(x):
        return -utility.gradient(x) + tilt + 2.0 * reg * x

    x0 = np.asarray(x_start, dtype=float)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(x0), initial=0.0)))

    if isinstance(feasible_set, PathImage):
        a_mat = feasible_set.incidence

        def objective_w(w):
            return objective(a_mat @ w)

        def grad_w(w):
            return a_mat.T @ grad(a_mat @ w)

        lip = ((curv if curv is not None else 1.0) + 2.0 * reg) * feasible_set._anorm2
        w0 = feasible_set.project_paths(feasible_set.left_inverse @ x0)
        w, iters = _projected_gradient(feasible_set.project_paths, grad_w, w0,
                                       lip, tol=tol, max_iters=2000)
        x = a_mat @ w
        return ProxResult(x, objective(x), iters)

    if isinstance(utility, QuadraticLatencyUtility):
        c = 2.0 * utility.q / utility.t
        l = utility.l

        def hess_vec(x, d):
            return c * float(np.dot(l, d)) * l + 2.0 * reg * d

        lip = curv + 2.0 * reg
        x, iters = _projected_gradient(feasible_set.project, grad,
                                       feasible_set.project(x0), lip,
                                       hess_vec=hess_vec, tol=tol,
                                       max_iters=2000)
        return ProxResult(x, objective(x), iters)

    if utility.gradient(x0) is None:
        raise DomainError("custom utilities need a gradient for this solver")
    lip = (curv if curv is not None else 1.0) + 2.0 * reg
    x, iters = _projected_gradient(feasible_set.project, grad,
                                   feasible_set.project(x0), lip,
                                   tol=tol, max_iters=2000)
    return ProxResult(x, objective(x), iters)


# ---------------------------------------------------------------------------
# Per-facility subproblem
# ---------------------------------------------------------------------------

def prox_facility(cost: ConvexCost, interval, anchor: float,
                  weight: float) -> ProxResult:
    """Minimize g(y) + (weight/2) (y - anchor)^2 over [lo, hi].

    Closed forms for linear, energy, quadratic and piecewise-linear costs;
    derivative bisection for custom costs.  The objective is strictly convex
    in one variable, so clamping the unconstrained stationary point to the
    interval yields the constrained minimizer.
    """
    if weight <= 0:
        raise ParameterError(f"prox weight must be positive, got {weight}")
    lo, hi = float(interval[0]), float(interval[1])
    if lo > hi:
        raise DomainError(f"empty interval [{lo}, {hi}]")
    anchor = float(anchor)

    iterations = 0
    if isinstance(cost, (LinearCost, EnergyCost)):
        y = anchor - cost.slope / weight
    elif isinstance(cost, QuadraticCost):
        y = (weight * anchor - cost.b) / (2.0 * cost.a + weight)
    elif isinstance(cost, PiecewiseLinearCost):
        y = _pwl_stationary_point(cost, anchor, weight)
    elif isinstance(cost, CustomCost):
        y, iterations = _bisect_stationary(cost, lo, hi, anchor, weight)
        val = cost.value(y) + 0.5 * weight * (y - anchor) ** 2
        return ProxResult(y, val, iterations)
    else:
        raise DomainError(f"unsupported cost kind '{cost.kind}'")

    y = min(max(y, lo), hi)
    val = cost.value(y) + 0.5 * weight * (y - anchor) ** 2
    return ProxResult(y, val, iterations)


def _pwl_stationary_point(cost: PiecewiseLinearCost, anchor, weight):
    """Unconstrained minimizer of a piecewise-linear cost plus a quadratic.

    The derivative s(y) + weight*(y - anchor) is increasing, so scan the
    pieces in order: the first piece whose interior stationary point does
    not overshoot its left edge contains the minimizer (or the minimizer
    sits at that edge, where the slope jump brackets zero).
    """
    edges = cost.breakpoints
    for k, s in enumerate(cost.slopes):
        left = -np.inf if k == 0 else edges[k - 1]
        right = np.inf if k == len(edges) else edges[k]
        y = anchor - s / weight
        if y < left:
            return float(left)
        if y <= right:
            return float(y)
    return float(edges[-1])  # unreachable for valid data; appeases the checker


def _bisect_stationary(cost, lo, hi, anchor, weight):
    """Root of g'(y) + weight*(y - anchor) on [lo, hi] by bisection."""
    def phi(y):
        return cost.derivative(y) + weight * (y - anchor)

    if phi(lo) >= 0.0:
        return lo, 0
    if phi(hi) <= 0.0:
        return hi, 0
    a, b = lo, hi
    iterations = 0
    while b - a > BISECT_TOL and iterations < 200:
        mid = 0.5 * (a + b)
        if phi(mid) > 0.0:
            b = mid
        else:
            a = mid
        iterations += 1
    return 0.5 * (a + b), iterations


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def brute_force_minimize(objective, domain, step: float):
    """Exhaustive grid search over a low-dimensional bounded set.

    Independent oracle for checking the solvers above: no gradients, no
    structure, just enumeration.  Supports dimensions up to 3.

    Parameters
    ----------
    objective : callable
        Function of a scalar (intervals) or a vector (boxes/simplexes).
    domain : tuple or FeasibleSet
        Either ``(lo, hi)`` for a scalar interval, or a ``ScaledSimplex``,
        ``Box`` or ``NonnegCap`` set of dimension <= 3.
    step : float
        Grid spacing; the returned minimizer is within one grid cell of the
        true one for objectives whose curvature is moderate on that scale.

    Returns
    -------
    (minimizer, value)
        Grid point with the smallest objective; ties break toward the
        lexicographically first point visited.
    """
    if step <= 0:
        raise ParameterError("grid step must be positive")

    if isinstance(domain, tuple):
        lo, hi = float(domain[0]), float(domain[1])
        grid = np.arange(lo, hi + 0.5 * step, step)
        grid[-1] = min(grid[-1], hi)
        best_y, best_v = None, np.inf
        for y in grid:
            v = objective(float(y))
            if v < best_v:
                best_y, best_v = float(y), v
        return best_y, best_v

    if isinstance(domain, ScaledSimplex):
        if domain.dim > 3:
            raise UnsupportedError("grid oracle supports dimension <= 3")
        return _grid_simplex(objective, domain.t, domain.dim, step)

    if isinstance(domain, (Box, NonnegCap)):
        if isinstance(domain, NonnegCap):
            lower = np.zeros(domain.dim)
            upper = domain.cap
        else:
            lower, upper = domain.lower, domain.upper
        if lower.size > 3:
            raise UnsupportedError("grid oracle supports dimension <= 3")
        axes = [np.arange(lo, hi + 0.5 * step, step)
                for lo, hi in zip(lower, upper)]
        for ax, hi in zip(axes, upper):
            ax[-1] = min(ax[-1], hi)
        best_x, best_v = None, np.inf
        for point in _cartesian(axes):
            v = objective(point)
            if v < best_v:
                best_x, best_v = point.copy(), v
        return best_x, best_v

    raise UnsupportedError(f"grid oracle does not handle {type(domain).__name__}")


def _cartesian(axes):
    if len(axes) == 1:
        for a in axes[0]:
            yield np.array([a])
    elif len(axes) == 2:
        for a in axes[0]:
            for b in axes[1]:
                yield np.array([a, b])
    else:
        for a in axes[0]:
            for b in axes[1]:
                for c in axes[2]:
                    yield np.array([a, b, c])


def _grid_simplex(objective, total, dim, step):
    best_x, best_v = None, np.inf
    if dim == 1:
        x = np.array([total])
        return x, objective(x)
    if dim == 2:
        for a in np.arange(0.0, total + 0.5 * step, step):
            a = min(a, total)
            x = np.array([a, total - a])
            v = objective(x)
            if v < best_v:
                best_x, best_v = x, v
        return best_x, best_v
    for a in np.arange(0.0, total + 0.5 * step, step):
        a = min(a, total)
        for b in np.arange(0.0, total - a + 0.5 * step, step):
            b = min(b, total - a)
            x = np.array([a, b, total - a - b])
            v = objective(x)
            if v < best_v:
                best_x, best_v = x, v
    return best_x, best_v
