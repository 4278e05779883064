"""Convergence diagnostics: step metric, Lyapunov distance, residuals,
trace recording, and empirical rate fits.

The quantities are defined through the auxiliary copies of the consensus
reformulation: v^k = u^k/N and z_i^k = x_i^k + v^{k-1} - v^k.  At k = 0 the
missing v^{-1} is seeded so that sum_i z_i^0 = y^0 (equivalently z^0 = x^0
whenever y^0 already equals the initial loads); that choice makes the step
metric of the very first iteration consistent with the reformulation's own
trajectory, so its monotone decrease holds from the start.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import DomainError, ParameterError

TRACE_COLUMNS = ("iter", "objective", "Dk", "Vk", "primal_residual",
                 "coupling_residual", "comm_rounds", "wall_ms")


def _require_scaled(state):
    if getattr(state, "dual_kind", "scaled") != "scaled":
        raise DomainError(
            "auxiliary-copy diagnostics need a scaled-dual state; "
            "dual-decomposition runs report the coupling residual instead")


def compute_dk(state_k, state_k1) -> float:
    """Squared (z, v) step between consecutive scaled-dual states.

    D^k = sum_i(||z_i^{k+1} - z_i^k||^2 + ||v^{k+1} - v^k||^2); along the
    x-first ADMM this sequence is non-increasing and bounded by V^0/(k+1).
    """
    _require_scaled(state_k)
    _require_scaled(state_k1)
    dz = state_k1.z - state_k.z
    dv = state_k1.v - state_k.v
    n_users = state_k.x.shape[0]
    return float(np.sum(dz * dz)) + n_users * float(np.dot(dv, dv))


def compute_vk(state, reference) -> float:
    """Lyapunov distance of a state to a converged primal-dual pair.

    V^k = sum_i(||z_i^k - z_i*||^2 + ||v^k - v*||^2); it contracts to zero
    along convergent runs and supplies the numerator of the sublinear bound
    D^k <= V^0/(k+1).
    """
    _require_scaled(state)
    dz = state.z - reference.z_star
    dv = state.v - reference.v_star
    n_users = state.x.shape[0]
    return float(np.sum(dz * dz)) + n_users * float(np.dot(dv, dv))


def compute_primal_residual(state) -> float:
    """Violation of the copy constraints, sum_i ||x_i^k - z_i^k||^2.

    By the definition of z this equals N ||v^k - v^{k-1}||^2; both forms
    are computed and must agree to 1e-12 relative, up to the cancellation
    floor of forming z = x + (v_prev - v) in floating point (the small
    difference loses low bits against a large x, so the direct form carries
    noise on the order of eps * ||x|| per entry).
    """
    _require_scaled(state)
    diff = state.x - state.z
    direct = float(np.sum(diff * diff))
    dv = state.v - state.v_prev
    n_users, n = state.x.shape
    via_dual = n_users * float(np.dot(dv, dv))
    eps = np.finfo(float).eps
    scale = float(np.max(np.abs(state.x), initial=0.0))
    cancellation = 8.0 * eps * scale * np.sqrt(n_users * n * max(direct, 0.0))
    if abs(direct - via_dual) > 1e-12 * max(1.0, abs(direct)) + cancellation:
        raise AssertionError(
            f"primal-residual forms disagree: {direct!r} vs {via_dual!r}")
    return direct


# ---------------------------------------------------------------------------
# Iteration traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    k: int
    objective: float
    dk: float
    vk: float | None
    primal_residual: float
    coupling_residual: float
    comm_rounds: int
    wall_ms: float


class IterationTrace:
    """Per-iteration diagnostics rows with CSV round-tripping.

    The CSV layout is iter, objective, Dk, Vk, primal_residual,
    coupling_residual, comm_rounds, wall_ms with a mandatory header; a
    missing Vk serializes as an empty field.  Timing is nondeterministic, so
    wall_ms is also left empty unless explicitly requested: default output
    is byte-identical across reruns.
    """

    def __init__(self, rows=()):
        self.rows: list[TraceRow] = []
        for row in rows:
            self.append(row)

    def append(self, row: TraceRow):
        if self.rows and row.k <= self.rows[-1].k:
            raise DomainError("trace iterations must be strictly increasing")
        if row.dk < 0 or row.primal_residual < 0:
            raise DomainError("step metric and residuals cannot be negative")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name):
        if name == "Vk":
            return np.array([np.nan if r.vk is None else r.vk for r in self.rows])
        attr = {"iter": "k", "objective": "objective", "Dk": "dk",
                "primal_residual": "primal_residual",
                "coupling_residual": "coupling_residual",
                "comm_rounds": "comm_rounds", "wall_ms": "wall_ms"}[name]
        return np.array([getattr(r, attr) for r in self.rows])

    def to_csv_text(self, include_timing: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.rows:
            writer.writerow([
                r.k, repr(r.objective), repr(r.dk),
                "" if r.vk is None else repr(r.vk),
                repr(r.primal_residual), repr(r.coupling_residual),
                r.comm_rounds,
                repr(r.wall_ms) if include_timing else "",
            ])
        return buf.getvalue()

    def to_csv(self, path, include_timing: bool = False):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text(include_timing=include_timing))

    @classmethod
    def from_csv(cls, path) -> "IterationTrace":
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != TRACE_COLUMNS:
                raise DomainError(f"unexpected trace header {header}")
            for rec in reader:
                trace.append(TraceRow(
                    k=int(rec[0]), objective=float(rec[1]), dk=float(rec[2]),
                    vk=None if rec[3] == "" else float(rec[3]),
                    primal_residual=float(rec[4]),
                    coupling_residual=float(rec[5]),
                    comm_rounds=int(rec[6]),
                    wall_ms=0.0 if rec[7] == "" else float(rec[7])))
        return trace


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------

SUBLINEAR = "sublinear"
GEOMETRIC = "geometric"


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of a decay model to a positive series.

    ``sublinear`` fits value = c / (k+1)^p on log-log coordinates (constants
    c and p); ``geometric`` fits value = c * a^-k on semi-log coordinates
    (constants c and a, decay claims need a > 1).  ``r_squared`` is computed
    in the transformed coordinates.
    """
    model: str
    window: tuple[int, int]
    constants: dict
    r_squared: float


def fit_rate(series, window, model: str) -> RateFit:
    """Fit a decay model over a window of iterations.

    Parameters
    ----------
    series : array_like or IterationTrace-compatible
        Positive values indexed by iteration; an object with a
        ``column`` method is read through its Vk column.
    window : (k0, k1)
        Inclusive iteration range to fit; needs at least 10 positive rows.
    model : {"sublinear", "geometric"}
    """
    if model not in (SUBLINEAR, GEOMETRIC):
        raise ParameterError(f"unknown rate model '{model}'")
    if hasattr(series, "column"):
        values = series.column("Vk")
    else:
        values = np.asarray(series, dtype=float)
    k0, k1 = int(window[0]), int(window[1])
    if not 0 <= k0 <= k1 < values.size:
        raise ParameterError(f"window {window} outside the series range")
    ks = np.arange(k0, k1 + 1)
    vals = values[k0:k1 + 1]
    keep = np.isfinite(vals)
    ks, vals = ks[keep], vals[keep]
    if vals.size < 10:
        raise DomainError("rate fit needs at least 10 rows in the window")
    if np.any(vals <= 0):
        raise DomainError("rate fit needs strictly positive values")

    logs = np.log(vals)
    if model == SUBLINEAR:
        abscissa = np.log(ks + 1.0)
    else:
        abscissa = ks.astype(float)
    slope, intercept = np.polyfit(abscissa, logs, 1)
    fitted = slope * abscissa + intercept
    ss_res = float(np.sum((logs - fitted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    if model == SUBLINEAR:
        constants = {"c": float(np.exp(intercept)), "p": float(-slope)}
    else:
        constants = {"c": float(np.exp(intercept)), "a": float(np.exp(-slope))}
    return RateFit(model=model, window=(k0, k1), constants=constants,
                   r_squared=float(r_squared))
