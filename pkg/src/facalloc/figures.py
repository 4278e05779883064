"""Render iteration traces to figure files.

Optional report path for the CLI: given one or more traces, draw the
objective, step-metric and residual series as line plots and write them as
PNG files next to the delimited output.  The CSV trace stays the canonical
artifact; figures are a convenience rendering of the same columns.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# (column, y-label, log scale)
_SERIES = (
    ("objective", "objective value ($)", False),
    ("Dk", "step metric $D^k$", True),
    ("primal_residual", "primal residual", True),
    ("coupling_residual", "coupling residual", True),
)


def render_trace_figures(traces: dict, out_dir, stem: str) -> list[str]:
    """Write one PNG per diagnostic series, overlaying all given traces.

    Parameters
    ----------
    traces : dict
        Label -> IterationTrace; labels become legend entries.
    out_dir : path-like
        Directory for the files (created if missing).
    stem : str
        Filename stem; files are named ``<stem>_<series>.png``.

    Returns
    -------
    list of str
        Paths of the files written, in series order.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for column, ylabel, logy in _SERIES:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        drew = False
        for label, trace in traces.items():
            if len(trace) == 0:
                continue
            ks = trace.column("iter")
            values = trace.column(column)
            if logy:
                mask = np.isfinite(values) & (values > 0)
                if not mask.any():
                    continue
                ax.semilogy(ks[mask], values[mask], label=label)
            else:
                mask = np.isfinite(values)
                if not mask.any():
                    continue
                ax.plot(ks[mask], values[mask], label=label)
            drew = True
        if not drew:
            plt.close(fig)
            continue
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        if len(traces) > 1:
            ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}_{column}.png")
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def render_relative_error_figure(ks, rel_errors: dict, out_dir, stem: str) -> str | None:
    """Plot per-iteration relative objective error for faulted runs."""
    os.makedirs(out_dir, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    drew = False
    for label, series in rel_errors.items():
        series = np.asarray(series, dtype=float)
        if series.size == 0:
            continue
        ax.plot(ks[:series.size], 100.0 * series, label=label)
        drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative objective error (%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}_relative_error.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
