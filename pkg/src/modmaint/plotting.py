"""Figures written next to the CSV outputs (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_reliability(t_hours, R, path, mean_hours=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t_hours, R, lw=1.5)
    if mean_hours is not None:
        ax.axvline(mean_hours, ls="--", c="grey", lw=1, label=f"mean = {mean_hours:,.0f} h")
        ax.legend()
    ax.set_xlabel("time (h)")
    ax.set_ylabel("R(t)")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_cost_curves(curves: dict, path, title: str | None = None) -> Path:
    """``curves`` maps a scenario name to (tau_hours, objective, se)."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for name, (tau, obj, se) in curves.items():
        tau, obj, se = map(np.asarray, (tau, obj, se))
        line, = ax.plot(tau, obj, lw=1.2, label=f"scenario {name}")
        if np.any(se > 0):
            ax.fill_between(tau, obj - 2 * se, obj + 2 * se, color=line.get_color(), alpha=0.2)
        k = int(np.flatnonzero(obj == obj.min())[-1])
        ax.plot(tau[k], obj[k], "o", color=line.get_color())
    ax.set_xlabel("inspection interval tau (h)")
    ax.set_ylabel("expected total cost (mu)")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def plot_optimum_summary(c_down, tau_star_hours, total_cost, path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.8))
    a1.plot(c_down, total_cost, "o-")
    a1.set_xscale("log")
    a1.set_xlabel("C_down (mu/h)")
    a1.set_ylabel("optimal total cost (mu)")
    a2.plot(c_down, tau_star_hours, "s-")
    a2.set_xscale("log")
    a2.set_xlabel("C_down (mu/h)")
    a2.set_ylabel("optimal interval (h)")
    for a in (a1, a2):
        a.grid(alpha=0.3, which="both")
    return _save(fig, path)
