"""Deterministic SVG plots: fixed hash salt, no date metadata, sorted inputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

KINDS = ("driver-traces", "variance-ramp", "histogram", "lattice-curve")


class PlotError(ValueError):
    pass


def _figure():
    fig = Figure(figsize=(6, 4))
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "sle-ising-lab", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def variance_ramp_data(drivers: dict, n: int = 40):
    """Cross-sectional variance of the drivers on a grid up to the shortest
    horizon, and the least-squares slope of Var = s t."""
    if len(drivers) < 2:
        return np.zeros(0), np.zeros(0), float("nan")
    T = min(float(p.t[-1]) for p in drivers.values())
    if T <= 0:
        return np.zeros(0), np.zeros(0), float("nan")
    grid = np.linspace(0, T, n + 1)[1:]
    vals = np.array([[p.value_at(t) for t in grid] for _, p in sorted(drivers.items())])
    var = vals.var(axis=0, ddof=1)
    return grid, var, float(grid @ var / (grid @ grid))


def driver_traces(drivers: dict, path):
    fig, ax = _figure()
    for rid, p in sorted(drivers.items()):
        ax.plot(p.t, p.xi, lw=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("xi")
    return _save(fig, path)


def variance_ramp(drivers: dict, path, kappa: float = 3.0):
    fig, ax = _figure()
    grid, var, slope = variance_ramp_data(drivers)
    if grid.size:
        ax.plot(grid, var, "o", ms=3, label=f"Var xi_t, LSQ slope {slope:.3f}")
        ax.plot(grid, kappa * grid, "-", lw=1, label=f"{kappa:g} t")
        ax.legend(loc="upper left")
    ax.set_xlabel("t")
    ax.set_ylabel("Var xi_t")
    return _save(fig, path)


def histogram(drivers: dict, path, t: float | None = None, bins: int = 30):
    """Marginal of xi at time t (default: each path's last value)."""
    fig, ax = _figure()
    vals = [p.value_at(t) if t is not None else float(p.xi[-1]) for _, p in sorted(drivers.items())
            if t is None or p.t[-1] >= t]
    if vals:
        ax.hist(vals, bins=bins)
    ax.set_xlabel("xi" if t is None else f"xi at t = {t:g}")
    ax.set_ylabel("count")
    return _save(fig, path)


def lattice_curve(curves: list, path, faces=None):
    """Polylines of lattice interfaces; the domain's faces are drawn as a light backdrop."""
    fig, ax = _figure()
    if faces:
        f = np.asarray(sorted(tuple(c) for c in faces), dtype=float)
        ax.scatter(f[:, 0] + 0.5, f[:, 1] + 0.5, s=1, c="0.85", marker="s")
    for c in sorted(curves, key=lambda c: c["id"]):
        pts = np.asarray(c["points"], dtype=float)
        if pts.size:
            ax.plot(pts[:, 0], pts[:, 1], lw=0.8)
    ax.set_aspect("equal")
    return _save(fig, path)


def plot(inputs, kind: str, path, **kw):
    if kind not in KINDS:
        raise PlotError(f"unknown plot kind {kind!r}")
    if kind == "lattice-curve":
        return lattice_curve(inputs, path, **kw)
    fn = {"driver-traces": driver_traces, "variance-ramp": variance_ramp, "histogram": histogram}[kind]
    return fn(inputs, path, **kw)
