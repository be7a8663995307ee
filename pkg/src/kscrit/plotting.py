"""Figures written next to the CSV/JSON outputs of the command-line tools."""

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


def plot_profiles(curves, path, title: str = "", flat_points=()) -> Path:
    """curves: iterable of (label, Profile)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, prof in curves:
        ax.plot(prof.grid.nodes, prof.values, label=label)
    for xf in flat_points:
        ax.axvline(xf, color="0.6", ls=":", lw=1)
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_timeseries(t, nmax, F, path, title: str = "") -> Path:
    t = np.asarray(t, dtype=float)
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
    a1.plot(t, nmax)
    a1.set_ylabel("N[u]")
    if np.nanmax(nmax) / max(np.nanmin(nmax), 1e-300) > 100:
        a1.set_yscale("log")
    a2.plot(t, F)
    a2.set_ylabel("F[u]")
    a2.set_xlabel("t")
    if title:
        a1.set_title(title)
    return _save(fig, path)


def plot_band(band, path) -> Path:
    eps = [e.eps for e in band.entries]
    Ms = [e.M_eps for e in band.entries]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(eps, Ms, "o-", label="V_eps(A+1)")
    ax.axhline(band.M, color="k", ls="--", lw=1, label="M")
    ax.set_xlabel("eps")
    ax.set_ylabel("mass")
    ax.legend()
    return _save(fig, path)


def plot_sweep(table, path) -> Path:
    colors = {"converged": "tab:green", "blew_up": "tab:red", "undecided": "tab:gray"}
    fig, ax = plt.subplots(figsize=(6, 2.5))
    for m, r in zip(table.masses, table.reports):
        M = r.m - r.m_vs_M
        ax.scatter([m / M], [0], color=colors.get(r.verdict, "k"), s=60)
        ax.annotate(r.verdict, (m / M, 0), textcoords="offset points", xytext=(0, 10),
                    ha="center", fontsize=7)
    ax.axvline(1.0, color="k", ls="--", lw=1)
    ax.set_yticks([])
    ax.set_xlabel("m / M")
    return _save(fig, path)
