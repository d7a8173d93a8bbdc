"""Static log-log convergence plots."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = ["plot_convergence"]


def plot_convergence(logs: Sequence, path, quantities: Iterable[str] = ("err_omega", "est_omega"),
                     slopes: Iterable[float] = (1 / 3, 1 / 2), title: str = "") -> None:
    """Write an SVG with one curve per (log, quantity) and dashed reference slopes.

    ``logs`` holds :class:`~fembem.adapt.RunLog` objects; their ``method``
    and ``strategy`` fields label the curves.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    nmin, nmax, qmax = np.inf, 0.0, 0.0
    for log in logs:
        N = log.column("n_triangles")
        for q in quantities:
            v = log.column(q)
            ok = np.isfinite(v) & (v > 0)
            if not ok.any():
                continue
            label = f"{log.method} {log.strategy} {q}".strip()
            ax.loglog(N[ok], v[ok], marker="o", markersize=3, label=label)
            nmin, nmax = min(nmin, N[ok].min()), max(nmax, N[ok].max())
            qmax = max(qmax, v[ok].max())
    if nmax > nmin:
        ref = np.array([nmin, nmax])
        for s in slopes:
            ax.loglog(ref, 0.5 * qmax * (ref / nmin) ** (-s), "k--", linewidth=0.8)
            ax.annotate(f"O(N^-{s:.2g})", (ref[1], 0.5 * qmax * (ref[1] / nmin) ** (-s)), fontsize=7)
    ax.set_xlabel("number of elements N")
    ax.set_ylabel("error / estimator")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", linewidth=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
