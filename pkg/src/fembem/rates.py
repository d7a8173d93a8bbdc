"""Least-squares convergence-rate fits on run logs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adapt import RunLog

__all__ = ["RateReport", "fit_rate", "default_window"]


@dataclass(frozen=True)
class RateReport:
    """Fitted decay ``quantity ~ N**(-alpha)`` over rows ``window[0]:window[1]``."""

    quantity: str
    alpha: float
    window: tuple
    residual: float
    n_points: int


def default_window(strategy: str) -> int:
    """Rows used for rate fits: the last 6 (uniform) or last 12 (adaptive)."""
    return 6 if strategy == "uniform" else 12


def fit_rate(log: RunLog, quantity: str, window: Optional[int] = None) -> RateReport:
    """Fit the slope of ``log(quantity)`` against ``log(n_triangles)``.

    Parameters
    ----------
    log : RunLog
    quantity : column name such as ``"err_omega"`` or ``"est_omega"``
    window : number of trailing rows; defaults to :func:`default_window`
        for the strategy recorded in ``log`` (adaptive if unknown)

    Returns
    -------
    RateReport
        ``alpha`` is positive for decaying quantities. ``residual`` is the
        root-mean-square deviation of the fit in log space.
    """
    N = log.column("n_triangles")
    q = log.column(quantity)
    n = len(N)
    if window is None:
        window = default_window(log.strategy or "adaptive")
    if window < 4:
        raise ValueError("a rate fit needs a window of at least 4 levels")
    start = max(0, n - window)
    N, q = N[start:], q[start:]
    ok = np.isfinite(q) & (q > 0)
    if ok.sum() < 4:
        raise ValueError(f"only {int(ok.sum())} usable values of {quantity!r} in the fit window")
    x, y = np.log(N[ok]), np.log(q[ok])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return RateReport(quantity, float(-coef[0]), (start, n), float(np.sqrt(np.mean(res**2))), int(ok.sum()))
