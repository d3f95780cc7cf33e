"""Weighted log-log rate fitting shared by the convergence and regularity
studies."""

from __future__ import annotations

import numpy as np

__all__ = ["DegenerateFit", "fit_rate"]


class DegenerateFit(ValueError):
    """The (h, error) data cannot support a log-log regression."""


def fit_rate(h, errors, stderrs=None):
    """Weighted least squares slope of log(error) against log(h).

    Weights follow from the delta method: var(log e) ~ (se / e)^2.  Levels
    with zero reported spread fall back to the smallest positive relative
    spread seen, so exact levels do not blow up the weighting.  Returns
    (slope, slope_se, intercept) with slope_se from the weighted normal
    equations.
    """
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.ndim != 1 or h.shape != e.shape:
        raise DegenerateFit("h and errors must be 1d arrays of equal length")
    if h.size < 3:
        raise DegenerateFit(f"need at least 3 levels, got {h.size}")
    if np.unique(h).size != h.size:
        raise DegenerateFit("level spacings must be distinct")
    if np.any(h <= 0):
        raise DegenerateFit("level spacings must be positive")
    if np.any(e <= 0):
        raise DegenerateFit(
            "errors must be positive for a log fit; an exact level cannot be "
            "regressed"
        )
    if stderrs is None:
        rel = np.ones_like(e)
    else:
        se = np.asarray(stderrs, dtype=float)
        rel = np.where((se > 0) & (e > 0), se / e, np.nan)
        if np.all(np.isnan(rel)):
            rel = np.ones_like(e)
        else:
            floor = np.nanmin(rel[rel > 0]) if np.any(rel > 0) else 1.0
            rel = np.where(np.isnan(rel) | (rel <= 0), floor, rel)
    w = 1.0 / rel**2
    x = np.log(h)
    y = np.log(e)
    X = np.stack([x, np.ones_like(x)], axis=1)
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    slope, intercept = float(beta[0]), float(beta[1])
    slope_se = float(np.sqrt(max(cov[0, 0], 0.0)))
    return slope, slope_se, intercept
