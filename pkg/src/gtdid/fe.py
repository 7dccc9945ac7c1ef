"""Weighted two-way (unit + period) fixed-effects least squares.

Two solvers are provided. ``"direct"`` absorbs the unit effects and solves
the reduced ``T x T`` normal equations for the period effects exactly;
``"map"`` runs alternating weighted demeaning (the method of alternating
projections) until the largest parameter update falls below ``tol``. Both
return effects normalized so that the first period effect is zero.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedDesign


def is_connected(unit: np.ndarray, period: np.ndarray, n_units: int, n_periods: int) -> bool:
    """Whether the bipartite unit-period incidence graph spanned by the given
    cells connects every unit and every period."""
    if unit.size == 0:
        return False
    if np.unique(unit).size != n_units or np.unique(period).size != n_periods:
        return False
    adj = sp.coo_matrix(
        (np.ones(unit.size), (unit, n_units + period)), shape=(n_units + n_periods,) * 2
    )
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def _direct(y, unit, period, w, n_units, n_periods):
    Wm = sp.csr_matrix((w, (unit, period)), shape=(n_units, n_periods))
    Wi = np.asarray(Wm.sum(axis=1)).ravel()
    Wt = np.asarray(Wm.sum(axis=0)).ravel()
    wy = (w[:, None] * y) if y.ndim == 2 else (w * y)[:, None]
    k = wy.shape[1]
    # unit-level weighted sums of y, (N, k)
    Sy = np.zeros((n_units, k))
    np.add.at(Sy, unit, wy)
    ybar = Sy / Wi[:, None]
    # b_t = sum_i w_it (y_it - ybar_i)
    b = np.zeros((n_periods, k))
    np.add.at(b, period, wy - w[:, None] * ybar[unit])
    A = np.diag(Wt) - (Wm.T @ sp.diags(1.0 / Wi) @ Wm).toarray()
    lam = np.zeros((n_periods, k))
    lam[1:] = np.linalg.solve(A[1:, 1:], b[1:])
    alpha = ybar - (Wm @ lam) / Wi[:, None]
    return alpha, lam


def _map(y, unit, period, w, n_units, n_periods, tol, max_iter):
    y2 = y if y.ndim == 2 else y[:, None]
    k = y2.shape[1]
    Wi = np.bincount(unit, weights=w, minlength=n_units)
    Wt = np.bincount(period, weights=w, minlength=n_periods)
    alpha = np.zeros((n_units, k))
    lam = np.zeros((n_periods, k))
    for _ in range(max_iter):
        new_alpha = np.column_stack(
            [np.bincount(unit, weights=w * (y2[:, j] - lam[period, j]), minlength=n_units) for j in range(k)]
        ) / Wi[:, None]
        new_lam = np.column_stack(
            [np.bincount(period, weights=w * (y2[:, j] - new_alpha[unit, j]), minlength=n_periods) for j in range(k)]
        ) / Wt[:, None]
        delta = max(np.max(np.abs(new_alpha - alpha)), np.max(np.abs(new_lam - lam)))
        alpha, lam = new_alpha, new_lam
        if delta < tol:
            break
    else:
        raise RuntimeError(f"alternating projections did not converge in {max_iter} iterations")
    shift = lam[0].copy()
    return alpha + shift, lam - shift


def fit_two_way(
    y: np.ndarray,
    unit: np.ndarray,
    period: np.ndarray,
    w: np.ndarray | None = None,
    *,
    method: str = "direct",
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Fit ``y_it = alpha_i + lambda_t + e_it`` by weighted least squares.

    Parameters
    ----------
    y : ndarray, shape (m,) or (m, k)
        Outcome(s), one row per cell.
    unit, period : ndarray of int, shape (m,)
        Dense 0-based codes. Every code in ``range(max + 1)`` must appear.
    w : ndarray, shape (m,), optional
        Positive cell weights.
    method : {"direct", "map"}

    Returns
    -------
    alpha, lam : ndarray
        Unit and period effects with ``lam[0] == 0``, shaped like ``y``'s
        trailing dimension.
    """
    y = np.asarray(y, dtype=float)
    unit = np.asarray(unit, dtype=np.int64)
    period = np.asarray(period, dtype=np.int64)
    w = np.ones(unit.size) if w is None else np.asarray(w, dtype=float)
    n_units, n_periods = int(unit.max()) + 1, int(period.max()) + 1
    if not is_connected(unit, period, n_units, n_periods):
        raise DisconnectedDesign("unit and period effects are not all identified by the fitted cells")
    if method == "direct":
        alpha, lam = _direct(y, unit, period, w, n_units, n_periods)
    elif method == "map":
        alpha, lam = _map(y, unit, period, w, n_units, n_periods, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    if y.ndim == 1:
        return alpha[:, 0], lam[:, 0]
    return alpha, lam


def residualize(y, unit, period, w=None, **kwargs) -> np.ndarray:
    """Residuals of ``y`` after weighted projection on unit and period dummies."""
    alpha, lam = fit_two_way(y, unit, period, w, **kwargs)
    return np.asarray(y, dtype=float) - alpha[unit] - lam[period]
