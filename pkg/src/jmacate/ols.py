"""Dense least squares per treatment arm, with exact leave-one-out downdates.

Fits go through a thin QR factorisation; the inverse Gram matrix is formed
from the triangular factor because the Sherman-Morrison downdate needs it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, DowndateRankLoss, LeverageOne, RankDeficient, Underdetermined

RCOND_MIN = 1e-10
LEVERAGE_EPS = 1e-10


@dataclass(frozen=True)
class OlsFit:
    """Result of :func:`fit_ols`.

    Attributes
    ----------
    coef : ndarray, shape (p,)
    gram_inverse : ndarray, shape (p, p)
        ``(U'U)^{-1}``.
    hat_diag : ndarray, shape (n,)
        Leverages ``h_jj``.
    residuals : ndarray, shape (n,)
    rss : float
    rcond : float
        Reciprocal 2-norm condition number of the design.
    """

    coef: np.ndarray
    gram_inverse: np.ndarray
    hat_diag: np.ndarray
    residuals: np.ndarray
    rss: float
    rcond: float = 1.0

    @property
    def n_obs(self) -> int:
        return self.residuals.shape[0]

    @property
    def n_coef(self) -> int:
        return self.coef.shape[0]


def _as_design(design) -> np.ndarray:
    U = np.asarray(design, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if U.ndim != 2:
        raise DimensionMismatch(f"design must be 2-D, got shape {U.shape}")
    return U


def fit_ols(design, y) -> OlsFit:
    """Least-squares fit of ``y`` on the columns of ``design``.

    Raises
    ------
    Underdetermined
        If the design has at least as many columns as rows (the leave-one-out
        refits would not be overdetermined).
    RankDeficient
        If the reciprocal condition number of the design is below ``1e-10``.
    """
    U = _as_design(design)
    y = np.asarray(y, dtype=np.float64)
    n, p = U.shape
    if y.shape != (n,):
        raise DimensionMismatch(f"design has {n} rows but y has shape {y.shape}")
    if p < 1:
        raise DimensionMismatch("design has no columns")
    if p >= n:
        raise Underdetermined(f"{p} columns for {n} observations")
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(y))):
        raise DimensionMismatch("design and response must be finite")

    Q, R = np.linalg.qr(U, mode="reduced")
    sv = np.linalg.svd(R, compute_uv=False)
    rcond = 0.0 if sv[0] == 0.0 else float(sv[-1] / sv[0])
    if rcond < RCOND_MIN:
        raise RankDeficient(f"reciprocal condition number {rcond:.3e} below {RCOND_MIN:g}")

    coef = solve_triangular(R, Q.T @ y)
    R_inv = solve_triangular(R, np.eye(p))
    gram_inverse = R_inv @ R_inv.T
    hat_diag = np.einsum("ij,ij->i", Q, Q)
    residuals = y - U @ coef
    return OlsFit(
        coef=coef,
        gram_inverse=gram_inverse,
        hat_diag=hat_diag,
        residuals=residuals,
        rss=float(residuals @ residuals),
        rcond=rcond,
    )


def predict(fit: OlsFit, u) -> float | np.ndarray:
    """Linear predictor ``u' coef``; ``u`` may be a single basis vector or a matrix of rows."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != fit.n_coef:
        raise DimensionMismatch(f"basis has length {u.shape[-1]}, fit has {fit.n_coef} coefficients")
    out = u @ fit.coef
    return float(out) if out.ndim == 0 else out


def check_deletable(fit: OlsFit, j: int, eps: float = LEVERAGE_EPS) -> None:
    """Raise unless deleting row ``j`` leaves a well-posed fit."""
    n = fit.n_obs
    if not 0 <= j < n:
        raise IndexError(f"row {j} out of range for {n} observations")
    h = fit.hat_diag[j]
    if h >= 1.0 - eps:
        raise LeverageOne(f"leverage {h!r} of row {j} is within {eps:g} of one", row=j)
    # Deleting a row scales the smallest eigenvalue of U'U by at least (1 - h)
    # and cannot raise the largest, so this bounds the refit's rcond from below.
    if fit.rcond * np.sqrt(1.0 - h) < RCOND_MIN:
        raise DowndateRankLoss(f"deleting row {j} makes the refit numerically rank deficient", row=j)


def loo_coef(fit: OlsFit, design, y, j: int, eps: float = LEVERAGE_EPS) -> np.ndarray:
    """Coefficients of the fit with row ``j`` removed.

    Uses the rank-one downdate
    ``coef - G u_j e_j / (1 - h_jj)`` with ``G = (U'U)^{-1}``.
    """
    U = _as_design(design)
    y = np.asarray(y, dtype=np.float64)
    if U.shape != (fit.n_obs, fit.n_coef) or y.shape != (fit.n_obs,):
        raise DimensionMismatch("design/response do not match the fit")
    check_deletable(fit, j, eps)
    e_j = fit.residuals[j]
    return fit.coef - fit.gram_inverse @ U[j] * (e_j / (1.0 - fit.hat_diag[j]))
