"""Least squares over the probability simplex.

Minimises ``||D w - y||^2`` subject to ``w >= 0, sum(w) = 1`` with an
accelerated projected-gradient method (function-value restarts). Whenever
the iterate's support changes, and periodically otherwise, a short primal
active-set run is started from the current iterate; it is accepted once it
passes the KKT check, which gives machine-precision answers without
waiting out the tail of the first-order method.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

ACTIVE_EPS = 1e-8


class MaxIterationsExceeded(RuntimeWarning):
    pass


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0, sum(w) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    k = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, k + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    s = w.sum()
    return w / s if s != 1.0 else w


@dataclass(frozen=True)
class SimplexQPResult:
    w: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool


def _objective(A, b, c0, w) -> float:
    return float(w @ A @ w - 2.0 * (b @ w) + c0)


def kkt_residual(A, b, w, scale: float | None = None) -> float:
    """Largest gap between an active coordinate's gradient and the minimal gradient.

    At a simplex-constrained minimiser all coordinates carrying weight share
    the smallest gradient entry. Returned relative to ``scale``.
    """
    g = 2.0 * (A @ w - b)
    active = w > ACTIVE_EPS
    gap = float(np.max(g[active] - g.min())) if active.any() else 0.0
    return gap / (_scale(A, b) if scale is None else scale)


def _scale(A, b) -> float:
    return max(2.0 * float(np.max(np.abs(A))), 2.0 * float(np.max(np.abs(b))), 1e-300)


def _face_minimiser(A, b, S):
    """Minimiser of the objective on the affine face ``{w_S free, sum = 1, w_rest = 0}``."""
    s = S.size
    K = np.zeros((s + 1, s + 1))
    K[:s, :s] = 2.0 * A[np.ix_(S, S)]
    K[:s, s] = 1.0
    K[s, :s] = 1.0
    rhs = np.concatenate([2.0 * b[S], [1.0]])
    return np.linalg.lstsq(K, rhs, rcond=None)[0][:s]


def _active_set(A, b, x, scale, tol, max_steps):
    """Primal active-set iterations from the feasible point ``x``.

    Returns a KKT-certified minimiser, or ``None`` if ``max_steps`` run out.
    """
    x = x.copy()
    for _ in range(max_steps):
        S = np.flatnonzero(x > 0.0)
        p = _face_minimiser(A, b, S)
        xs = x[S]
        if np.all(p >= 0.0):
            x[:] = 0.0
            x[S] = p
            x /= x.sum()
            g = 2.0 * (A @ x - b)
            lam = float(np.mean(g[S]))
            outside = np.setdiff1d(np.arange(x.size), S)
            if outside.size == 0 or g[outside].min() >= lam - tol * scale:
                if np.max(np.abs(g[S] - lam)) <= tol * scale:
                    return x
                return None
            # free the constraint whose multiplier is most negative
            k = outside[np.argmin(g[outside])]
            # a tiny positive weight enters k into the working face
            x[k] = 1e-300
            x /= x.sum()
            continue
        # ratio test: walk toward p until the first weight hits zero
        shrinking = p < xs
        ratios = xs[shrinking] / (xs[shrinking] - p[shrinking])
        alpha = min(1.0, float(ratios.min()))
        new = xs + alpha * (p - xs)
        new[np.flatnonzero(shrinking)[np.argmin(ratios)]] = 0.0
        new = np.maximum(new, 0.0)
        x[:] = 0.0
        x[S] = new / new.sum()
    return None


def solve_simplex_qp(D=None, y=None, *, gram=None, tol: float = 1e-10, max_iter: int = 100_000,
                     polish_every: int = 20) -> SimplexQPResult:
    """Minimise ``||D w - y||^2`` over the simplex.

    Either pass ``D`` (M x K) and ``y`` (M,), or ``gram=(A, b, c0)`` with
    ``A = D'D``, ``b = D'y`` and ``c0 = y'y``.
    """
    if gram is None:
        D = np.asarray(D, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if D.ndim != 2 or y.shape != (D.shape[0],):
            raise DimensionMismatch(f"D has shape {D.shape}, y has shape {y.shape}")
        A, b, c0 = D.T @ D, D.T @ y, float(y @ y)
    else:
        A, b, c0 = (np.asarray(gram[0], float), np.asarray(gram[1], float), float(gram[2]))
    K = A.shape[0]
    if K < 1:
        raise DimensionMismatch("need at least one column")
    if K == 1:
        w = np.ones(1)
        return SimplexQPResult(w, _objective(A, b, c0, w), 0.0, 0, True)

    scale = _scale(A, b)
    L = 2.0 * float(np.linalg.eigvalsh(A)[-1])
    if L <= 0.0:
        w = np.full(K, 1.0 / K)
        return SimplexQPResult(w, _objective(A, b, c0, w), 0.0, 0, True)

    x = np.full(K, 1.0 / K)
    fx = _objective(A, b, c0, x)
    yv = x.copy()
    t = 1.0
    last_support = None
    it = 0
    for it in range(1, max_iter + 1):
        x_new = project_simplex(yv - 2.0 * (A @ yv - b) / L)
        f_new = _objective(A, b, c0, x_new)
        if f_new > fx:
            # momentum overshot: restart from the last accepted point
            t = 1.0
            yv = x.copy()
            x_new = project_simplex(x - 2.0 * (A @ x - b) / L)
            f_new = _objective(A, b, c0, x_new)
            if f_new > fx:
                # no descent left at working precision
                x_new, f_new = x, fx
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            yv = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x, fx = x_new, f_new

        grad_map = L * (x - project_simplex(x - 2.0 * (A @ x - b) / L))
        if np.max(np.abs(grad_map)) <= tol * scale:
            break
        support = x > 0.0
        if it % polish_every == 0 or (last_support is not None and not np.array_equal(support, last_support)):
            # KKT on the face certifies the global minimum of this convex problem
            cand = _active_set(A, b, x, scale, tol, max_steps=4 * K + 10)
            if cand is not None:
                x, fx = cand, _objective(A, b, c0, cand)
                break
        last_support = support
    else:
        res = kkt_residual(A, b, x, scale)
        if res > tol:
            warnings.warn(f"simplex QP stopped after {max_iter} iterations (KKT residual {res:.2e})",
                          MaxIterationsExceeded, stacklevel=2)
            return SimplexQPResult(x, fx, res, max_iter, False)
    return SimplexQPResult(x, fx, kkt_residual(A, b, x, scale), it, True)
