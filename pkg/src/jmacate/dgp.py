"""Simulation designs, signal calibration, and risk metrics.

Both Monte Carlo examples share one data-generating process: four
correlated Gaussian covariates, a fair-coin treatment, quadratic arm means
scaled by ``c`` and covariate-dependent Gaussian errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .errors import CalibrationFailed, DimensionMismatch
from .jma import CandidateSpec, Dataset, WeightVector, spec
from .qp import solve_simplex_qp

N_COVARIATES = 4
CALIBRATION_SEED = 20_240_517


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    rho: float = 0.0
    design: int = 1
    r2: float = 0.5
    c: float | None = None
    seed: int = 0
    n_eval: int = 10_000
    reps: int = 100

    def __post_init__(self):
        if not 0.0 < self.r2 < 1.0:
            raise ValueError(f"r2 must lie in (0, 1), got {self.r2}")
        if self.n < 20:
            raise ValueError(f"n must be at least 20, got {self.n}")
        if self.n_eval < 1:
            raise ValueError("n_eval must be positive")
        if self.design not in (1, 2):
            raise ValueError(f"design must be 1 or 2, got {self.design}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")

    def resolved(self, n_mc: int = 1_000_000, seed: int = CALIBRATION_SEED) -> "SimConfig":
        """Copy with ``c`` filled in by calibration when unset."""
        if self.c is not None:
            return self
        return replace(self, c=calibrate_c(self.r2, self.rho, self.design, n_mc=n_mc, seed=seed))


def f_treated(U, c: float) -> np.ndarray:
    U = np.atleast_2d(U)
    u1, u2 = U[:, 0], U[:, 1]
    return c * (0.5 * u1**2 + 0.5 * u2 + 0.5 * u1 + 0.5 * u2**2)


def f_control(U, c: float) -> np.ndarray:
    U = np.atleast_2d(U)
    return c * (0.5 * U[:, 0] ** 2 + 0.5 * U[:, 1])


@dataclass(frozen=True)
class TrueEffect:
    """``Delta(u) = c * (0.5 u1 + 0.5 u2^2)``, the gap between the arm means."""

    c: float

    def __call__(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        return self.c * (0.5 * U[:, 0] + 0.5 * U[:, 1] ** 2)


def covariance(rho: float, p: int = N_COVARIATES) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def draw_covariates(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    L = np.linalg.cholesky(covariance(rho))
    return rng.standard_normal((n, N_COVARIATES)) @ L.T


def error_sd(U, design: int) -> tuple[np.ndarray, np.ndarray]:
    """Conditional error standard deviations ``(treated, control)``."""
    U = np.atleast_2d(U)
    if design == 1:
        s = 3.0 * np.abs(U[:, 1])
        return s, s
    if design == 2:
        return 4.0 * np.abs(U[:, 1]), 2.0 * np.abs(U[:, 0])
    raise ValueError(f"unknown error design {design}")


def _draw(n: int, rho: float, design: int, rng: np.random.Generator):
    U = draw_covariates(n, rho, rng)
    T = rng.random(n) < 0.5
    sd_t, sd_c = error_sd(U, design)
    noise = rng.standard_normal(n) * np.where(T, sd_t, sd_c)
    return U, T, noise


@dataclass(frozen=True)
class SimDraw:
    dataset: Dataset
    truth: np.ndarray
    eval_points: np.ndarray
    eval_truth: np.ndarray
    c: float


def generate_example1(cfg: SimConfig, rng: np.random.Generator) -> SimDraw:
    """Sample of size ``cfg.n`` plus ``cfg.n_eval`` fresh evaluation points.

    ``cfg.c`` must be set (see :meth:`SimConfig.resolved`).
    """
    if cfg.c is None:
        raise ValueError("signal scale c is unset; calibrate it first")
    U, T, noise = _draw(cfg.n, cfg.rho, cfg.design, rng)
    y = np.where(T, f_treated(U, cfg.c), f_control(U, cfg.c)) + noise
    P = draw_covariates(cfg.n_eval, cfg.rho, rng)
    delta = TrueEffect(cfg.c)
    return SimDraw(Dataset(U, T, y), delta(U), P, delta(P), cfg.c)


# Example 2 differs only in the candidate set.
generate_example2 = generate_example1


def _r2_parts(n_mc: int, rho: float, design: int, rng: np.random.Generator):
    U, T, noise = _draw(n_mc, rho, design, rng)
    signal = np.where(T, f_treated(U, 1.0), f_control(U, 1.0))
    return signal, noise


def r2_at(c: float, signal: np.ndarray, noise: np.ndarray) -> float:
    """Share of response variance not due to the error term."""
    var_y = np.var(c * signal + noise)
    return float((var_y - np.var(noise)) / var_y)


def empirical_r2(c: float, rho: float, design: int, n_mc: int, rng: np.random.Generator) -> float:
    signal, noise = _r2_parts(n_mc, rho, design, rng)
    return r2_at(c, signal, noise)


@lru_cache(maxsize=256)
def calibrate_c(target_r2: float, rho: float, design: int, n_mc: int = 1_000_000,
                tol: float = 5e-3, seed: int = CALIBRATION_SEED) -> float:
    """Signal scale ``c`` giving the requested R^2, by bisection on a fixed Monte Carlo sample."""
    if not 0.0 < target_r2 < 1.0:
        raise ValueError(f"target R^2 must lie in (0, 1), got {target_r2}")
    signal, noise = _r2_parts(n_mc, rho, design, np.random.default_rng(seed))
    lo, hi = 0.0, 1.0
    for _ in range(64):
        if r2_at(hi, signal, noise) > target_r2:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise CalibrationFailed(f"no bracket for R^2 = {target_r2}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if r2_at(mid, signal, noise) < target_r2:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    c = 0.5 * (lo + hi)
    if abs(r2_at(c, signal, noise) - target_r2) > tol:
        raise CalibrationFailed(f"bisection ended {abs(r2_at(c, signal, noise) - target_r2):.2e} from target")
    return c


def ase(estimates, truth) -> float:
    e = np.asarray(estimates, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if e.shape != t.shape or e.ndim != 1 or e.size < 1:
        raise DimensionMismatch(f"estimates {e.shape} and truth {t.shape} must be equal-length vectors")
    return float(np.mean((e - t) ** 2))


@dataclass(frozen=True)
class OracleResult:
    weights: WeightVector
    ase: float
    normalizer_zero: bool


def oracle_weights(per_model_estimates, truth, tol: float = 1e-10) -> OracleResult:
    """Simplex weights minimising the realised squared error against the truth.

    Not computable in practice; its ASE normalises reported risks.
    """
    E = np.asarray(per_model_estimates, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if E.ndim != 2 or t.shape != (E.shape[0],):
        raise DimensionMismatch(f"estimates {E.shape} and truth {t.shape} are incompatible")
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(t))):
        raise ValueError("oracle inputs must be finite")
    res = solve_simplex_qp(E, t, tol=tol)
    w = WeightVector(res.w, res.converged, res.kkt_residual, res.iterations)
    risk = ase(E @ w.w, t)
    zero = risk <= 1e-12 * max(1.0, float(np.mean(t**2)))
    return OracleResult(w, risk, zero)


def default_candidates(example: int) -> list[CandidateSpec]:
    """Candidate sets for the two Monte Carlo examples.

    Example 1: four linear-term models, none containing the quadratic truth.
    Example 2: the first model spans both arm means exactly; the rest do not.
    """
    if example == 1:
        return [spec(0, 0), spec(1, 1), spec(2, 0, 1), spec(3, 0, 1, 2, 3)]
    if example == 2:
        return [spec(0, 0, 1, (0, 0), (1, 1)), spec(1, 0), spec(2, 1, 2), spec(3, 2, 3)]
    raise ValueError(f"unknown example {example}")


def generate_nswd_like(rng: np.random.Generator, n_treated: int = 297, n_control: int = 425):
    """Synthetic stand-in with the shape of the job-training sample.

    Covariates: square root of pre-period income, age, years of education,
    married flag. Response: change in square-root income. Returns
    ``(Dataset, column names)``.
    """
    n = n_treated + n_control
    T = np.zeros(n, dtype=bool)
    T[rng.permutation(n)[:n_treated]] = True
    age = np.clip(np.round(rng.gamma(9.0, 2.8, n) + 5.0), 17, 55)
    educ = np.clip(np.round(rng.normal(10.2, 1.8, n)), 3, 16)
    married = (rng.random(n) < 0.16).astype(float)
    zero_inc = rng.random(n) < 0.4
    sqrt_re75 = np.where(zero_inc, 0.0, np.sqrt(rng.gamma(1.2, 2400.0, n)))
    base = 18.0 + 0.9 * (educ - 10) + 0.25 * (age - 25) - 0.35 * sqrt_re75 + 4.0 * married
    effect = 6.0 + 0.8 * (educ - 10) - 0.05 * sqrt_re75
    sd = 12.0 + 0.15 * sqrt_re75
    y = base + T * effect + rng.normal(0.0, 1.0, n) * sd
    X = np.column_stack([sqrt_re75, age, educ, married])
    return Dataset(X, T, y), ["sqrt_re75", "age", "educ", "married"]
