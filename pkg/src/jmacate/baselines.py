"""Competing estimators: AIC/BIC selection, smoothed AIC/BIC weights, TECV selection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .jma import ArmFits, CandidateSpec, Dataset, JackknifeSystem, WeightVector, fit_arms


class ZeroResidual(RuntimeWarning):
    """An arm fits exactly; its Gaussian log-likelihood is unbounded."""


def _arm_loglik(rss: float, n: int) -> float:
    return -0.5 * n * (math.log(2.0 * math.pi * rss / n) + 1.0)


def information_scores(dataset: Dataset, spec: CandidateSpec, fits: ArmFits | None = None) -> tuple[float, float]:
    """Two-arm Gaussian AIC and BIC, summed over the independently fitted arms.

    Each arm counts its coefficients plus one error variance. A perfect fit
    in either arm yields ``(-inf, -inf)`` and a :class:`ZeroResidual` warning.
    """
    fits = fit_arms(dataset, spec) if fits is None else fits
    k = spec.n_basis + 1
    aic = bic = 0.0
    for f, U in ((fits.fit_t, fits.design_t), (fits.fit_c, fits.design_c)):
        n_a = f.n_obs
        fitted = U @ f.coef
        # exact up to roundoff relative to the arm's response scale
        if f.rss <= 1e-20 * max(float(fitted @ fitted) + f.rss, 1e-300):
            warnings.warn(f"candidate {spec.id} fits an arm exactly", ZeroResidual, stacklevel=2)
            return -math.inf, -math.inf
        ll = _arm_loglik(f.rss, n_a)
        aic += -2.0 * ll + 2.0 * k
        bic += -2.0 * ll + math.log(n_a) * k
    return aic, bic


def smoothed_weights(scores) -> WeightVector:
    """``w_k ∝ exp(-(score_k - min score) / 2)``.

    ``+inf`` scores get weight zero; if any score is ``-inf`` the weight is
    spread evenly over those models.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1 or np.any(np.isnan(s)):
        raise ValueError("scores must be a non-empty vector without NaN")
    if np.any(s == -np.inf):
        w = (s == -np.inf).astype(float)
    elif np.all(s == np.inf):
        w = np.ones_like(s)
    else:
        w = np.exp(-0.5 * (s - s.min()))
    return WeightVector(w / w.sum())


def tecv_scores(sys: JackknifeSystem) -> np.ndarray:
    """Jackknife criterion evaluated at each vertex of the simplex."""
    r = sys.delta_tilde - sys.y_tilde[:, None]
    return np.einsum("mk,mk->k", r, r)


def tecv_select(sys: JackknifeSystem) -> int:
    return int(np.argmin(tecv_scores(sys)))


@dataclass(frozen=True)
class ScoreTable:
    aic: np.ndarray
    bic: np.ndarray
    tecv: np.ndarray

    @property
    def aic_choice(self) -> int:
        return int(np.argmin(self.aic))

    @property
    def bic_choice(self) -> int:
        return int(np.argmin(self.bic))

    @property
    def tecv_choice(self) -> int:
        return int(np.argmin(self.tecv))


def score_table(dataset: Dataset, specs: Sequence[CandidateSpec], sys: JackknifeSystem,
                fits: Sequence[ArmFits] | None = None) -> ScoreTable:
    fits = [fit_arms(dataset, s) for s in specs] if fits is None else list(fits)
    scores = np.array([information_scores(dataset, s, f) for s, f in zip(specs, fits)]).reshape(-1, 2)
    return ScoreTable(aic=scores[:, 0], bic=scores[:, 1], tecv=tecv_scores(sys))


def baseline_weights(table: ScoreTable) -> dict[str, WeightVector]:
    """Weight vectors of every baseline, keyed by method name."""
    K = table.aic.size
    return {
        "AIC": WeightVector.vertex(table.aic_choice, K),
        "BIC": WeightVector.vertex(table.bic_choice, K),
        "SAIC": smoothed_weights(table.aic),
        "SBIC": smoothed_weights(table.bic),
        "TECV": WeightVector.vertex(table.tecv_choice, K),
    }
