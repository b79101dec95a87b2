"""Jackknife model averaging of candidate linear CATE estimators.

Each candidate model is fit separately in the treated and control arms; its
CATE estimate is the difference of the two linear predictors. Weights on the
probability simplex are chosen by minimising the squared distance between
leave-pair-out CATE predictions at matched treated units and the matched
outcome differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ols
from .errors import DimensionMismatch, IndexOutOfRange, JmaError
from .matching import MatchedPairSet, adaptive_match, default_side_length, fit_cube_transform
from .qp import solve_simplex_qp


@dataclass(frozen=True)
class Dataset:
    """Observational sample: covariates ``X`` (n, p), treatment flags, response."""

    X: np.ndarray
    T: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        T = np.asarray(self.T).astype(bool)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or T.shape != (X.shape[0],) or y.shape != (X.shape[0],):
            raise DimensionMismatch(f"inconsistent shapes X={X.shape}, T={T.shape}, y={y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.T)

    @property
    def control_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.T)

    def with_response(self, y) -> "Dataset":
        return Dataset(self.X, self.T, y)


@dataclass(frozen=True, order=True)
class Term:
    """Product of raw covariates; ``(0,)`` is ``u1``, ``(0, 0)`` is ``u1**2``, ``(0, 1)`` is ``u1*u2``."""

    factors: tuple[int, ...]

    def __post_init__(self):
        f = tuple(sorted(int(i) for i in self.factors))
        if not 1 <= len(f) <= 2 or min(f) < 0:
            raise ValueError(f"a term is one covariate, a square, or a pairwise product; got {self.factors}")
        object.__setattr__(self, "factors", f)

    @classmethod
    def power(cls, var: int, pow: int = 1) -> "Term":
        if pow not in (1, 2):
            raise ValueError(f"exponent must be 1 or 2, got {pow}")
        return cls((var,) * pow)

    @classmethod
    def interaction(cls, i: int, j: int) -> "Term":
        if i == j:
            raise ValueError("an interaction needs two distinct covariates; use Term.power for squares")
        return cls((i, j))

    def label(self) -> str:
        a = self.factors
        if len(a) == 1:
            return f"u{a[0] + 1}"
        if a[0] == a[1]:
            return f"u{a[0] + 1}^2"
        return f"u{a[0] + 1}*u{a[1] + 1}"


@dataclass(frozen=True)
class CandidateSpec:
    """A candidate linear model: basis terms used identically in both arms."""

    id: int
    terms: tuple[Term, ...]
    intercept: bool = True

    def __post_init__(self):
        terms = tuple(t if isinstance(t, Term) else Term(tuple(t)) for t in self.terms)
        if len(set(terms)) != len(terms):
            raise ValueError(f"candidate {self.id} has duplicate terms")
        if not terms and not self.intercept:
            raise ValueError(f"candidate {self.id} has an empty basis")
        object.__setattr__(self, "terms", terms)

    @property
    def n_basis(self) -> int:
        return len(self.terms) + int(self.intercept)

    @property
    def raw_covariates(self) -> tuple[int, ...]:
        return tuple(sorted({i for t in self.terms for i in t.factors}))

    def label(self) -> str:
        parts = (["1"] if self.intercept else []) + [t.label() for t in self.terms]
        return "{" + ", ".join(parts) + "}"


def spec(id: int, *terms, intercept: bool = True) -> CandidateSpec:
    """Shorthand: ``spec(0, 0, 1, (0, 0))`` is ``{1, u1, u2, u1^2}``."""
    return CandidateSpec(id, tuple(Term((t,) if isinstance(t, int) else tuple(t)) for t in terms), intercept)


def expand_basis(spec: CandidateSpec, u_raw) -> np.ndarray:
    """Basis values of ``spec`` at a raw covariate vector, or row-wise for a matrix."""
    U = np.asarray(u_raw, dtype=np.float64)
    single = U.ndim == 1
    if single:
        U = U[None, :]
    p = U.shape[1]
    cols = [np.ones(U.shape[0])] if spec.intercept else []
    for t in spec.terms:
        if max(t.factors) >= p:
            raise IndexOutOfRange(f"term {t.label()} needs covariate {max(t.factors) + 1}, only {p} present")
        col = U[:, t.factors[0]].copy()
        for i in t.factors[1:]:
            col = col * U[:, i]
        cols.append(col)
    B = np.column_stack(cols)
    return B[0] if single else B


@dataclass(frozen=True)
class ArmFits:
    """Both arms' least-squares fits of one candidate on the full sample."""

    spec: CandidateSpec
    design_t: np.ndarray
    design_c: np.ndarray
    fit_t: ols.OlsFit
    fit_c: ols.OlsFit

    @property
    def contrast(self) -> np.ndarray:
        """``beta - gamma``; the CATE at basis ``b`` is ``b @ contrast``."""
        return self.fit_t.coef - self.fit_c.coef

    def delta(self, points) -> np.ndarray:
        return expand_basis(self.spec, points) @ self.contrast


def fit_arms(dataset: Dataset, spec: CandidateSpec) -> ArmFits:
    t_idx, c_idx = dataset.treated_idx, dataset.control_idx
    U_t = expand_basis(spec, dataset.X[t_idx])
    U_c = expand_basis(spec, dataset.X[c_idx])
    try:
        fit_t = ols.fit_ols(U_t, dataset.y[t_idx])
        fit_c = ols.fit_ols(U_c, dataset.y[c_idx])
    except JmaError as exc:
        raise type(exc)(f"candidate {spec.id} {spec.label()}: {exc}", model=spec.id) from exc
    return ArmFits(spec, U_t, U_c, fit_t, fit_c)


def fit_candidates(dataset: Dataset, specs: Sequence[CandidateSpec]) -> list[ArmFits]:
    return [fit_arms(dataset, s) for s in specs]


def delta_hat(dataset: Dataset, spec: CandidateSpec, u_raw, fits: ArmFits | None = None):
    """Single-model CATE estimate ``u' beta_hat - u' gamma_hat``."""
    fits = fit_arms(dataset, spec) if fits is None else fits
    out = fits.delta(u_raw)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class JackknifeSystem:
    """Leave-pair-out CATE predictions (M, K) and matched differences (M,)."""

    delta_tilde: np.ndarray
    y_tilde: np.ndarray
    pair_set: MatchedPairSet

    def __post_init__(self):
        if self.delta_tilde.ndim != 2 or self.delta_tilde.shape[0] != self.y_tilde.shape[0]:
            raise DimensionMismatch("jackknife matrix and pseudo-responses disagree in length")
        if not (np.all(np.isfinite(self.delta_tilde)) and np.all(np.isfinite(self.y_tilde))):
            raise JmaError("jackknife system has non-finite entries")

    @property
    def M(self) -> int:
        return self.delta_tilde.shape[0]

    @property
    def K(self) -> int:
        return self.delta_tilde.shape[1]


def build_jackknife_system(dataset: Dataset, specs: Sequence[CandidateSpec], pairs: MatchedPairSet,
                           fits: Sequence[ArmFits] | None = None) -> JackknifeSystem:
    """Entry ``(m, k)``: model ``k``'s CATE at the ``m``-th treated unit, refit without the pair.

    The treated member is dropped from the treated-arm fit and the control
    member from the control-arm fit; both refits come from rank-one
    downdates of the full-sample fits.
    """
    fits = fit_candidates(dataset, specs) if fits is None else list(fits)
    pos = np.full(dataset.n, -1, dtype=np.int64)
    pos[dataset.treated_idx] = np.arange(dataset.treated_idx.size)
    pos[dataset.control_idx] = np.arange(dataset.control_idx.size)
    jt, jc = pos[pairs.treated], pos[pairs.control]
    if np.any(jt < 0) or np.any(~dataset.T[pairs.treated]) or np.any(dataset.T[pairs.control]):
        raise DimensionMismatch("matched pairs do not align with the dataset's treatment arms")

    D = np.empty((pairs.M, len(fits)))
    for k, f in enumerate(fits):
        for m in range(pairs.M):
            for fit, j in ((f.fit_t, jt[m]), (f.fit_c, jc[m])):
                try:
                    ols.check_deletable(fit, int(j))
                except JmaError as exc:
                    raise type(exc)(f"pair {m}, candidate {f.spec.id}: {exc}", pair=m, model=f.spec.id) from exc
        ft, fc = f.fit_t, f.fit_c
        # treated member deleted, predicted at itself: y_j - e_j / (1 - h_jj)
        pred_t = f.design_t[jt] @ ft.coef - ft.hat_diag[jt] * ft.residuals[jt] / (1.0 - ft.hat_diag[jt])
        # control member deleted, predicted at the treated member's covariates
        x_at = f.design_t[jt]
        cross = np.einsum("ij,jk,ik->i", x_at, fc.gram_inverse, f.design_c[jc])
        pred_c = x_at @ fc.coef - cross * fc.residuals[jc] / (1.0 - fc.hat_diag[jc])
        D[:, k] = pred_t - pred_c
    y_tilde = dataset.y[pairs.treated] - dataset.y[pairs.control]
    return JackknifeSystem(D, y_tilde, pairs)


@dataclass(frozen=True)
class WeightVector:
    """Simplex weights with solver diagnostics."""

    w: np.ndarray
    converged: bool = True
    kkt_residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise DimensionMismatch("weights must be a non-empty vector")
        if np.any(w < 0.0) or np.any(w > 1.0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights {w} are not on the probability simplex")
        object.__setattr__(self, "w", w)

    @classmethod
    def vertex(cls, k: int, K: int) -> "WeightVector":
        w = np.zeros(K)
        w[k] = 1.0
        return cls(w)

    def __len__(self):
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)


def cv_value(w, sys: JackknifeSystem) -> float:
    """Jackknife criterion ``||delta_tilde @ w - y_tilde||^2``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (sys.K,):
        raise DimensionMismatch(f"{w.size} weights for {sys.K} candidate models")
    r = sys.delta_tilde @ w - sys.y_tilde
    return float(r @ r)


def solve_weights(sys: JackknifeSystem, tol: float = 1e-10, max_iter: int = 100_000) -> WeightVector:
    res = solve_simplex_qp(sys.delta_tilde, sys.y_tilde, tol=tol, max_iter=max_iter)
    return WeightVector(res.w, res.converged, res.kkt_residual, res.iterations)


@dataclass(frozen=True)
class CateEstimate:
    values: np.ndarray
    components: np.ndarray
    weights: WeightVector


def jma_estimate(dataset: Dataset, specs: Sequence[CandidateSpec], w, eval_points,
                 fits: Sequence[ArmFits] | None = None) -> CateEstimate:
    """Averaged CATE ``sum_k w_k * delta_hat_k(u)`` from full-sample fits."""
    fits = fit_candidates(dataset, specs) if fits is None else list(fits)
    wv = w if isinstance(w, WeightVector) else WeightVector(w)
    if len(wv) != len(fits):
        raise DimensionMismatch(f"{len(wv)} weights for {len(fits)} candidate models")
    P = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
    comps = np.column_stack([f.delta(P) for f in fits])
    return CateEstimate(comps @ wv.w, comps, wv)


def matching_dims(specs: Sequence[CandidateSpec], p: int) -> tuple[int, ...]:
    """Raw covariates used by any candidate (all covariates if none are)."""
    dims = sorted({i for s in specs for i in s.raw_covariates})
    return tuple(dims) if dims else tuple(range(p))


@dataclass
class JmaFit:
    """Everything produced by one run of :func:`fit_jma`."""

    specs: list[CandidateSpec]
    fits: list[ArmFits]
    pairs: MatchedPairSet
    system: JackknifeSystem
    weights: WeightVector
    cv: float
    match_dims: tuple[int, ...]
    info: dict = field(default_factory=dict)

    def predict(self, points) -> CateEstimate:
        P = np.atleast_2d(np.asarray(points, dtype=np.float64))
        comps = np.column_stack([f.delta(P) for f in self.fits])
        return CateEstimate(comps @ self.weights.w, comps, self.weights)


def fit_jma(dataset: Dataset, specs: Sequence[CandidateSpec], rng: np.random.Generator, *,
            side_length: float | None = None, match_dims: Sequence[int] | None = None,
            min_pairs: int | None = None, tol: float = 1e-10, max_iter: int = 100_000,
            fits: Sequence[ArmFits] | None = None) -> JmaFit:
    """Full pipeline: fit candidates, match, build the jackknife system, solve for weights.

    ``min_pairs`` defaults to the number of candidates; the side length
    doubles from its default until that many pairs form.
    """
    specs = list(specs)
    fits = fit_candidates(dataset, specs) if fits is None else list(fits)
    dims = matching_dims(specs, dataset.p) if match_dims is None else tuple(match_dims)
    transform = fit_cube_transform(dataset.X, dims)
    Z = transform.apply(dataset.X)
    h0 = default_side_length(dataset.n, len(dims)) if side_length is None else float(side_length)
    pairs = adaptive_match(Z, dataset.T, h0, len(specs) if min_pairs is None else min_pairs, rng)
    system = build_jackknife_system(dataset, specs, pairs, fits)
    weights = solve_weights(system, tol=tol, max_iter=max_iter)
    return JmaFit(specs, fits, pairs, system, weights, cv_value(weights.w, system), dims,
                  info={"h0": h0})
