"""Monte Carlo studies, guided simulations and one-shot estimation.

Every replication draws its own generator from
``SeedSequence([master_seed, cell, rep, attempt])`` so results do not depend
on scheduling. Output tables are sorted before they are written.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Sequence

import numpy as np

from .baselines import ZeroResidual, baseline_weights, score_table
from .dgp import CALIBRATION_SEED, SimConfig, ase, calibrate_c, default_candidates, generate_example1, oracle_weights
from .errors import ConfigInvalid, JmaError
from .fileio import parse_candidates
from .jma import CandidateSpec, Dataset, fit_arms, fit_candidates, fit_jma

logger = logging.getLogger(__name__)

METHODS = ("JMA", "AIC", "BIC", "SAIC", "SBIC", "TECV")
MAX_ATTEMPTS = 5
EPS_NUM = 1e-6


class ReplicationFailed(JmaError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    """Grid of simulation settings; list-valued fields are crossed."""

    example: int = 1
    n: tuple[int, ...] = (200,)
    r2: tuple[float, ...] = (0.5,)
    rho: tuple[float, ...] = (0.0,)
    design: tuple[int, ...] = (1,)
    reps: int = 100
    n_eval: int = 10_000
    seed: int = 0
    c: float | None = None
    n_mc: int = 1_000_000
    calibration_seed: int = CALIBRATION_SEED
    side_length: float | None = None
    match_dims: tuple[int, ...] | None = None
    min_pairs: int | None = None
    n_correct: int = 1
    candidates: tuple | None = None

    _GRID = ("n", "r2", "rho", "design")

    @classmethod
    def from_mapping(cls, obj: dict, **overrides) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(unknown)}")
        data = {**obj, **{k: v for k, v in overrides.items() if v is not None}}
        for key in cls._GRID + ("match_dims",):
            v = data.get(key)
            if v is not None and not isinstance(v, (list, tuple)):
                data[key] = (v,)
            elif v is not None:
                data[key] = tuple(v)
        if data.get("candidates") is not None:
            data["candidates"] = _freeze(data["candidates"])
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def bad(msg):
            raise ConfigInvalid(msg)

        if self.example not in (1, 2):
            bad(f"example must be 1 or 2, got {self.example}")
        if self.reps < 1 or self.n_eval < 1 or self.n_mc < 1000:
            bad("reps and n_eval must be positive and n_mc at least 1000")
        if self.n_correct < 0:
            bad("n_correct must be non-negative")
        if self.side_length is not None and not 0.0 < self.side_length <= 1.0:
            bad("side_length must lie in (0, 1]")
        for cell in self.cells():
            try:
                SimConfig(n=cell[0], r2=cell[1], rho=cell[2], design=cell[3], c=self.c, n_eval=self.n_eval)
            except (ValueError, TypeError) as exc:
                bad(f"grid cell {cell}: {exc}")
        if not all(isinstance(v, int) for v in self.n + self.design):
            bad("n and design entries must be integers")
        specs = self.candidate_specs()
        if self.n_correct > len(specs):
            bad(f"n_correct = {self.n_correct} exceeds {len(specs)} candidates")

    def cells(self) -> list[tuple]:
        return list(itertools.product(self.n, self.r2, self.rho, self.design))

    def candidate_specs(self) -> list[CandidateSpec]:
        if self.candidates is None:
            return default_candidates(self.example)
        return parse_candidates(_thaw(self.candidates))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        if self.candidates is not None:
            d["candidates"] = _thaw(self.candidates)
        return d


def _freeze(obj):
    if isinstance(obj, dict):
        return ("__dict__",) + tuple(sorted((k, _freeze(v)) for k, v in obj.items()))
    if isinstance(obj, (list, tuple)):
        return tuple(_freeze(v) for v in obj)
    return obj


def _thaw(obj):
    if isinstance(obj, tuple) and obj[:1] == ("__dict__",):
        return {k: _thaw(v) for k, v in obj[1:]}
    if isinstance(obj, tuple):
        return [_thaw(v) for v in obj]
    return obj


@dataclass
class Replication:
    """Outcome of one simulated data set."""

    cell: tuple
    rep: int
    seed: list[int]
    attempts: int
    c: float
    ase: dict[str, float]
    weights: dict[str, np.ndarray]
    normalizer: float
    normalizer_zero: bool
    M: int
    h: float
    skipped_cells: int
    cv_jma: float
    cv_tecv: float
    w_delta: float


def evaluate_methods(dataset: Dataset, specs: Sequence[CandidateSpec], points: np.ndarray,
                     truth: np.ndarray, rng: np.random.Generator, *, side_length=None,
                     match_dims=None, min_pairs=None) -> dict[str, Any]:
    """Fit JMA and every baseline on ``dataset`` and score them at ``points``."""
    fits = fit_candidates(dataset, specs)
    jf = fit_jma(dataset, specs, rng, side_length=side_length, match_dims=match_dims,
                 min_pairs=min_pairs, fits=fits)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroResidual)
        table = score_table(dataset, specs, jf.system, fits)
    weights = {"JMA": jf.weights.w, **{k: v.w for k, v in baseline_weights(table).items()}}
    comps = np.column_stack([f.delta(points) for f in fits])
    oracle = oracle_weights(comps, truth)
    weights["ORACLE"] = oracle.weights.w
    risks = {m: ase(comps @ weights[m], truth) for m in METHODS}
    for k in range(len(specs)):
        risks[f"model{k + 1}"] = ase(comps[:, k], truth)
    return {
        "ase": risks,
        "weights": weights,
        "normalizer": oracle.ase,
        "normalizer_zero": oracle.normalizer_zero,
        "M": jf.pairs.M,
        "h": jf.pairs.h,
        "skipped_cells": jf.pairs.skipped_cells,
        "cv_jma": jf.cv,
        "cv_tecv": float(table.tecv.min()),
    }


def _replication_rng(seed: int, cell: int, rep: int, attempt: int) -> tuple[list[int], np.random.Generator]:
    key = [int(seed), cell, rep, attempt]
    return key, np.random.default_rng(np.random.SeedSequence(key))


def _with_retries(run, seed: int, cell_idx: int, rep: int, context: str):
    last = None
    for attempt in range(MAX_ATTEMPTS):
        key, rng = _replication_rng(seed, cell_idx, rep, attempt)
        try:
            return key, attempt + 1, run(rng)
        except JmaError as exc:
            logger.info("%s rep %d attempt %d failed: %s", context, rep, attempt, exc)
            last = exc
    raise ReplicationFailed(f"{context}, replication {rep}: {MAX_ATTEMPTS} attempts failed; last error: {last}")


def run_replication(cfg: StudyConfig, cell_idx: int, rep: int) -> Replication:
    n, r2, rho, design = cfg.cells()[cell_idx]
    sim = SimConfig(n=n, r2=r2, rho=rho, design=design, c=cfg.c, n_eval=cfg.n_eval, seed=cfg.seed)
    c = sim.c if sim.c is not None else calibrate_c(r2, rho, design, n_mc=cfg.n_mc, seed=cfg.calibration_seed)
    sim = SimConfig(n=n, r2=r2, rho=rho, design=design, c=c, n_eval=cfg.n_eval, seed=cfg.seed)
    specs = cfg.candidate_specs()

    def run(rng):
        draw = generate_example1(sim, rng)
        return evaluate_methods(draw.dataset, specs, draw.eval_points, draw.eval_truth, rng,
                                side_length=cfg.side_length, match_dims=cfg.match_dims,
                                min_pairs=cfg.min_pairs)

    key, attempts, out = _with_retries(run, cfg.seed, cell_idx, rep, f"cell {(n, r2, rho, design)}")
    w_delta = float(out["weights"]["JMA"][: cfg.n_correct].sum()) if cfg.n_correct else math.nan
    return Replication(cell=(n, r2, rho, design), rep=rep, seed=key, attempts=attempts, c=c,
                       w_delta=min(1.0, max(0.0, w_delta)) if cfg.n_correct else w_delta, **out)


@dataclass
class ResultsTable:
    """Per-replication risks for every method, with summaries."""

    replications: list[Replication]
    methods: tuple[str, ...] = METHODS
    extra: dict = field(default_factory=dict)

    def rows(self, include_models: bool = True) -> list[dict]:
        out = []
        for r in self.replications:
            names = list(self.methods)
            if include_models:
                names += sorted((m for m in r.ase if m.startswith("model")), key=lambda s: int(s[5:]))
            for m in names:
                norm = r.ase[m] / r.normalizer if not r.normalizer_zero else math.nan
                out.append({"method": m, "n": r.cell[0], "r2": r.cell[1], "rho": r.cell[2],
                            "design": r.cell[3], "rep": r.rep, "ase": r.ase[m],
                            "normalizer": r.normalizer, "normalized_risk": norm})
        return out

    def summary(self) -> list[dict]:
        """Mean ASE and normalised risk per (cell, method); mean JMA weight on correct models."""
        out = []
        cells = sorted({r.cell for r in self.replications}, key=self._cell_order)
        for cell in cells:
            reps = [r for r in self.replications if r.cell == cell]
            names = list(self.methods) + sorted((m for m in reps[0].ase if m.startswith("model")),
                                                key=lambda s: int(s[5:]))
            for m in names:
                ratios = [r.ase[m] / r.normalizer for r in reps if not r.normalizer_zero]
                out.append({"method": m, "n": cell[0], "r2": cell[1], "rho": cell[2], "design": cell[3],
                            "reps": len(reps), "mean_ase": float(np.mean([r.ase[m] for r in reps])),
                            "mean_normalized_risk": float(np.mean(ratios)) if ratios else math.nan,
                            "mean_w_delta": float(np.mean([r.w_delta for r in reps])) if m == "JMA" else math.nan})
        return out

    def _cell_order(self, cell):
        return next((i for i, r in enumerate(self.replications) if r.cell == cell), 0)

    def mean_risk(self, method: str, cell=None, normalized: bool = True) -> float:
        reps = [r for r in self.replications if cell is None or r.cell == tuple(cell)]
        if normalized:
            return float(np.mean([r.ase[method] / r.normalizer for r in reps if not r.normalizer_zero]))
        return float(np.mean([r.ase[method] for r in reps]))

    def mean_w_delta(self, cell=None) -> float:
        return float(np.mean([r.w_delta for r in self.replications if cell is None or r.cell == tuple(cell)]))

    def replication_rows(self) -> list[dict]:
        return [{"n": r.cell[0], "r2": r.cell[1], "rho": r.cell[2], "design": r.cell[3], "rep": r.rep,
                 "c": r.c, "M": r.M, "h": r.h, "skipped_cells": r.skipped_cells, "cv_jma": r.cv_jma,
                 "cv_tecv": r.cv_tecv, "normalizer": r.normalizer, "normalizer_zero": int(r.normalizer_zero),
                 "w_delta": r.w_delta, "attempts": r.attempts} for r in self.replications]

    def weight_rows(self) -> list[dict]:
        out = []
        for r in self.replications:
            for m in list(self.methods) + ["ORACLE"]:
                w = r.weights[m]
                out.append({"n": r.cell[0], "r2": r.cell[1], "rho": r.cell[2], "design": r.cell[3],
                            "rep": r.rep, "method": m, **{f"w{k + 1}": v for k, v in enumerate(w)}})
        return out


def run_study(cfg: StudyConfig, threads: int = 1) -> ResultsTable:
    specs = cfg.candidate_specs()
    if cfg.c is None:
        # calibrate up front so worker threads only hit the cache
        for _, r2, rho, design in cfg.cells():
            calibrate_c(r2, rho, design, n_mc=cfg.n_mc, seed=cfg.calibration_seed)
    tasks = [(ci, rep) for ci in range(len(cfg.cells())) for rep in range(cfg.reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(lambda t: run_replication(cfg, *t), tasks))
    else:
        reps = [run_replication(cfg, *t) for t in tasks]
    reps.sort(key=lambda r: (cfg.cells().index(r.cell), r.rep))
    for r in reps:
        # averaging can only help in-criterion; a violation means the solver failed
        if r.cv_jma > r.cv_tecv * (1 + 1e-9) + 1e-12:
            logger.warning("cell %s rep %d: CV(JMA) %.6g exceeds CV(TECV) %.6g", r.cell, r.rep, r.cv_jma, r.cv_tecv)
    return ResultsTable(reps, extra={"K": len(specs)})


def weights_consistency(cfg: StudyConfig, threads: int = 1) -> tuple[ResultsTable, dict[int, float]]:
    """Mean total JMA weight on the correct candidates, per sample size."""
    table = run_study(cfg, threads)
    curve = {n: float(np.mean([r.w_delta for r in table.replications if r.cell[0] == n])) for n in cfg.n}
    return table, curve


@dataclass(frozen=True)
class GuidedTruth:
    """The designated "true" model refit on real data, used to regenerate responses."""

    fitted: np.ndarray
    delta: np.ndarray
    sigma2_t: float
    sigma2_c: float


def guided_truth(dataset: Dataset, true_spec: CandidateSpec, per_arm: bool = False,
                 sigma2: float | None = None) -> GuidedTruth:
    fits = fit_arms(dataset, true_spec)
    fitted = np.empty(dataset.n)
    fitted[dataset.treated_idx] = fits.design_t @ fits.fit_t.coef
    fitted[dataset.control_idx] = fits.design_c @ fits.fit_c.coef
    if sigma2 is not None:
        s_t = s_c = float(sigma2)
    elif per_arm:
        s_t = fits.fit_t.rss / (fits.fit_t.n_obs - fits.fit_t.n_coef)
        s_c = fits.fit_c.rss / (fits.fit_c.n_obs - fits.fit_c.n_coef)
    else:
        dof = dataset.n - fits.fit_t.n_coef - fits.fit_c.n_coef
        s_t = s_c = (fits.fit_t.rss + fits.fit_c.rss) / dof
    return GuidedTruth(fitted, fits.delta(dataset.X), s_t, s_c)


def guided_noise_scale(rng: np.random.Generator, n: int) -> np.ndarray:
    """Per-observation standard-deviation multipliers ``u ~ Uniform(0.5, 1.5)``."""
    return rng.uniform(0.5, 1.5, n)


def run_guided(dataset: Dataset, specs: Sequence[CandidateSpec], true_model: int, reps: int, seed: int, *,
               per_arm: bool = False, sigma2: float | None = None, side_length=None, match_dims=None,
               min_pairs=None, threads: int = 1) -> ResultsTable:
    """Regenerate responses from a designated candidate and score every method against it."""
    specs = list(specs)
    if not 0 <= true_model < len(specs):
        raise ConfigInvalid(f"true model index {true_model} outside 0..{len(specs) - 1}")
    truth = guided_truth(dataset, specs[true_model], per_arm=per_arm, sigma2=sigma2)
    sd = np.sqrt(np.where(dataset.T, truth.sigma2_t, truth.sigma2_c))
    cell = (dataset.n, math.nan, math.nan, 0)

    def one(rep: int) -> Replication:
        def run(rng):
            scale = guided_noise_scale(rng, dataset.n)
            y = truth.fitted + rng.standard_normal(dataset.n) * scale * sd
            return evaluate_methods(dataset.with_response(y), specs, dataset.X, truth.delta, rng,
                                    side_length=side_length, match_dims=match_dims, min_pairs=min_pairs)

        key, attempts, out = _with_retries(run, seed, 0, rep, "guided simulation")
        w_true = float(out["weights"]["JMA"][true_model])
        return Replication(cell=cell, rep=rep, seed=key, attempts=attempts, c=math.nan, w_delta=w_true, **out)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(reps)))
    else:
        out = [one(r) for r in range(reps)]
    return ResultsTable(out, extra={"sigma2_t": truth.sigma2_t, "sigma2_c": truth.sigma2_c,
                                    "true_model": true_model})


def estimate(dataset: Dataset, specs: Sequence[CandidateSpec], seed: int, *, side_length=None,
             match_dims=None, min_pairs=None):
    """Run the JMA pipeline on user data with a seeded matching step."""
    return fit_jma(dataset, specs, np.random.default_rng(seed), side_length=side_length,
                   match_dims=match_dims, min_pairs=min_pairs)
