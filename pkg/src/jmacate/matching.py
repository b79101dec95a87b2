"""Partition-and-match construction of treatment-effect pseudo-observations.

Covariates are rescaled to the unit cube, the cube is cut into a lattice of
cells with side ``h``, and one treated and one control unit are drawn at
random from every cell that holds both arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDimension, DimensionMismatch, NoPairs


@dataclass(frozen=True)
class CubeTransform:
    """Affine map of selected covariate columns onto ``[0, 1]``."""

    dims: tuple[int, ...]
    lo: np.ndarray
    hi: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X[..., list(self.dims)] - self.lo) / (self.hi - self.lo)

    def invert(self, Z) -> np.ndarray:
        """Map unit-cube coordinates back to the selected raw columns."""
        Z = np.asarray(Z, dtype=np.float64)
        return self.lo + Z * (self.hi - self.lo)


def fit_cube_transform(X, dims=None) -> CubeTransform:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("covariates must be a 2-D array")
    dims = tuple(range(X.shape[1])) if dims is None else tuple(int(d) for d in dims)
    if not dims:
        raise DimensionMismatch("at least one matching dimension is required")
    sub = X[:, list(dims)]
    lo, hi = sub.min(axis=0), sub.max(axis=0)
    flat = np.flatnonzero(~(hi > lo))
    if flat.size:
        raise DegenerateDimension(f"covariate column(s) {[dims[i] for i in flat]} are constant")
    return CubeTransform(dims=dims, lo=lo, hi=hi)


def default_side_length(n: int, p_match: int) -> float:
    """Cell side ``(log n / n) ** (1 / p_match)``, clamped to at most one."""
    if n < 2 or p_match < 1:
        raise ValueError("need n >= 2 and p_match >= 1")
    return min(1.0, (math.log(n) / n) ** (1.0 / p_match))


def cell_coordinates(X_scaled, h: float) -> np.ndarray:
    """Integer lattice coordinates of each row; the face ``u = 1`` folds into the last cell."""
    Z = np.asarray(X_scaled, dtype=np.float64)
    n_bins = max(1, math.ceil(1.0 / h - 1e-12))
    return np.clip(np.floor(Z / h).astype(np.int64), 0, n_bins - 1)


@dataclass(frozen=True)
class MatchedPairSet:
    """One treated/control pair per eligible cell.

    ``treated[m]`` and ``control[m]`` are row indices into the full dataset;
    ``cells[m]`` is the lattice coordinate of the cell they share.
    """

    treated: np.ndarray
    control: np.ndarray
    cells: tuple[tuple[int, ...], ...]
    h: float
    skipped_cells: int

    @property
    def M(self) -> int:
        return int(self.treated.shape[0])

    @property
    def pairs(self) -> list[tuple[int, int, tuple[int, ...]]]:
        return [(int(t), int(c), cell) for t, c, cell in zip(self.treated, self.control, self.cells)]


def partition_and_match(X_scaled, T, h: float, rng: np.random.Generator) -> MatchedPairSet:
    Z = np.asarray(X_scaled, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    T = np.asarray(T).astype(bool)
    if Z.shape[0] != T.shape[0]:
        raise DimensionMismatch("covariates and treatment differ in length")
    if not 0.0 < h <= 1.0:
        raise ValueError(f"side length must lie in (0, 1], got {h}")
    if Z.size and (Z.min() < 0.0 or Z.max() > 1.0):
        raise ValueError("scaled covariates must lie in [0, 1]")

    coords = cell_coordinates(Z, h)
    cells, inverse = np.unique(coords, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(cells.shape[0] + 1))

    treated, control, kept = [], [], []
    skipped = 0
    for c in range(cells.shape[0]):
        members = order[bounds[c]:bounds[c + 1]]
        t_idx = members[T[members]]
        c_idx = members[~T[members]]
        if t_idx.size == 0 or c_idx.size == 0:
            skipped += 1
            continue
        treated.append(t_idx[rng.integers(t_idx.size)])
        control.append(c_idx[rng.integers(c_idx.size)])
        kept.append(tuple(int(v) for v in cells[c]))

    if not treated:
        raise NoPairs(f"no cell of side {h:.4g} contains both a treated and a control unit")
    return MatchedPairSet(
        treated=np.asarray(treated, dtype=np.int64),
        control=np.asarray(control, dtype=np.int64),
        cells=tuple(kept),
        h=float(h),
        skipped_cells=skipped,
    )


def adaptive_match(X_scaled, T, h0: float, M_min: int, rng: np.random.Generator) -> MatchedPairSet:
    """Match at ``h0``, doubling the side length until at least ``M_min`` pairs form.

    Every attempt draws from ``rng``, so the result depends on how many
    doublings were needed but is still fully determined by the seed.
    """
    if M_min < 1:
        raise ValueError("M_min must be at least 1")
    h = min(1.0, float(h0))
    while True:
        try:
            pairs = partition_and_match(X_scaled, T, h, rng)
        except NoPairs:
            if h >= 1.0:
                raise
            pairs = None
        if pairs is not None and (pairs.M >= M_min or h >= 1.0):
            return pairs
        h = min(1.0, 2.0 * h)
