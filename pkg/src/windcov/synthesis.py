"""
Covariance matrices over site sets and Gaussian random field draws.

Random numbers come from numpy's ``PCG64`` bit generator seeded with the
user seed (``numpy.random.default_rng(seed)``); standard normals use numpy's
ziggurat sampler. Streams are identical for a given seed within one numpy
major version.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as spl
from scipy.spatial import cKDTree

from .errors import DuplicateSites, FactorizationFailed, MissingGridMetadata
from .kernels import CovarianceModel, covariance_from_separation

log = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-9
JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    spacing: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs nx, ny >= 1")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def points(self) -> np.ndarray:
        """Row-major: x varies fastest."""
        xs = self.origin[0] + self.spacing * np.arange(self.nx)
        ys = self.origin[1] + self.spacing * np.arange(self.ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


class SiteSet:
    """Ordered 2-D sites with optional regular-grid metadata."""

    def __init__(self, points, grid: Optional[GridSpec] = None):
        pts = np.array(points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("site coordinates must be finite")
        if len(pts) > 1:
            close = cKDTree(pts).query_pairs(DUPLICATE_TOL)
            if close:
                i, j = sorted(close)[0]
                raise DuplicateSites(f"sites {i} and {j} coincide within {DUPLICATE_TOL:g}")
        if grid is not None:
            if grid.nx * grid.ny != len(pts):
                raise ValueError("grid metadata does not match the number of sites")
            if not np.allclose(grid.points(), pts, rtol=0, atol=1e-9 * max(1.0, grid.spacing)):
                raise ValueError("grid metadata inconsistent with the site list")
        pts.setflags(write=False)
        self.points = pts
        self.grid = grid

    @classmethod
    def from_grid(cls, nx: int, ny: int, spacing: float, origin=(0.0, 0.0)) -> "SiteSet":
        spec = GridSpec(int(nx), int(ny), float(spacing), tuple(origin))
        return cls(spec.points(), spec)

    def __len__(self) -> int:
        return len(self.points)

    def __repr__(self) -> str:
        return f"SiteSet(n={len(self)}, grid={self.grid})"

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    def separations(self):
        """Pairwise ``(hx, hy)`` with ``h[i, j] = s_i - s_j``."""
        return (np.subtract.outer(self.x, self.x), np.subtract.outer(self.y, self.y))

    def permuted(self, order) -> "SiteSet":
        return SiteSet(self.points[np.asarray(order)])


@dataclass
class FieldSample:
    """Values observed or simulated at a set of sites."""

    sites: SiteSet
    values: np.ndarray
    seed: int = 0
    model_used: Union[CovarianceModel, str, None] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.values) != len(self.sites):
            raise ValueError(f"{len(self.values)} values for {len(self.sites)} sites")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


def covariance_matrix(model: CovarianceModel, sites: SiteSet) -> np.ndarray:
    """``K[i, j] = C(s_i, s_j)``. Sites are unique, so the nugget lands on the diagonal only."""
    hx, hy = sites.separations()
    K = covariance_from_separation(model, hx, hy)
    return np.atleast_2d(K)


def cholesky_with_jitter(K: np.ndarray, scale: float = 1.0):
    """Lower Cholesky factor of ``K``, adding diagonal jitter if needed.

    Tries ``K`` as is, then ``K + j * scale * I`` for ``j`` = 1e-10, 1e-9, ...,
    1e-6. Returns ``(L, jitter)`` where ``jitter`` is the absolute amount added.
    """
    try:
        return spl.cholesky(K, lower=True, check_finite=False), 0.0
    except spl.LinAlgError:
        pass
    n = K.shape[0]
    j = JITTER_START
    while j <= JITTER_MAX * (1 + 1e-9):
        try:
            L = spl.cholesky(K + (j * scale) * np.eye(n), lower=True, check_finite=False)
            log.debug("cholesky needed jitter %.1e * scale", j)
            return L, j * scale
        except spl.LinAlgError:
            j *= 10.0
    raise FactorizationFailed(
        f"covariance matrix not positive definite even with jitter {JITTER_MAX:g} * sigma2"
    )


def sample_field(model: CovarianceModel, sites: SiteSet, seed: int, mean: float = 0.0) -> FieldSample:
    """One realisation ``mean + L z`` with ``z`` i.i.d. standard normal."""
    L, _ = cholesky_with_jitter(covariance_matrix(model, sites), model.sigma2)
    z = np.random.default_rng(seed).standard_normal(len(sites))
    return FieldSample(sites, mean + L @ z, seed=seed, model_used=model)


def sample_fields(model: CovarianceModel, sites: SiteSet, seeds, mean: float = 0.0) -> list:
    """Like :func:`sample_field` for many seeds, sharing one factorisation."""
    L, _ = cholesky_with_jitter(covariance_matrix(model, sites), model.sigma2)
    out = []
    for seed in seeds:
        z = np.random.default_rng(seed).standard_normal(len(sites))
        out.append(FieldSample(sites, mean + L @ z, seed=seed, model_used=model))
    return out


def export_covariance_surface(model: CovarianceModel, grid: SiteSet) -> np.ndarray:
    """Rows ``(x, y, C((0, 0), (x, y)))`` over a gridded site set."""
    if grid.grid is None:
        raise MissingGridMetadata("covariance surface export needs a gridded site set")
    values = covariance_from_separation(model, grid.x, grid.y)
    return np.column_stack([grid.x, grid.y, np.atleast_1d(values)])
