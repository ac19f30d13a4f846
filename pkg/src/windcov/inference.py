"""
Maximum-likelihood estimation of the wind-deformed covariance, plus
directional variograms as a diagnostic.

The fit searches a transformed space (log of sigma2, phi, nugget, gamma; raw
angle) with Nelder-Mead, so every proposal is a valid model. The constant
mean is profiled out by generalised least squares inside the objective.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np
import scipy.linalg as spl
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .errors import FactorizationFailed, InsufficientSites, NonPositiveStretch
from .geometry import GAMMA_MAX, GAMMA_MIN, normalize_angle
from .kernels import CovarianceModel, KernelFamily, base_correlation, covariance_from_separation
from .synthesis import FieldSample, SiteSet, cholesky_with_jitter, covariance_matrix

log = logging.getLogger(__name__)

PARAMETERS = ("sigma2", "phi", "nugget", "gamma", "theta")
_LOG_2PI = math.log(2.0 * math.pi)

# Termination: relative objective spread and simplex size in transformed space.
FTOL_REL = 1e-8
XTOL = 1e-6
# Looser tolerances for the multi-start scouting runs; only the best is polished.
_SCOUT_FTOL_REL = 1e-5
_SCOUT_XTOL = 1e-3


# --------------------------------------------------------------------------
# Variograms
# --------------------------------------------------------------------------

@dataclass
class VariogramEstimate:
    """Binned semivariances. Direction bin ``k`` is centred on ``k * pi / n``, directions mod pi."""

    direction_edges: np.ndarray
    lag_edges: np.ndarray
    semivariance: np.ndarray
    pair_counts: np.ndarray

    @property
    def direction_centers(self) -> np.ndarray:
        return 0.5 * (self.direction_edges[:-1] + self.direction_edges[1:])

    @property
    def lag_centers(self) -> np.ndarray:
        return 0.5 * (self.lag_edges[:-1] + self.lag_edges[1:])

    @property
    def direction_bins(self) -> list:
        e = self.direction_edges
        return [(e[k], e[k + 1]) for k in range(len(e) - 1)]

    @property
    def lag_bins(self) -> list:
        e = self.lag_edges
        return [(e[k], e[k + 1]) for k in range(len(e) - 1)]

    def rows(self):
        """``(direction_bin_center, lag_bin_center, semivariance, pair_count)`` for populated bins."""
        for k, dc in enumerate(self.direction_centers):
            for m, lc in enumerate(self.lag_centers):
                if self.pair_counts[k, m] > 0:
                    yield float(dc), float(lc), float(self.semivariance[k, m]), int(self.pair_counts[k, m])


def empirical_variogram(sample: FieldSample, n_direction_bins: int, lag_edges) -> VariogramEstimate:
    """Directional semivariogram: mean of ``(x_i - x_j)^2 / 2`` per (direction, lag) bin.

    Each unordered pair is counted once. Pairs shorter than ``lag_edges[0]``
    or at least ``lag_edges[-1]`` apart are ignored.
    """
    n = len(sample.sites)
    if n < 2:
        raise InsufficientSites("a variogram needs at least two sites")
    if n_direction_bins < 1:
        raise ValueError("need at least one direction bin")
    lag_edges = np.asarray(lag_edges, dtype=float)
    if lag_edges.ndim != 1 or len(lag_edges) < 2 or lag_edges[0] < 0 or np.any(np.diff(lag_edges) <= 0):
        raise ValueError("lag_edges must be nonnegative and strictly increasing, at least two values")

    i, j = np.triu_indices(n, k=1)
    pts = sample.sites.points
    hx = pts[j, 0] - pts[i, 0]
    hy = pts[j, 1] - pts[i, 1]
    dist = np.hypot(hx, hy)
    width = math.pi / n_direction_bins
    direction = np.mod(np.arctan2(hy, hx) + 0.5 * width, math.pi)
    dbin = np.minimum((direction // width).astype(int), n_direction_bins - 1)
    lbin = np.searchsorted(lag_edges, dist, side="right") - 1
    ok = (lbin >= 0) & (lbin < len(lag_edges) - 1)
    sq = 0.5 * (sample.values[i] - sample.values[j]) ** 2

    shape = (n_direction_bins, len(lag_edges) - 1)
    flat = dbin[ok] * shape[1] + lbin[ok]
    counts = np.bincount(flat, minlength=shape[0] * shape[1]).reshape(shape)
    sums = np.bincount(flat, weights=sq[ok], minlength=shape[0] * shape[1]).reshape(shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        semi = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    edges = (np.arange(n_direction_bins + 1) - 0.5) * width
    return VariogramEstimate(edges, lag_edges, semi, counts)


def theoretical_semivariance(model: CovarianceModel, hx, hy):
    """``sigma2 + nugget - C(h)`` for nonzero separations."""
    return model.variance - np.asarray(covariance_from_separation(model, hx, hy))


def directional_lag_correlation(values, sites: SiteSet, lag, tol: float = 1e-9) -> float:
    """Pooled Pearson correlation of ``X(s)`` and ``X(s + lag)``.

    ``values`` is one field (``n``) or a stack of fields (``T x n``); pairs
    from every row are pooled.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    tree = cKDTree(sites.points)
    dist, idx = tree.query(sites.points + np.asarray(lag, dtype=float), distance_upper_bound=tol)
    head = np.nonzero(np.isfinite(dist))[0]
    if len(head) == 0:
        raise InsufficientSites(f"no site pairs at lag {tuple(lag)}")
    a = values[:, head].ravel()
    b = values[:, idx[head]].ravel()
    if a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


# --------------------------------------------------------------------------
# Likelihood
# --------------------------------------------------------------------------

def _nll_from_cholesky(L: np.ndarray, resid: np.ndarray) -> float:
    a = spl.solve_triangular(L, resid, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return 0.5 * (a @ a + logdet + len(resid) * _LOG_2PI)


def negative_log_likelihood(model: CovarianceModel, sample: FieldSample, mean: float) -> float:
    """Gaussian negative log-likelihood of ``sample`` under ``model`` with a known constant mean."""
    L, _ = cholesky_with_jitter(covariance_matrix(model, sample.sites), model.sigma2)
    return float(_nll_from_cholesky(L, sample.values - mean))


def profile_mean(model: CovarianceModel, sample: FieldSample) -> float:
    """GLS estimate of the constant mean, ``1'K^-1 x / 1'K^-1 1``."""
    L, _ = cholesky_with_jitter(covariance_matrix(model, sample.sites), model.sigma2)
    a = spl.solve_triangular(L, sample.values, lower=True, check_finite=False)
    b = spl.solve_triangular(L, np.ones(len(sample.values)), lower=True, check_finite=False)
    return float((b @ a) / (b @ b))


class _Objective:
    """Profiled NLL over a transformed parameter vector, with separations cached."""

    def __init__(self, sample: FieldSample, base: CovarianceModel, free: List[str],
                 wind_speed: Optional[float]):
        self.values = sample.values
        self.n = len(sample.values)
        self.base = base
        self.free = free
        self.wind_speed = wind_speed
        iu = np.triu_indices(self.n, k=1)
        hx, hy = sample.sites.separations()
        self.iu = iu
        self.hx = hx[iu]
        self.hy = hy[iu]
        self.h2 = self.hx ** 2 + self.hy ** 2
        self.ones = np.ones(self.n)
        self.n_eval = 0

    def decode(self, z) -> Dict[str, float]:
        p = {"sigma2": self.base.sigma2, "phi": self.base.phi, "nugget": self.base.nugget,
             "gamma": self.base.gamma, "theta": self.base.theta}
        for name, v in zip(self.free, z):
            if name == "theta":
                p["theta"] = float(v)
            elif name == "gamma_prime":
                p["gamma_prime"] = float(v)
                p["gamma"] = math.exp(self.wind_speed * v)
            else:
                p[name] = math.exp(v)
        return p

    def model(self, z) -> CovarianceModel:
        p = self.decode(z)
        return CovarianceModel(self.base.family, p["sigma2"], p["phi"], p["nugget"], p["gamma"], p["theta"])

    def _factor(self, p):
        g = p["gamma"]
        c, s = math.cos(p["theta"]), math.sin(p["theta"])
        along = c * self.hx + s * self.hy
        d2 = np.maximum(self.h2 + (1.0 / (g * g) - 1.0) * along * along, 0.0)
        K = np.empty((self.n, self.n))
        off = p["sigma2"] * base_correlation(self.base.family, d2, p["phi"])
        K[self.iu] = off
        K.T[self.iu] = off
        np.fill_diagonal(K, p["sigma2"] + p["nugget"])
        return cholesky_with_jitter(K, p["sigma2"])[0]

    def profiled(self, p):
        """Return ``(nll, mean)`` at the GLS mean."""
        L = self._factor(p)
        a = spl.solve_triangular(L, self.values, lower=True, check_finite=False)
        b = spl.solve_triangular(L, self.ones, lower=True, check_finite=False)
        mu = (b @ a) / (b @ b)
        r = a - mu * b
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return 0.5 * (r @ r + logdet + self.n * _LOG_2PI), float(mu)

    def __call__(self, z) -> float:
        self.n_eval += 1
        p = self.decode(z)
        bad = [k for k in ("sigma2", "phi", "nugget") if not math.isfinite(p[k])]
        if bad or p["sigma2"] <= 0 or p["phi"] <= 0 or not GAMMA_MIN <= p["gamma"] <= GAMMA_MAX:
            return math.inf
        try:
            return self.profiled(p)[0]
        except (FactorizationFailed, NonPositiveStretch, FloatingPointError):
            return math.inf


@dataclass
class FitResult:
    model: CovarianceModel
    log_likelihood: float
    iterations: int
    converged: bool
    mean: float
    n_evaluations: int = 0
    free_parameters: List[str] = field(default_factory=list)
    gamma_prime: Optional[float] = None
    wind_speed: Optional[float] = None
    standard_errors: Optional[Dict[str, float]] = None
    start_nlls: List[float] = field(default_factory=list)

    @property
    def nll(self) -> float:
        return -self.log_likelihood

    def to_record(self) -> dict:
        rec = {
            "model": self.model.to_record(),
            "mean": self.mean,
            "log_likelihood": self.log_likelihood,
            "negative_log_likelihood": self.nll,
            "iterations": self.iterations,
            "n_evaluations": self.n_evaluations,
            "converged": self.converged,
            "free_parameters": list(self.free_parameters),
            "start_nlls": list(self.start_nlls),
        }
        if self.gamma_prime is not None:
            rec["gamma_prime"] = self.gamma_prime
            rec["wind_speed"] = self.wind_speed
        rec["standard_errors"] = self.standard_errors
        return rec


def canonical_model(model: CovarianceModel) -> CovarianceModel:
    """Equivalent model with ``gamma >= 1``.

    Stretch ``gamma`` at angle ``theta`` gives the same covariance as ``1/gamma``
    at ``theta + pi/2`` once the range absorbs the overall scale ``1/gamma``.
    """
    if model.gamma >= 1.0:
        return model
    g = 1.0 / model.gamma
    # d2 shrinks by 1/g**2; Gaussian divides d2 by phi, the others divide sqrt(d2).
    phi = model.phi / (g * g if model.family is KernelFamily.GAUSSIAN else g)
    return model.replace(gamma=g, phi=phi, theta=normalize_angle(model.theta + math.pi / 2))


def _encode(name: str, value: float) -> float:
    return value if name in ("theta", "gamma_prime") else math.log(value)


_SIMPLEX_STEP = {"sigma2": 0.5, "phi": 0.5, "nugget": 1.0, "gamma": 0.5, "theta": math.pi / 8}


def _nelder_mead(obj: _Objective, z0, steps, ftol_rel, xtol, max_iter):
    z0 = np.asarray(z0, dtype=float)
    simplex = np.vstack([z0] + [z0 + np.eye(len(z0))[k] * steps[k] for k in range(len(z0))])
    f0 = obj(z0)
    fatol = ftol_rel * max(1.0, abs(f0)) if math.isfinite(f0) else ftol_rel
    return minimize(obj, z0, method="Nelder-Mead",
                    options={"initial_simplex": simplex, "xatol": xtol, "fatol": fatol,
                             "maxiter": max_iter, "maxfev": 4 * max_iter})


def _hessian(f, z, h=1e-4):
    k = len(z)
    H = np.empty((k, k))
    f0 = f(z)
    for a in range(k):
        for b in range(a, k):
            ea = np.eye(k)[a] * h
            eb = np.eye(k)[b] * h
            if a == b:
                H[a, a] = (f(z + ea) - 2 * f0 + f(z - ea)) / h ** 2
            else:
                H[a, b] = H[b, a] = (f(z + ea + eb) - f(z + ea - eb) - f(z - ea + eb) + f(z - ea - eb)) / (4 * h * h)
    return H


def fit(sample: FieldSample, family, init: CovarianceModel, fixed: Iterable[str] = (), *,
        restarts: int = 5, max_iter: int = 2000, wind_speed: Optional[float] = None,
        seed: int = 0, compute_se: bool = False) -> FitResult:
    """Maximum-likelihood fit of the wind-deformed covariance.

    Parameters
    ----------
    sample : FieldSample
        Observed field.
    family : KernelFamily or str
        Kernel family to fit; overrides ``init.family``.
    init : CovarianceModel
        Starting values, and the values of any fixed parameters.
    fixed : iterable of str
        Names from ``sigma2, phi, nugget, gamma, theta`` held at ``init``.
    restarts : int
        Number of starting angles spread over [0, pi). Ignored when theta is fixed.
    wind_speed : float, optional
        If given, the stretch is searched as ``gamma = exp(wind_speed * gamma_prime)``
        and ``gamma_prime`` is reported.

    Returns
    -------
    FitResult
        Best model (theta reported in [0, pi)), log-likelihood at the profiled
        mean, and convergence diagnostics. ``converged`` is False when the
        final polish hit ``max_iter``.
    """
    fixed = set(fixed)
    unknown = fixed - set(PARAMETERS)
    if unknown:
        raise ValueError(f"unknown parameter names in fixed: {sorted(unknown)}")
    init = init.replace(family=KernelFamily.parse(family))
    if "nugget" not in fixed and init.nugget == 0.0:
        # log transform needs a positive start
        init = init.replace(nugget=1e-2 * init.sigma2)
    if wind_speed is not None and wind_speed <= 0:
        raise ValueError("wind_speed must be positive to fit through gamma_prime")

    free = [p for p in PARAMETERS if p not in fixed]
    if wind_speed is not None and "gamma" in free:
        free[free.index("gamma")] = "gamma_prime"
    obj = _Objective(sample, init, free, wind_speed)

    if not free:
        nll, mu = obj.profiled(obj.decode([]))
        return FitResult(init, -nll, 0, True, mu, 1, [], start_nlls=[nll])

    def start_vector(theta):
        z = []
        for name in free:
            if name == "theta":
                z.append(theta)
            elif name == "gamma_prime":
                z.append(math.log(init.gamma) / wind_speed)
            else:
                z.append(_encode(name, getattr(init, name)))
        return np.array(z)

    steps = [(_SIMPLEX_STEP["gamma"] / wind_speed) if n == "gamma_prime" else _SIMPLEX_STEP[n] for n in free]
    rng = np.random.default_rng(seed)
    n_starts = max(1, restarts) if "theta" in free else 1
    thetas = [init.theta]
    for k in range(1, n_starts):
        jitter = rng.uniform(-0.5, 0.5) * math.pi / (2 * n_starts)
        thetas.append(init.theta + k * math.pi / n_starts + jitter)

    iterations = 0
    scouts = []
    for theta in thetas:
        res = _nelder_mead(obj, start_vector(theta), steps, _SCOUT_FTOL_REL, _SCOUT_XTOL, max_iter)
        iterations += res.nit
        scouts.append(res)
        log.debug("start theta=%.3f -> nll=%.6f (%d it)", theta, res.fun, res.nit)
    best = min(scouts, key=lambda r: r.fun)
    if not math.isfinite(best.fun):
        raise FactorizationFailed("likelihood could not be evaluated at any starting point")

    polish_steps = [0.1 * s for s in steps]
    final = _nelder_mead(obj, best.x, polish_steps, FTOL_REL, XTOL, max_iter)
    iterations += final.nit
    if final.fun > best.fun:
        final_x, final_fun = best.x, best.fun
    else:
        final_x, final_fun = final.x, final.fun
    converged = bool(final.status == 0)

    p = obj.decode(final_x)
    nll, mu = obj.profiled(p)
    model = CovarianceModel(init.family, p["sigma2"], p["phi"], p["nugget"], p["gamma"],
                            normalize_angle(p["theta"]))
    if "gamma" in free and "theta" in free and model.gamma < 1.0:
        model = canonical_model(model)
    ses = None
    if compute_se:
        H = _hessian(obj, np.asarray(final_x))
        try:
            cov = np.linalg.inv(H)
            diag = np.diag(cov)
            names = [n if n in ("theta", "gamma_prime") else f"log_{n}" for n in free]
            ses = {n: (math.sqrt(d) if d > 0 else math.nan) for n, d in zip(names, diag)}
        except np.linalg.LinAlgError:
            ses = None
    return FitResult(
        model=model,
        log_likelihood=-nll,
        iterations=iterations,
        converged=converged,
        mean=mu,
        n_evaluations=obj.n_eval,
        free_parameters=free,
        gamma_prime=p.get("gamma_prime"),
        wind_speed=wind_speed,
        standard_errors=ses,
        start_nlls=[float(r.fun) for r in scouts],
    )
