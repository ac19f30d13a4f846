"""
Toy wind-transport simulator for airborne pollution.

Fixed sources are scattered as a Poisson process over the square
``[-R/2, R/2]^2`` (``R`` is ``domain_half_width``, kept under that name for
config compatibility; it is the side length of the square). At every step:

1. each source emits one particle of mass ``emission_rate * dt`` at its location;
2. every particle moves by ``advect_coeff * wind * dt`` plus an isotropic
   Gaussian kick with per-component standard deviation ``diffusion_sigma * sqrt(dt)``;
3. particles that left the square are dropped (absorbing boundary);
4. a fresh cap ``M ~ Poisson(lambda_B)`` is drawn and uniformly chosen particles
   are removed until the total mass is at most ``M``.

Concentration at a site is the mass within distance ``ball_radius`` divided
by the ball area. Each random stage draws from its own generator keyed by
``(seed, stage, t_index)``, so a step is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, NonPositiveRadius
from .geometry import WindField
from .synthesis import SiteSet

_STREAM_SOURCES = 0
_STREAM_MOVE = 1
_STREAM_CAP = 2


@dataclass(frozen=True)
class SimConfig:
    domain_half_width: float
    dt: float
    n_steps: int
    lambda_src: float
    emission_rate: float
    advect_coeff: float
    diffusion_sigma: float
    lambda_B: float
    ball_radius: float
    wind: WindField
    seed: int = 0
    burn_in: int = 0

    def __post_init__(self):
        positive = ("domain_half_width", "dt", "emission_rate")
        for name in positive:
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"transport.{name} must be positive, got {v!r}")
        if not (self.lambda_src >= 0 and math.isfinite(self.lambda_src)):
            raise ConfigError("transport.lambda_src must be nonnegative")
        if self.n_steps < 0 or self.burn_in < 0:
            raise ConfigError("transport.n_steps and transport.burn_in must be nonnegative")
        if not (self.diffusion_sigma >= 0 and math.isfinite(self.diffusion_sigma)):
            raise ConfigError("transport.diffusion_sigma must be nonnegative")
        # lambda_B = inf disables the cap.
        if not self.lambda_B >= 0:
            raise ConfigError("transport.lambda_B must be nonnegative (inf disables the cap)")
        if not self.ball_radius > 0:
            raise NonPositiveRadius(f"transport.ball_radius must be positive, got {self.ball_radius!r}")
        if self.ball_radius >= self.domain_half_width / 2:
            raise ConfigError("transport.ball_radius must be much smaller than the domain")
        if not math.isfinite(self.advect_coeff):
            raise ConfigError("transport.advect_coeff must be finite")

    @property
    def half(self) -> float:
        return self.domain_half_width / 2.0

    @property
    def drift(self) -> np.ndarray:
        """Deterministic per-step displacement ``kappa * w * dt``."""
        return self.advect_coeff * self.wind.vector * self.dt

    @property
    def particle_mass(self) -> float:
        return self.emission_rate * self.dt

    @classmethod
    def from_record(cls, record: dict) -> "SimConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(record) - names
        if unknown:
            raise ConfigError(f"unknown transport keys: {', '.join(sorted(unknown))}")
        missing = names - set(record) - {"seed", "burn_in"}
        if missing:
            raise ConfigError(f"transport config missing keys: {', '.join(sorted(missing))}")
        rec = dict(record)
        wind = rec["wind"]
        if not isinstance(wind, dict) or set(wind) != {"speed", "angle"}:
            raise ConfigError("transport.wind must be a mapping with keys speed and angle")
        try:
            rec["wind"] = WindField(float(wind["speed"]), float(wind["angle"]))
            for k in ("n_steps", "seed", "burn_in"):
                if k in rec:
                    rec[k] = int(rec[k])
            for k in names - {"wind", "n_steps", "seed", "burn_in"}:
                rec[k] = float(rec[k])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid transport config: {exc}") from exc
        return cls(**rec)

    def to_record(self) -> dict:
        rec = {f.name: getattr(self, f.name) for f in fields(self)}
        rec["wind"] = {"speed": self.wind.speed, "angle": self.wind.angle}
        return rec


@dataclass
class ParticleState:
    positions: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    masses: np.ndarray = field(default_factory=lambda: np.empty(0))
    birth_times: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.masses = np.asarray(self.masses, dtype=float).ravel()
        self.birth_times = np.asarray(self.birth_times, dtype=np.int64).ravel()
        if not len(self.positions) == len(self.masses) == len(self.birth_times):
            raise ValueError("positions, masses and birth_times must have equal length")

    def __len__(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    def subset(self, keep) -> "ParticleState":
        return ParticleState(self.positions[keep], self.masses[keep], self.birth_times[keep])


@dataclass
class ConcentrationField:
    sites: SiteSet
    concentrations: np.ndarray
    time_index: int


@dataclass
class StepStats:
    t_index: int
    mass_in: float
    mass_escaped: float
    mass_capped: float
    total_mass: float
    n_particles: int
    cap: float


def _rng(config: SimConfig, stream: int, t_index: int = 0) -> np.random.Generator:
    return np.random.default_rng([config.seed, stream, t_index])


def generate_sources(config: SimConfig) -> np.ndarray:
    """Poisson point process with intensity ``lambda_src`` on the domain square."""
    rng = _rng(config, _STREAM_SOURCES)
    area = config.domain_half_width ** 2
    n = rng.poisson(config.lambda_src * area)
    return rng.uniform(-config.half, config.half, size=(n, 2))


def enforce_cap(state: ParticleState, config: SimConfig, t_index: int) -> ParticleState:
    """Draw ``M ~ Poisson(lambda_B)``; drop random particles until total mass <= M."""
    return _cap(state, config, t_index)[0]


def _cap(state: ParticleState, config: SimConfig, t_index: int):
    """Returns ``(state, cap, removed_mass)``."""
    if math.isinf(config.lambda_B) or len(state) == 0:
        return state, math.inf, 0.0
    rng = _rng(config, _STREAM_CAP, t_index)
    cap = float(rng.poisson(config.lambda_B))
    total = state.total_mass
    if total <= cap:
        return state, cap, 0.0
    order = rng.permutation(len(state))
    # Remaining mass after removing the first k particles of the permutation.
    removed = np.cumsum(state.masses[order])
    k = int(np.searchsorted(total - removed <= cap, True)) + 1
    keep = np.ones(len(state), dtype=bool)
    keep[order[:k]] = False
    return state.subset(keep), cap, math.fsum(state.masses[~keep])


def _advance(state: ParticleState, config: SimConfig, t_index: int, sources: np.ndarray):
    m = config.particle_mass
    n_src = len(sources)
    positions = np.concatenate([state.positions, sources])
    masses = np.concatenate([state.masses, np.full(n_src, m)])
    births = np.concatenate([state.birth_times, np.full(n_src, t_index, dtype=np.int64)])
    mass_in = math.fsum(np.full(n_src, m))

    positions = positions + config.drift
    if config.diffusion_sigma > 0 and len(positions):
        kicks = _rng(config, _STREAM_MOVE, t_index).standard_normal(positions.shape)
        positions = positions + config.diffusion_sigma * math.sqrt(config.dt) * kicks

    inside = np.all(np.abs(positions) <= config.half, axis=1)
    mass_escaped = math.fsum(masses[~inside])
    moved = ParticleState(positions[inside], masses[inside], births[inside])

    capped, cap, mass_capped = _cap(moved, config, t_index)
    total = capped.total_mass
    stats = StepStats(
        t_index=t_index,
        mass_in=mass_in,
        mass_escaped=mass_escaped,
        mass_capped=mass_capped,
        total_mass=total,
        n_particles=len(capped),
        cap=cap,
    )
    return capped, stats


def step(state: ParticleState, config: SimConfig, t_index: int,
         sources: Optional[np.ndarray] = None) -> ParticleState:
    """Advance one time step: emit, advect + diffuse, drop escapees, cap.

    Newly emitted particles move in the step they are born, so with no
    diffusion a particle born at step ``b`` sits at
    ``source + (t - b + 1) * drift`` after step ``t``.
    """
    if sources is None:
        sources = generate_sources(config)
    return _advance(state, config, t_index, sources)[0]


def concentration(state: ParticleState, sites: SiteSet, config: SimConfig,
                  time_index: int = 0) -> ConcentrationField:
    """Mass within ``ball_radius`` of each site per unit ball area. Balls may overlap."""
    r = config.ball_radius
    if not r > 0:
        raise NonPositiveRadius(f"ball radius must be positive, got {r!r}")
    conc = np.zeros(len(sites))
    if len(state):
        tree = cKDTree(state.positions)
        for i, idx in enumerate(tree.query_ball_point(sites.points, r)):
            if idx:
                conc[i] = state.masses[idx].sum()
    return ConcentrationField(sites, conc / (math.pi * r * r), time_index)


@dataclass
class RunResult:
    fields: List[ConcentrationField]
    steps: List[StepStats]
    sources: np.ndarray
    final_state: ParticleState

    def summary(self) -> dict:
        return {
            "n_sources": int(len(self.sources)),
            "n_records": len(self.fields),
            "total_mass": [s.total_mass for s in self.steps],
            "n_particles": [s.n_particles for s in self.steps],
            "mass_in": [s.mass_in for s in self.steps],
            "mass_escaped": [s.mass_escaped for s in self.steps],
            "mass_capped": [s.mass_capped for s in self.steps],
        }

    def mean_field(self) -> np.ndarray:
        return np.mean([f.concentrations for f in self.fields], axis=0)


def run(config: SimConfig, sites: SiteSet) -> RunResult:
    """Generate sources, run ``n_steps`` steps, record concentrations from ``burn_in`` on."""
    sources = generate_sources(config)
    state = ParticleState()
    records, stats = [], []
    for t in range(config.n_steps):
        state, st = _advance(state, config, t, sources)
        stats.append(st)
        if t >= config.burn_in:
            records.append(concentration(state, sites, config, time_index=t))
    return RunResult(records, stats, sources, state)
