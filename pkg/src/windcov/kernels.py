"""
Isotropic base kernels and their wind-deformed versions.

Range conventions follow each family's usual form: the Gaussian divides the
*squared* distance by ``phi``, the exponential and Matern-3/2 divide the
distance by ``phi``. Matern-3/2 is an extension beyond the Gaussian and
exponential families; the deformation works for any isotropic kernel.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError, NonPositiveRange
from .geometry import check_gamma, deformed_sq_distance, normalize_angle, wind_link_gamma

_SQRT3 = math.sqrt(3.0)


class KernelFamily(str, enum.Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"
    MATERN32 = "matern32"

    @classmethod
    def parse(cls, value) -> "KernelFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(f.value for f in cls)
            raise ConfigError(f"unknown kernel family {value!r}; expected one of {names}") from None


def base_correlation(family, d2, phi: float):
    """Isotropic correlation at squared distance ``d2``. Equals 1 at ``d2 == 0``."""
    family = KernelFamily.parse(family)
    if not (phi > 0 and math.isfinite(phi)):
        raise NonPositiveRange(f"range phi must be positive, got {phi!r}")
    d2 = np.asarray(d2, dtype=float)
    if family is KernelFamily.GAUSSIAN:
        out = np.exp(-d2 / phi)
    elif family is KernelFamily.EXPONENTIAL:
        out = np.exp(-np.sqrt(d2) / phi)
    else:
        t = _SQRT3 * np.sqrt(d2) / phi
        out = (1.0 + t) * np.exp(-t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CovarianceModel:
    """Kernel family, sill, range, nugget and the wind deformation (gamma, theta).

    ``theta`` is kept as given; use :attr:`theta_normalized` when comparing
    models, since ``theta`` and ``theta + pi`` describe the same covariance.
    """

    family: KernelFamily
    sigma2: float
    phi: float
    nugget: float = 0.0
    gamma: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily.parse(self.family))
        for name in ("sigma2", "phi", "nugget", "gamma", "theta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not (self.phi > 0 and math.isfinite(self.phi)):
            raise NonPositiveRange(f"range phi must be positive, got {self.phi!r}")
        if not (self.nugget >= 0 and math.isfinite(self.nugget)):
            raise ValueError(f"nugget must be nonnegative, got {self.nugget!r}")
        check_gamma(self.gamma)
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")

    @property
    def theta_normalized(self) -> float:
        return normalize_angle(self.theta)

    @property
    def variance(self) -> float:
        return self.sigma2 + self.nugget

    def replace(self, **changes) -> "CovarianceModel":
        return replace(self, **changes)

    def isotropic(self) -> "CovarianceModel":
        return replace(self, gamma=1.0, theta=0.0)

    def to_record(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["theta_radians"] = d.pop("theta")
        return d

    @classmethod
    def from_record(cls, record: dict) -> "CovarianceModel":
        """Build from a flat config record.

        Recognised keys: family, sigma2, phi, nugget, gamma, theta_radians.
        The deformation may instead be given as stretches ``a`` and ``b``
        (only ``a / b`` is kept), or as ``wind_speed`` + ``gamma_prime``,
        which override ``gamma`` through ``exp(wind_speed * gamma_prime)``.
        """
        known = {"family", "sigma2", "phi", "nugget", "gamma", "theta_radians",
                 "a", "b", "wind_speed", "gamma_prime"}
        unknown = set(record) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {', '.join(sorted(unknown))}")
        for key in ("family", "sigma2", "phi"):
            if key not in record:
                raise ConfigError(f"model record is missing required key {key!r}")
        gamma = record.get("gamma", 1.0)
        if "a" in record or "b" in record:
            if "gamma" in record:
                raise ConfigError("give either gamma or the stretches a, b, not both")
            try:
                gamma = float(record["a"]) / float(record["b"])
            except KeyError as exc:
                raise ConfigError(f"stretch key {exc.args[0]!r} missing; a and b go together") from None
        if "gamma_prime" in record or "wind_speed" in record:
            try:
                gamma = wind_link_gamma(float(record["wind_speed"]), float(record["gamma_prime"]))
            except KeyError as exc:
                raise ConfigError(f"key {exc.args[0]!r} missing; wind_speed and gamma_prime go together") from None
        try:
            return cls(
                family=record["family"],
                sigma2=record["sigma2"],
                phi=record["phi"],
                nugget=record.get("nugget", 0.0),
                gamma=gamma,
                theta=record.get("theta_radians", 0.0),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model record: {exc}") from exc


def covariance_from_separation(model: CovarianceModel, hx, hy):
    """Vectorised covariance at separations ``h = s - s'``.

    The nugget is added only where the separation is exactly zero.
    """
    hx = np.asarray(hx, dtype=float)
    hy = np.asarray(hy, dtype=float)
    d2 = deformed_sq_distance(hx, hy, model.gamma, model.theta)
    out = model.sigma2 * np.asarray(base_correlation(model.family, d2, model.phi))
    if model.nugget:
        out = out + model.nugget * ((hx == 0.0) & (hy == 0.0))
    return float(out) if out.ndim == 0 else out


def covariance(model: CovarianceModel, s, s_prime) -> float:
    """``C(s, s')`` for two points."""
    hx = float(s[0]) - float(s_prime[0])
    hy = float(s[1]) - float(s_prime[1])
    # Symmetric by construction: d2 is even in h.
    return covariance_from_separation(model, hx, hy)


def b_absorption_check(model: CovarianceModel, b: float, hx=None, hy=None, rtol: float = 1e-12) -> bool:
    """Check that scaling distances by ``1/b`` equals rescaling the range to ``phi * b**2``.

    Test utility for the Gaussian family. When no separations are given, a
    fixed pseudo-random grid of 500 separations is used.
    """
    if model.family is not KernelFamily.GAUSSIAN:
        raise ValueError("b absorption is stated for the Gaussian family")
    if hx is None or hy is None:
        rng = np.random.default_rng(12345)
        scale = math.sqrt(model.phi) * max(b, 1.0) * max(model.gamma, 1.0)
        hx, hy = rng.uniform(-2 * scale, 2 * scale, size=(2, 500))
    hx = np.asarray(hx, dtype=float)
    hy = np.asarray(hy, dtype=float)
    unabsorbed = covariance_from_separation(model, hx / b, hy / b)
    absorbed = covariance_from_separation(model.replace(phi=model.phi * b * b), hx, hy)
    return bool(np.allclose(unabsorbed, absorbed, rtol=rtol, atol=0.0))
