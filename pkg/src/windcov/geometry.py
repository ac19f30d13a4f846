"""
Wind-aligned space deformation.

The plane is rotated into wind coordinates, stretched by ``1/a`` along the
wind and ``1/b`` across it, and rotated back::

    A = R(theta) S(a, b) R(theta)^t = (1/b) R(theta) S(gamma, 1) R(theta)^t

with ``gamma = a / b``. Only ``gamma`` (and the angle) survive into the
covariance, since ``1/b`` is a global scale absorbed by the range parameter.
We write ``A[g] = R(theta) diag(1/g, 1) R(theta)^t``; note ``A[g]^t A[g] = A[g**2]``.

Matrices are plain ``(2, 2)`` float arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveStretch

# Relative stretches outside this band give numerically singular geometry.
GAMMA_MIN = 1e-6
GAMMA_MAX = 1e6


def normalize_angle(theta: float) -> float:
    """Map an angle to [0, pi). The deformation cannot tell theta from theta + pi."""
    t = math.fmod(float(theta), math.pi)
    if t < 0.0:
        t += math.pi
    if t >= math.pi:
        t = 0.0
    return t


def angle_difference(a: float, b: float) -> float:
    """Smallest absolute difference between two axis directions (mod pi)."""
    d = normalize_angle(a - b)
    return min(d, math.pi - d)


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma <= 0.0:
        raise NonPositiveStretch(f"relative stretch must be positive and finite, got {gamma!r}")
    if not GAMMA_MIN <= gamma <= GAMMA_MAX:
        raise NonPositiveStretch(
            f"relative stretch {gamma!r} outside [{GAMMA_MIN:g}, {GAMMA_MAX:g}]; geometry is degenerate"
        )
    return gamma


@dataclass(frozen=True)
class WindField:
    """Constant wind: speed ``v >= 0`` and direction ``angle`` (radians from +x)."""

    speed: float
    angle: float

    def __post_init__(self):
        if not math.isfinite(self.speed) or self.speed < 0:
            raise ValueError(f"wind speed must be finite and nonnegative, got {self.speed!r}")
        if not math.isfinite(self.angle):
            raise ValueError("wind angle must be finite")

    @property
    def vector(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.angle), math.sin(self.angle)])


@dataclass(frozen=True)
class DeformationParams:
    """Along-wind stretch ``a`` and cross-wind stretch ``b``."""

    a: float
    b: float

    def __post_init__(self):
        for name in ("a", "b"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise NonPositiveStretch(f"stretch {name} must be positive, got {v!r}")
        check_gamma(self.a / self.b)

    @property
    def gamma(self) -> float:
        return self.a / self.b


def rotation(theta: float) -> np.ndarray:
    """Counter-clockwise rotation by ``theta``."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def stretch(a: float, b: float) -> np.ndarray:
    """``diag(1/a, 1/b)``."""
    if not (a > 0 and b > 0):
        raise NonPositiveStretch(f"stretches must be positive, got a={a!r}, b={b!r}")
    return np.array([[1.0 / a, 0.0], [0.0, 1.0 / b]])


def anisotropy_matrix(gamma: float, theta: float) -> np.ndarray:
    """``A[gamma] = R(theta) diag(1/gamma, 1) R(theta)^t``.

    Entries are written out in closed form so the result is exactly symmetric.
    """
    g = 1.0 / check_gamma(gamma)
    c, s = math.cos(theta), math.sin(theta)
    off = c * s * (g - 1.0)
    return np.array([[c * c * g + s * s, off], [off, s * s * g + c * c]])


def deformation_matrix(a: float, b: float, theta: float) -> np.ndarray:
    """The full map ``A = R(theta) S(a, b) R(theta)^t`` (before absorbing ``b``)."""
    params = DeformationParams(a, b)
    return anisotropy_matrix(params.gamma, theta) / params.b


def deformed_sq_distance(hx, hy, gamma: float, theta: float):
    """Quadratic form ``h^t A[gamma**2] h`` for separations ``(hx, hy)``.

    Evaluated as ``|h|^2 + (1/gamma**2 - 1) (u . h)^2`` with ``u`` the wind
    unit vector, which reduces to the plain ``hx**2 + hy**2`` bit for bit
    when ``gamma == 1``. Accepts scalars or broadcastable arrays.
    """
    g = check_gamma(gamma)
    hx = np.asarray(hx, dtype=float)
    hy = np.asarray(hy, dtype=float)
    along = math.cos(theta) * hx + math.sin(theta) * hy
    d2 = hx * hx + hy * hy + (1.0 / (g * g) - 1.0) * along * along
    # Cancellation for large gamma can dip a hair below zero.
    d2 = np.maximum(d2, 0.0)
    return float(d2) if d2.ndim == 0 else d2


def deformed_distance(hx, hy, a: float, b: float, theta: float):
    """Euclidean length of ``A h`` with the cross-wind scale ``1/b`` kept."""
    params = DeformationParams(a, b)
    return np.sqrt(deformed_sq_distance(hx, hy, params.gamma, theta)) / params.b


def wind_link_gamma(v: float, gamma_prime: float) -> float:
    """Relative stretch tied to wind speed: ``exp(v * gamma_prime)``."""
    if v < 0:
        raise ValueError(f"wind speed must be nonnegative, got {v!r}")
    return math.exp(v * gamma_prime)


def is_symmetric(m: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = float(np.max(np.abs(m))) or 1.0
    return abs(m[0, 1] - m[1, 0]) <= rtol * scale
