"""YAML run configs: loading, ``--set`` overrides, and key/line diagnostics.

A config is a mapping of sections, one per stage::

    model:     {family, sigma2, phi, nugget, gamma | a+b | wind_speed+gamma_prime, theta_radians}
    grid:      {nx, ny, spacing, origin: [x0, y0]}
    sample:    {seed, mean}
    transport: {domain_half_width, dt, n_steps, ..., wind: {speed, angle}, seed, burn_in}
    variogram: {input, n_direction_bins, lag_edges}
    fit:       {input, family, init: {...}, fixed: [...], restarts, max_iter, wind_speed, seed}
    deform:    {a, b, theta_radians, n_points}
    pipeline:  {source: gp | transport, field: mean | last}
    output:    {format: csv | json | both}

A manifest written by a previous run can be passed as the config; its
``config`` section is used.
"""
from __future__ import annotations

import copy
import math
from pathlib import Path

import yaml

from .errors import ConfigError, MissingGridMetadata
from .kernels import CovarianceModel
from .synthesis import SiteSet

MANIFEST_KEY = "windcov_manifest"

SURFACE_MODEL = {"family": "exponential", "sigma2": 1.0, "phi": 1.0, "nugget": 0.0,
              "a": 3.0, "b": 1.0, "theta_radians": math.pi / 12}
DEMO_DEFORM = {"a": 3.0, "b": 2.0 / 3.0, "theta_radians": math.pi / 12, "n_points": 360}


class Config(dict):
    """Nested config mapping that remembers the source line of each key."""

    lines: dict

    def where(self, dotted: str) -> str:
        line = getattr(self, "lines", {}).get(dotted)
        return f"{dotted} (line {line})" if line else dotted


def _key_lines(node, prefix="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}{k.value}"
            out[key] = k.start_mark.line + 1
            _key_lines(v, key + ".", out)
    return out


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
        lines = _key_lines(yaml.compose(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if MANIFEST_KEY in data:
        data = data.get("config") or {}
        lines = {k[len("config."):]: v for k, v in lines.items() if k.startswith("config.")}
    cfg = Config(data)
    cfg.lines = lines
    return cfg


def apply_overrides(cfg: Config, assignments, seed=None) -> Config:
    """Apply ``key.path=value`` strings (values parsed as YAML) and a global seed."""
    out = Config(copy.deepcopy(dict(cfg)))
    out.lines = getattr(cfg, "lines", {})
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {p} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    if seed is not None:
        for section in ("sample", "transport", "fit"):
            out.setdefault(section, {})["seed"] = int(seed)
    return out


def section(cfg: Config, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"config is missing section {name!r}")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{cfg.where(name)} must be a mapping")
    return sec


def model_from(cfg: Config, name: str = "model", default=None) -> CovarianceModel:
    rec = cfg.get(name, default)
    if rec is None:
        raise ConfigError(f"config is missing section {name!r}")
    try:
        return CovarianceModel.from_record(rec)
    except ConfigError as exc:
        raise ConfigError(f"{cfg.where(name)}: {exc}") from exc


def grid_from(cfg: Config) -> SiteSet:
    g = cfg.get("grid")
    if not g:
        raise MissingGridMetadata("config needs a grid section with nx, ny, spacing, origin")
    missing = {"nx", "ny", "spacing"} - set(g)
    if missing:
        raise MissingGridMetadata(f"{cfg.where('grid')} missing {', '.join(sorted(missing))}")
    try:
        return SiteSet.from_grid(int(g["nx"]), int(g["ny"]), float(g["spacing"]),
                                 tuple(g.get("origin", (0.0, 0.0))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg.where('grid')}: {exc}") from exc


def to_plain(obj):
    """Convert numpy scalars/arrays in a nested structure to plain Python for YAML/JSON."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj
