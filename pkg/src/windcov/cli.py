"""Command-line front end: ``windcov <command> --config FILE [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import io as wio
from .config import (DEMO_DEFORM, SURFACE_MODEL, MANIFEST_KEY, Config, apply_overrides, grid_from,
                     load_config, model_from, section, to_plain)
from .errors import ConfigError, WindcovError
from .geometry import deformation_matrix, normalize_angle, rotation
from .inference import empirical_variogram, fit
from .kernels import CovarianceModel, KernelFamily
from .synthesis import FieldSample, export_covariance_surface, sample_field
from .transport import SimConfig, run as run_transport

log = logging.getLogger("windcov")

COMMANDS = ("sample", "transport", "variogram", "fit", "surface", "deform-demo", "pipeline")


@contextlib.contextmanager
def stage(name: str):
    """Prefix errors raised inside a pipeline stage with the stage name."""
    try:
        yield
    except WindcovError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _formats(cfg: Config) -> set:
    fmt = str(section(cfg, "output", required=False).get("format", "csv")).lower()
    if fmt not in ("csv", "json", "both"):
        raise ConfigError(f"{cfg.where('output.format')} must be csv, json or both")
    return {"csv", "json"} if fmt == "both" else {fmt}


def _write_field(cfg, out: Path, sample: FieldSample, stem="field"):
    fmts = _formats(cfg)
    if "csv" in fmts:
        wio.write_field_csv(out / f"{stem}.csv", sample)
    if "json" in fmts:
        wio.write_field_json(out / f"{stem}.json", sample)


def write_manifest(out: Path, command: str, cfg: Config):
    doc = {MANIFEST_KEY: {"command": command, "version": __version__}, "config": to_plain(dict(cfg))}
    (out / "manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_sample(cfg: Config, out: Path) -> dict:
    model = model_from(cfg)
    sites = grid_from(cfg)
    sec = section(cfg, "sample", required=False)
    seed = int(sec.get("seed", 0))
    sample = sample_field(model, sites, seed, float(sec.get("mean", 0.0)))
    _write_field(cfg, out, sample)
    return {"seed": seed, "n": len(sites), "mean": float(sample.values.mean()),
            "variance": float(sample.values.var())}


def _sim_config(cfg: Config) -> SimConfig:
    try:
        return SimConfig.from_record(section(cfg, "transport"))
    except ConfigError as exc:
        raise ConfigError(f"{cfg.where('transport')}: {exc}") from exc


def cmd_transport(cfg: Config, out: Path) -> dict:
    sim = _sim_config(cfg)
    sites = grid_from(cfg)
    result = run_transport(sim, sites)
    wio.write_concentration_csv(out / "concentration.csv", result.fields)
    summary = result.summary()
    wio.write_json(out / "summary.json", summary)
    if "json" in _formats(cfg):
        wio.write_json(out / "run.json", {
            "config": to_plain(sim.to_record()),
            "sources": result.sources.tolist(),
            "fields": [{"t_index": f.time_index, "values": f.concentrations.tolist()} for f in result.fields],
        })
    return {"seed": sim.seed, "n_sources": summary["n_sources"], "n_records": summary["n_records"],
            "final_total_mass": summary["total_mass"][-1] if summary["total_mass"] else 0.0}


def _variogram_args(cfg: Config, sample: FieldSample):
    sec = section(cfg, "variogram", required=False)
    n_dir = int(sec.get("n_direction_bins", 4))
    edges = sec.get("lag_edges")
    if edges is None:
        ext = np.ptp(sample.sites.points, axis=0).max()
        edges = np.linspace(0.0, ext / 2, 11).tolist()
    return n_dir, edges


def cmd_variogram(cfg: Config, out: Path) -> dict:
    sec = section(cfg, "variogram")
    if "input" not in sec:
        raise ConfigError(f"{cfg.where('variogram')} needs an input field path")
    sample = wio.read_field(sec["input"])
    vario = empirical_variogram(sample, *_variogram_args(cfg, sample))
    wio.write_variogram_csv(out / "variogram.csv", vario)
    return {"n_pairs": int(vario.pair_counts.sum())}


def _default_init(sample: FieldSample, family: KernelFamily) -> dict:
    var = float(sample.values.var()) or 1.0
    length = 0.2 * float(np.ptp(sample.sites.points, axis=0).max() or 1.0)
    phi = length ** 2 if family is KernelFamily.GAUSSIAN else length
    return {"sigma2": var, "phi": phi, "nugget": 0.05 * var, "gamma": 1.5, "theta_radians": 0.0}


def _fit(cfg: Config, sample: FieldSample):
    sec = section(cfg, "fit", required=False)
    family = KernelFamily.parse(sec.get("family", "gaussian"))
    init_rec = _default_init(sample, family)
    init_rec.update(sec.get("init") or {})
    init_rec["family"] = family.value
    try:
        init = CovarianceModel.from_record(init_rec)
    except ConfigError as exc:
        raise ConfigError(f"{cfg.where('fit.init')}: {exc}") from exc
    fixed = set(sec.get("fixed") or ())
    return fit(sample, family, init, fixed,
               restarts=int(sec.get("restarts", 5)),
               max_iter=int(sec.get("max_iter", 2000)),
               wind_speed=sec.get("wind_speed"),
               seed=int(sec.get("seed", 0)),
               compute_se=bool(sec.get("standard_errors", False)))


def cmd_fit(cfg: Config, out: Path) -> dict:
    sec = section(cfg, "fit")
    if "input" not in sec:
        raise ConfigError(f"{cfg.where('fit')} needs an input field path")
    result = _fit(cfg, wio.read_field(sec["input"]))
    wio.write_json(out / "fit.json", to_plain(result.to_record()))
    return result.to_record()["model"]


def cmd_surface(cfg: Config, out: Path) -> dict:
    model = model_from(cfg, default=SURFACE_MODEL)
    grid = grid_from(cfg)
    wio.write_table(out / "surface_original.csv", export_covariance_surface(model.isotropic(), grid))
    wio.write_table(out / "surface_deformed.csv", export_covariance_surface(model, grid))
    return {"model": model.to_record(), "n": len(grid)}


def deform_demo_geometry(a: float, b: float, theta: float, n_points: int = 360) -> dict:
    """Unit circle and axes before/after the map ``R(theta) S(a, b) R(theta)^t``."""
    if n_points % 4:
        raise ConfigError("deform.n_points must be a multiple of 4")
    A = deformation_matrix(a, b, theta)
    t = theta + 2 * math.pi * np.arange(n_points + 1) / n_points
    circle = np.column_stack([np.cos(t), np.sin(t)])
    R = rotation(theta)
    wind_axes = np.array([-R[:, 0], R[:, 0], -R[:, 1], R[:, 1]])
    orig_axes = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
    return {
        "matrix": A,
        "circle": circle,
        "circle_deformed": circle @ A.T,
        "axes": orig_axes,
        "axes_deformed": wind_axes @ A.T,
    }


def cmd_deform_demo(cfg: Config, out: Path) -> dict:
    sec = dict(DEMO_DEFORM)
    sec.update(section(cfg, "deform", required=False))
    a, b, theta = float(sec["a"]), float(sec["b"]), float(sec["theta_radians"])
    geo = deform_demo_geometry(a, b, theta, int(sec["n_points"]))
    wio.write_table(out / "circle_original.csv", geo["circle"], ("x", "y"))
    wio.write_table(out / "circle_deformed.csv", geo["circle_deformed"], ("x", "y"))
    for name in ("axes", "axes_deformed"):
        pts = geo[name]
        rows = [(k // 2, x, y) for k, (x, y) in enumerate(pts)]
        fname = "axes_original.csv" if name == "axes" else "axes_deformed.csv"
        wio.write_csv(out / fname, ("segment", "x", "y"), rows)
    A = geo["matrix"]
    info = {
        "a": a, "b": b, "theta_radians": theta,
        "gamma": a / b,
        "matrix_row_major": A.ravel().tolist(),
        "singular_values": sorted(np.linalg.svd(A, compute_uv=False).tolist()),
        "semi_axes": {"along_wind": 1.0 / a, "cross_wind": 1.0 / b},
        "orientation_radians": normalize_angle(theta),
    }
    wio.write_json(out / "transform.json", info)
    return info


def cmd_pipeline(cfg: Config, out: Path) -> dict:
    psec = section(cfg, "pipeline", required=False)
    source = str(psec.get("source", "gp"))
    truth = {}
    with stage("generate"):
        if source == "gp":
            model = model_from(cfg)
            sites = grid_from(cfg)
            ssec = section(cfg, "sample", required=False)
            sample = sample_field(model, sites, int(ssec.get("seed", 0)), float(ssec.get("mean", 0.0)))
            truth = model.to_record()
            truth["theta_radians"] = model.theta_normalized
        elif source == "transport":
            sim = _sim_config(cfg)
            sites = grid_from(cfg)
            result = run_transport(sim, sites)
            if not result.fields:
                raise ConfigError("transport run recorded no fields; check n_steps and burn_in")
            which = str(psec.get("field", "mean"))
            if which not in ("mean", "last"):
                raise ConfigError(f"{cfg.where('pipeline.field')} must be mean or last")
            values = result.mean_field() if which == "mean" else result.fields[-1].concentrations
            sample = FieldSample(sites, values, seed=sim.seed, model_used="transport-sim")
            wio.write_concentration_csv(out / "concentration.csv", result.fields)
            truth = {"theta_radians": normalize_angle(sim.wind.angle)}
        else:
            raise ConfigError(f"{cfg.where('pipeline.source')} must be gp or transport")
        _write_field(cfg, out, sample)
    with stage("variogram"):
        vario = empirical_variogram(sample, *_variogram_args(cfg, sample))
        wio.write_variogram_csv(out / "variogram.csv", vario)
    with stage("fit"):
        result = _fit(cfg, sample)
        wio.write_json(out / "fit.json", to_plain(result.to_record()))
    fitted = result.model.to_record()
    rows = [(k, truth[k], fitted[k]) for k in ("sigma2", "phi", "nugget", "gamma", "theta_radians") if k in truth]
    if rows:
        with (out / "comparison.csv").open("w", encoding="utf-8") as fh:
            fh.write("parameter,true,fitted\n")
            for k, t, f in rows:
                fh.write(f"{k},{float(t)!r},{float(f)!r}\n")
    return {"seed": sample.seed, "fitted": fitted, "truth": truth, "converged": result.converged}


HANDLERS = {
    "sample": cmd_sample,
    "transport": cmd_transport,
    "variogram": cmd_variogram,
    "fit": cmd_fit,
    "surface": cmd_surface,
    "deform-demo": cmd_deform_demo,
    "pipeline": cmd_pipeline,
}


def execute(command: str, cfg: Config, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, command, cfg)
    return HANDLERS[command](cfg, out)


def _base_seed(cfg: Config) -> int:
    for name in ("sample", "transport", "fit"):
        sec = cfg.get(name)
        if isinstance(sec, dict) and "seed" in sec:
            return int(sec["seed"])
    return 0


def _replicate(args):
    command, cfg_dict, lines, seed, out = args
    cfg = Config(cfg_dict)
    cfg.lines = lines
    return execute(command, apply_overrides(cfg, [], seed=seed), Path(out))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="windcov", description="Wind-deformed spatial covariance toolkit")
    p.add_argument("--version", action="version", version=f"windcov {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML config (or a manifest.yaml from a previous run)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--out", default="windcov_out", help="output directory (created if absent)")
    p.add_argument("--replicates", type=int, default=1, help="run N independent seeds concurrently")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set model.gamma=2")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = apply_overrides(load_config(args.config), args.overrides, seed=args.seed)
        if args.replicates < 1:
            raise ConfigError("--replicates must be at least 1")
        if args.replicates == 1:
            summary = execute(args.command, cfg, out)
        else:
            base = _base_seed(cfg)
            jobs = [(args.command, dict(cfg), getattr(cfg, "lines", {}), base + k, str(out / f"rep_{k:03d}"))
                    for k in range(args.replicates)]
            workers = min(args.replicates, os.cpu_count() or 1)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                reps = list(pool.map(_replicate, jobs))
            out.mkdir(parents=True, exist_ok=True)
            write_manifest(out, args.command, cfg)
            summary = {"replicates": reps}
        wio.write_json(out / "summary_cli.json", to_plain(summary))
    except WindcovError as exc:
        print(f"windcov {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"windcov {args.command}: invalid input: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
