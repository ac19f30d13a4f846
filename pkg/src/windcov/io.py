"""CSV and JSON readers/writers for fields, surfaces, variograms and fits.

CSV: UTF-8, comma separated, one header row, floats written with ``repr``
so that reading back reproduces every value bit for bit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kernels import CovarianceModel
from .synthesis import FieldSample, GridSpec, SiteSet


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(header, float array)``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(v) for v in row] for row in r if row]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def write_table(path, table: np.ndarray, header=("x", "y", "value")) -> Path:
    return write_csv(path, header, table.tolist())


def write_field_csv(path, sample: FieldSample) -> Path:
    rows = np.column_stack([sample.sites.points, sample.values]).tolist()
    return write_csv(path, ("x", "y", "value"), rows)


def read_field_csv(path, seed: int = 0) -> FieldSample:
    header, data = read_csv(path)
    if header[:3] != ["x", "y", "value"]:
        raise ValueError(f"{path}: expected header x,y,value, got {','.join(header)}")
    return FieldSample(SiteSet(data[:, :2]), data[:, 2], seed=seed)


def field_to_record(sample: FieldSample) -> dict:
    model = sample.model_used
    if isinstance(model, CovarianceModel):
        model = model.to_record()
    grid = sample.sites.grid
    rec = {
        "sites": sample.sites.points.tolist(),
        "values": sample.values.tolist(),
        "seed": int(sample.seed),
        "model": model,
    }
    if grid is not None:
        rec["grid"] = {"nx": grid.nx, "ny": grid.ny, "spacing": grid.spacing, "origin": list(grid.origin)}
    return rec


def field_from_record(rec: dict) -> FieldSample:
    grid = rec.get("grid")
    spec = GridSpec(grid["nx"], grid["ny"], grid["spacing"], tuple(grid["origin"])) if grid else None
    model = rec.get("model")
    if isinstance(model, dict):
        model = CovarianceModel.from_record(model)
    return FieldSample(SiteSet(rec["sites"], spec), rec["values"], seed=rec.get("seed", 0), model_used=model)


def write_json(path, doc) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_field_json(path, sample: FieldSample) -> Path:
    return write_json(path, field_to_record(sample))


def read_field(path) -> FieldSample:
    """Read a FieldSample from ``.json`` or ``.csv`` by extension."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return field_from_record(read_json(path))
    return read_field_csv(path)


def write_variogram_csv(path, vario) -> Path:
    return write_csv(path, ("direction_bin_center", "lag_bin_center", "semivariance", "pair_count"),
                     vario.rows())


def write_concentration_csv(path, fields) -> Path:
    def rows():
        for f in fields:
            for (x, y), v in zip(f.sites.points, f.concentrations):
                yield int(f.time_index), x, y, v
    return write_csv(path, ("t_index", "x", "y", "value"), rows())
