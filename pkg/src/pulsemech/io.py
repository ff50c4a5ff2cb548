"""Dataset files: tables, marginal sets and phase-space maps.

Every file written here embeds a ``meta`` record (resolved configuration,
seed, provenance). Floats are written with ``repr`` so files are
byte-identical across runs with the same inputs. Formats are described in
docs/file-formats.md.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tomography import Histogram, MarginalSet, PhaseSpaceMap

MAP_MAGIC = "pulsemech-phase-space-map 1"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys; infinities written as Infinity)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_table(path_stem, columns: Mapping[str, np.ndarray], meta: Mapping, fmt: str = "csv") -> Path:
    """Write equal-length columns as CSV (meta in ``#`` lines) or JSON."""
    cols = {k: np.asarray(v) for k, v in columns.items()}
    lengths = {v.shape[0] for v in cols.values()}
    if len(lengths) > 1:
        raise ValueError("columns differ in length")
    if fmt == "json":
        return write_json(Path(f"{path_stem}.json"), {"meta": meta, "columns": cols})
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    for line in dumps(meta).splitlines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    n = lengths.pop() if lengths else 0
    for i in range(n):
        writer.writerow([_cell(v[i]) for v in cols.values()])
    path = Path(f"{path_stem}.csv")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer, np.bool_)):
        return x.item()
    return x


def read_table(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of :func:`write_table` for numeric and boolean columns."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        obj = json.loads(text)
        return obj["meta"], {k: np.asarray(v) for k, v in obj["columns"].items()}
    meta_lines = [l[2:] for l in text.splitlines() if l.startswith("# ")]
    rows = list(csv.reader(l for l in text.splitlines() if not l.startswith("#")))
    header, body = rows[0], rows[1:]
    cols = {h: _column([r[i] for r in body]) for i, h in enumerate(header)}
    return json.loads("\n".join(meta_lines)), cols


def _column(cells: list[str]) -> np.ndarray:
    if cells and all(c in ("True", "False") for c in cells):
        return np.array([c == "True" for c in cells])
    return np.array([float(c) for c in cells])


def write_marginals(path, ms: MarginalSet, meta: Mapping) -> Path:
    obj = {
        "meta": meta,
        "scale_m": ms.scale,
        "chi_used": ms.chi_used,
        "angles_rad": ms.angles,
        "histograms": [{"edges": h.edges, "counts": h.counts} for h in ms.histograms],
    }
    return write_json(path, obj)


def read_marginals(path) -> tuple[dict, MarginalSet]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    hists = tuple(Histogram(np.asarray(h["edges"]), np.asarray(h["counts"])) for h in obj["histograms"])
    ms = MarginalSet(np.asarray(obj["angles_rad"]), hists, obj["scale_m"], obj["chi_used"])
    return obj["meta"], ms


def write_map(path, wmap: PhaseSpaceMap, meta: Mapping) -> Path:
    """Text grid: magic line, JSON header line, then one row of W per P_M value."""
    header = {
        "n": wmap.n, "extent": wmap.extent, "normalization": wmap.normalization,
        "raw_mass": wmap.raw_mass, "negative_mass": wmap.negative_mass,
        "rows": "P_M ascending", "columns": "X_M ascending",
        "reconstruction": wmap.meta, "meta": meta,
    }
    buf = io.StringIO()
    buf.write(f"# {MAP_MAGIC}\n")
    buf.write("# " + json.dumps(_jsonable(header), sort_keys=True) + "\n")
    np.savetxt(buf, wmap.grid, fmt="%.17g")
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_map(path) -> tuple[dict, PhaseSpaceMap]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"# {MAP_MAGIC}":
        raise ValueError(f"{path}: not a phase-space map file")
    header = json.loads(lines[1][2:])
    grid = np.loadtxt(lines[2:], ndmin=2)
    wmap = PhaseSpaceMap(grid, header["extent"], header["normalization"], header["raw_mass"],
                         header["negative_mass"], header.get("reconstruction", {}))
    return header, wmap
