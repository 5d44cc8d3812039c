"""CSV time series and legacy-VTK field output."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh

VTK_TETRA = 10


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(records, columns, path) -> None:
    """One row per record, columns in the given order, round-trippable floats."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(columns)
            for rec in records:
                wr.writerow([_fmt(rec[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc.strerror}") from exc


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = rows[0]
    recs = []
    for row in rows[1:]:
        rec = {}
        for k, v in zip(header, row):
            rec[k] = int(v) if v.lstrip("-").isdigit() else float(v)
        recs.append(rec)
    return header, recs


def write_vtk(path, mesh: Mesh, point_data=None, cell_data=None, point_vectors=None,
              title: str = "alveolus fields") -> None:
    """Legacy ASCII UNSTRUCTURED_GRID with scalar and vector attributes."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    point_vectors = point_vectors or {}
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [" ".join(map(repr, map(float, v))) for v in mesh.vertices]
    nt = mesh.n_tets
    lines.append(f"CELLS {nt} {5 * nt}")
    lines += ["4 " + " ".join(map(str, t)) for t in mesh.tets]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(VTK_TETRA)] * nt
    if point_data or point_vectors:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, vals in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(x)) for x in np.asarray(vals).ravel()]
        for name, vals in point_vectors.items():
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(map(repr, map(float, v))) for v in np.asarray(vals)]
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        for name, vals in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(x)) for x in np.asarray(vals).ravel()]
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK {path}: {exc.strerror}") from exc


def read_vtk(path) -> dict:
    """Parse files written by :func:`write_vtk`.

    Returns a dict with ``vertices``, ``tets``, ``cell_types``, ``point_data``,
    ``cell_data`` and ``point_vectors``.
    """
    tokens = Path(path).read_text().split("\n")
    i = 4
    out = {"point_data": {}, "cell_data": {}, "point_vectors": {}}

    def take(n):
        nonlocal i
        block = tokens[i:i + n]
        i += n
        return block

    n_pts = int(tokens[i].split()[1])
    i += 1
    out["vertices"] = np.array([[float(x) for x in ln.split()] for ln in take(n_pts)])
    n_cells = int(tokens[i].split()[1])
    i += 1
    out["tets"] = np.array([[int(x) for x in ln.split()[1:]] for ln in take(n_cells)], dtype=np.int64)
    i += 1
    out["cell_types"] = np.array([int(x) for x in take(n_cells)])
    where, count = None, 0
    while i < len(tokens) and tokens[i].strip():
        head = tokens[i].split()
        i += 1
        if head[0] == "POINT_DATA":
            where, count = "point_data", int(head[1])
        elif head[0] == "CELL_DATA":
            where, count = "cell_data", int(head[1])
        elif head[0] == "SCALARS":
            i += 1  # lookup table
            out[where][head[1]] = np.array([float(x) for x in take(count)])
        elif head[0] == "VECTORS":
            out["point_vectors"][head[1]] = np.array([[float(x) for x in ln.split()]
                                                      for ln in take(count)])
        else:
            raise ValueError(f"{path}: unexpected VTK section {head[0]!r}")
    return out
