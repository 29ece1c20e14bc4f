"""Field dumps (CSV, legacy VTK) and convergence tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .stepper import State

VTK_TRIANGLE = 5


@dataclass
class ConvergenceRow:
    """One resolution of a convergence table.

    ``errors[scheme][norm]`` with norm ``L2`` or ``H1``; ``orders`` has the
    same layout and is None in the first row.
    """

    M: int
    h0: float
    k: float
    errors: dict = field(default_factory=dict)
    orders: dict | None = None


def observed_orders(rows: list) -> None:
    """Fill ``orders`` with log(e_prev/e) / log(h_prev/h) from the second row on."""
    def order(e0, e1, ratio):
        return float(np.log(e0 / e1) / ratio) if e0 > 0 and e1 > 0 else float("nan")

    for prev, row in zip(rows, rows[1:]):
        ratio = np.log(prev.h0 / row.h0)
        row.orders = {
            s: {nm: order(prev.errors[s][nm], e, ratio) for nm, e in errs.items()}
            for s, errs in row.errors.items()
        }
    if rows:
        rows[0].orders = None


def _fmt(x) -> str:
    return "%.17g" % x


def write_fields_csv(path, mesh: Mesh, state: State) -> None:
    """``x,y,u,c`` per node, 17 significant digits."""
    path = Path(path)
    table = np.column_stack([mesh.nodes, state.alpha, state.beta])
    try:
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header="x,y,u,c", comments="")
    except OSError as exc:
        raise OSError(f"cannot write field dump {path}: {exc}") from exc


def read_fields_csv(path) -> np.ndarray:
    return np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)


def write_vtk(path, mesh: Mesh, state: State, title: str = "ksafc fields") -> None:
    """Legacy ASCII unstructured grid with point data ``u`` and ``c``."""
    path = Path(path)
    n, K = mesh.n_nodes, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {K} {4 * K}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {K}")
    lines += [str(VTK_TRIANGLE)] * K
    lines.append(f"POINT_DATA {n}")
    for name, values in (("u", state.alpha), ("c", state.beta)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in values]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc


def write_convergence_csv(path, rows: list, norm: str, schemes) -> None:
    """Columns ``M,h0,k,<scheme>,<scheme>_order,...`` with errors in ``norm``."""
    path = Path(path)
    schemes = [str(s) for s in schemes]
    header = ["M", "h0", "k"] + [c for s in schemes for c in (s, f"{s}_order")]
    try:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(header)
            for row in rows:
                rec = [row.M, _fmt(row.h0), _fmt(row.k)]
                for s in schemes:
                    rec.append(_fmt(row.errors[s][norm]))
                    rec.append("" if row.orders is None else _fmt(row.orders[s][norm]))
                out.writerow(rec)
    except OSError as exc:
        raise OSError(f"cannot write convergence table {path}: {exc}") from exc


def read_convergence_csv(path, norm: str) -> list:
    """Inverse of :func:`write_convergence_csv`."""
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        schemes = [c for c in reader.fieldnames[3:] if not c.endswith("_order")]
        rows = []
        for rec in reader:
            errors = {s: {norm: float(rec[s])} for s in schemes}
            orders = None
            if rec[f"{schemes[0]}_order"] != "":
                orders = {s: {norm: float(rec[f"{s}_order"])} for s in schemes}
            rows.append(ConvergenceRow(int(rec["M"]), float(rec["h0"]), float(rec["k"]), errors, orders))
    return rows
