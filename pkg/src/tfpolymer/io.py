"""Output writers: legacy ASCII VTK snapshots and diagnostics CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grid import Grid2D

__all__ = ["write_vtk", "write_rows_csv"]


def _fmt(a) -> str:
    return "\n".join(" ".join(f"{v:.10e}" for v in row) for row in np.atleast_2d(a))


def write_vtk(path, grid: Grid2D, fields: dict[str, np.ndarray], title: str = "snapshot") -> Path:
    """Node fields on a STRUCTURED_POINTS dataset.

    Scalars have shape (Nx, Ny), vectors (2, Nx, Ny); stacks of scalars
    (C, Nx, Ny) with C != 2 are written as components ``name_0``, ``name_1``, ...
    """
    path = Path(path)
    Nx, Ny = grid.shape
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {Nx} {Ny} 1", f"ORIGIN {grid.x_extent[0]:.10e} {grid.y_extent[0]:.10e} 0",
             f"SPACING {grid.dx:.10e} {grid.dy:.10e} 1", f"POINT_DATA {Nx * Ny}"]
    for name, data in fields.items():
        data = np.asarray(data, dtype=float)
        if data.shape == (Nx, Ny):
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(data.T.reshape(-1, 1))]
        elif data.shape == (2, Nx, Ny):
            vec = np.stack([data[0].T.ravel(), data[1].T.ravel(), np.zeros(Nx * Ny)], axis=1)
            lines += [f"VECTORS {name} double", _fmt(vec)]
        elif data.ndim == 3 and data.shape[1:] == (Nx, Ny):
            for c, comp in enumerate(data):
                lines += [f"SCALARS {name}_{c} double 1", "LOOKUP_TABLE default", _fmt(comp.T.reshape(-1, 1))]
        else:
            raise ValueError(f"field {name!r} has shape {data.shape}, not a node field on {grid.shape}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_rows_csv(path, header, rows) -> Path:
    """Header plus rows, floats in repr form so reruns are byte-identical."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path
