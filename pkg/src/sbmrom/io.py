"""Persistence: matrix store, spectra and report CSV, legacy VTK fields."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .pod import cumulative_energy

MAGIC = b"SROM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

REPORT_FIELDS = ("mu0", "mu1", "mu2", "N", "e_u", "e_p", "t_online_s", "t_fom_s", "iters")


class ArtifactIOError(OSError):
    """Reading or writing an artifact failed; the message names the path."""


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_matrix(path, A, metadata: dict | None = None) -> Path:
    """Write a float64 matrix with the ``SROM`` header and a JSON sidecar.

    The sidecar always exists; it holds ``metadata`` (``{}`` when omitted).
    Output is byte-deterministic for equal inputs.
    """
    path = Path(path)
    A = np.ascontiguousarray(np.asarray(A, dtype="<f8"))
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("only 1-d or 2-d arrays can be stored")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, A.shape[0], A.shape[1]))
            fh.write(A.tobytes(order="C"))
        with open(_sidecar(path), "w") as fh:
            json.dump(metadata or {}, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write matrix to {path}: {exc}") from exc
    return path


def read_matrix(path) -> tuple[np.ndarray, dict]:
    """Read a matrix written by :func:`write_matrix` and its sidecar metadata."""
    path = Path(path)
    try:
        raw = path.read_bytes()
        side = _sidecar(path)
        meta = json.loads(side.read_text()) if side.exists() else {}
    except OSError as exc:
        raise ArtifactIOError(f"cannot read matrix from {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise ArtifactIOError(f"{path}: file too short for a header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArtifactIOError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ArtifactIOError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise ArtifactIOError(f"{path}: expected {expected} bytes, found {len(raw)}")
    A = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).copy()
    return A, meta


def write_spectrum(path, lam) -> Path:
    """CSV with columns ``index, lambda, cumulative_energy``."""
    path = Path(path)
    lam = np.asarray(lam, dtype=float)
    frac = cumulative_energy(lam)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "lambda", "cumulative_energy"])
            for k, (l, c) in enumerate(zip(lam, frac)):
                w.writerow([k, repr(float(l)), repr(float(c))])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write spectrum to {path}: {exc}") from exc
    return path


def read_spectrum(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read spectrum from {path}: {exc}") from exc
    return np.array([float(r["lambda"]) for r in rows])


def write_report(path, rows) -> Path:
    """Write report rows (dicts keyed by ``REPORT_FIELDS``), sorted by (mu, N)."""
    path = Path(path)
    ordered = sorted(rows, key=lambda r: (float(r["mu0"]), float(r["mu1"]), float(r["mu2"]), int(r["N"])))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, extrasaction="ignore")
            w.writeheader()
            for r in ordered:
                w.writerow({k: (repr(float(r[k])) if k not in ("N", "iters") else int(r[k]))
                            for k in REPORT_FIELDS})
    except OSError as exc:
        raise ArtifactIOError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_report(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
                raise ArtifactIOError(f"{path}: unexpected report header {reader.fieldnames!r}")
            rows = list(reader)
    except OSError as exc:
        if isinstance(exc, ArtifactIOError):
            raise
        raise ArtifactIOError(f"cannot read report from {path}: {exc}") from exc
    return [{k: (int(v) if k in ("N", "iters") else float(v)) for k, v in r.items()} for r in rows]


def write_vtk(path, nodes, triangles, point_data: dict | None = None, title: str = "sbmrom field") -> Path:
    """Legacy ASCII VTK unstructured grid of triangles.

    ``point_data`` maps names to ``(n,)`` scalars or ``(n, 2|3)`` vectors;
    2-d vectors are padded with a zero z component.
    """
    path = Path(path)
    nodes = np.asarray(nodes, dtype=float)
    tri = np.asarray(triangles, dtype=np.int64)
    n = len(nodes)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in nodes.tolist()]
    lines.append(f"CELLS {len(tri)} {4 * len(tri)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in tri.tolist()]
    lines.append(f"CELL_TYPES {len(tri)}")
    lines += ["5"] * len(tri)
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            v = np.asarray(values, dtype=float)
            if v.shape[0] != n:
                raise ValueError(f"point data {name!r} has {v.shape[0]} rows for {n} points")
            if v.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(s)) for s in v]
            else:
                if v.shape[1] == 2:
                    v = np.column_stack([v, np.zeros(n)])
                lines.append(f"VECTORS {name} double")
                lines += [f"{a!r} {b!r} {c!r}" for a, b, c in v.tolist()]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Parse files written by :func:`write_vtk`.

    Returns ``{"points": (n, 3), "cells": (m, 3), "point_data": {name: array}}``.
    """
    try:
        tokens = Path(path).read_text().split("\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot read VTK file {path}: {exc}") from exc
    lines = [t.strip() for t in tokens]
    out = {"points": None, "cells": None, "point_data": {}}
    i = 4
    n = 0
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        key = head[0]
        if key == "POINTS":
            n = int(head[1])
            out["points"] = np.array([l.split() for l in lines[i + 1:i + 1 + n]], dtype=float)
            i += 1 + n
        elif key == "CELLS":
            m = int(head[1])
            rows = np.array([l.split() for l in lines[i + 1:i + 1 + m]], dtype=np.int64)
            if np.any(rows[:, 0] != 3):
                raise ArtifactIOError(f"{path}: only triangle cells are supported")
            out["cells"] = rows[:, 1:]
            i += 1 + m
        elif key == "CELL_TYPES":
            i += 1 + int(head[1])
        elif key == "POINT_DATA":
            i += 1
        elif key == "SCALARS":
            out["point_data"][head[1]] = np.array(lines[i + 2:i + 2 + n], dtype=float)
            i += 2 + n
        elif key == "VECTORS":
            out["point_data"][head[1]] = np.array([l.split() for l in lines[i + 1:i + 1 + n]], dtype=float)
            i += 1 + n
        else:
            raise ArtifactIOError(f"{path}: unexpected section {key!r}")
    return out
