"""Field export (legacy ASCII VTK), iteration-record CSV and data files."""

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np


def write_vtk(path, mesh, point_data=None, cell_data=None, title="aetlm"):
    """Legacy ASCII VTK unstructured grid with scalar point and cell fields."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double"]
    lines += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in mesh.vertices]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    for header, n, fields in (("POINT_DATA", nv, point_data), ("CELL_DATA", nt, cell_data)):
        if not fields:
            continue
        lines.append(f"{header} {n}")
        for name, vals in fields.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (n,):
                raise ValueError(f"field '{name}' has shape {vals.shape}, expected ({n},)")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in vals]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path):
    """Parse a file written by :func:`write_vtk`.

    Returns ``(points, triangles, point_data, cell_data)``.
    """
    tokens = Path(path).read_text().split("\n")
    it = iter(tokens[4:])
    points = triangles = None
    point_data, cell_data = {}, {}
    current = None
    for line in it:
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            points = np.array([[float(v) for v in next(it).split()[:2]] for _ in range(n)])
        elif key == "CELLS":
            n = int(parts[1])
            triangles = np.array([[int(v) for v in next(it).split()[1:]] for _ in range(n)])
        elif key == "CELL_TYPES":
            for _ in range(int(parts[1])):
                next(it)
        elif key == "POINT_DATA":
            current, size = point_data, int(parts[1])
        elif key == "CELL_DATA":
            current, size = cell_data, int(parts[1])
        elif key == "SCALARS":
            next(it)  # LOOKUP_TABLE
            current[parts[1]] = np.array([float(next(it)) for _ in range(size)])
    return points, triangles, point_data, cell_data


class RecordWriter:
    """Streams :class:`~aetlm.lm.IterationRecord` rows to CSV as they arrive,
    optionally writing a VTK snapshot of ``sigma_k`` every ``snapshot_every``
    iterations (and always for the last record)."""

    def __init__(self, path, mesh=None, snapshot_every=0, snapshot_dir=None, truth=None):
        self.path = Path(path)
        self.mesh = mesh
        self.snapshot_every = int(snapshot_every)
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else self.path.parent
        self.truth = truth
        self._fh = None
        self._writer = None
        self.records = []

    def __call__(self, record, sigma):
        row = record.row()
        if self._writer is None:
            self._fh = open(self.path, "w", newline="")
            self._writer = csv.DictWriter(self._fh, fieldnames=list(row), extrasaction="ignore")
            self._writer.writeheader()
        self._writer.writerow({k: _fmt(v) for k, v in row.items()})
        self._fh.flush()
        self.records.append(record)
        if self.mesh is not None and self.snapshot_every > 0 and len(sigma) == self.mesh.n_vertices:
            last = record.note != "" or math.isnan(record.alpha)
            if record.k % self.snapshot_every == 0 or last:
                fields = {"sigma": sigma}
                if self.truth is not None:
                    fields["sigma_truth"] = self.truth
                write_vtk(self.snapshot_dir / f"sigma_{record.k:04d}.vtk", self.mesh, fields)

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_voltages_csv(path, voltages, labels=None):
    """One row per measurement: ``pattern, U_1, ..., U_L``."""
    voltages = [np.asarray(U, dtype=float) for U in voltages]
    labels = range(len(voltages)) if labels is None else labels
    L = len(voltages[0]) if voltages else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pattern"] + [f"U_{l}" for l in range(1, L + 1)])
        for lab, U in zip(labels, voltages):
            w.writerow([lab] + [repr(float(v)) for v in U])


def read_voltages_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r[0] for r in rows], np.array([[float(v) for v in r[1:]] for r in rows])


def write_checks_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "passed", "value", "tolerance", "detail"])
        for r in results:
            w.writerow([r.name, r.passed, repr(float(r.value)), r.tolerance, r.detail])


def read_records_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_measurements(directory, measurements, sigma_truth=None):
    """One ``.npy`` per array: ``E_delta_<m>``, ``U_true_<m>``, ``pattern_<m>``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for m, meas in enumerate(measurements):
        for name in ("E_delta", "U_true", "pattern", "boundary"):
            val = getattr(meas, name)
            if val is not None:
                p = d / f"{name}_{m}.npy"
                np.save(p, np.asarray(val))
                written.append(p)
    levels = [float(meas.noise_level) for meas in measurements]
    (d / "noise_levels.json").write_text(json.dumps(levels))
    written.append(d / "noise_levels.json")
    if sigma_truth is not None:
        np.save(d / "sigma_truth.npy", np.asarray(sigma_truth))
        written.append(d / "sigma_truth.npy")
    return written


def load_measurements(directory):
    from .lm import Measurement

    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory {d} does not exist")
    levels = json.loads((d / "noise_levels.json").read_text())
    out = []
    for m, level in enumerate(levels):
        kw = {}
        for name in ("E_delta", "U_true", "pattern", "boundary"):
            p = d / f"{name}_{m}.npy"
            if p.exists():
                kw[name] = np.load(p)
        out.append(Measurement(noise_level=level, **kw))
    truth = d / "sigma_truth.npy"
    return out, (np.load(truth) if truth.exists() else None)


def content_hash(paths):
    """SHA-256 over the names and bytes of ``paths`` (sorted)."""
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(p.name.encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()
