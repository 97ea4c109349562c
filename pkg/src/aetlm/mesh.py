"""Triangular meshes of the computational domains.

Disks and ellipses are meshed by constrained Delaunay triangulation
(``triangle``) of a boundary polygon that is split exactly at electrode
arc endpoints, so no boundary edge straddles an electrode/gap transition.
Rectangles get a structured right-triangle grid.

Boundary labels are integers: ``l >= 1`` is electrode ``l``, ``GAP`` (0) is
an uncovered boundary piece and ``DIRICHLET`` (-1) marks boundaries that
carry prescribed potentials (rectangles, interior submeshes).
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import triangle as tr

from . import kernels

GAP = 0
DIRICHLET = -1

# Mean triangle area produced by ``triangle`` with our switches, relative
# to the area of an equilateral triangle with edge h.  Measured on disks.
_AREA_FILL = 0.635


def _readonly(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ElectrodeLayout:
    """``count`` equal electrodes covering ``coverage`` of the boundary angle.

    Electrode ``l`` (1-based) is centred at polar angle ``2*pi*l/count``,
    the same angles used by the Fourier current patterns.
    """

    count: int
    coverage: float = 0.5
    custom_arcs: tuple = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("electrode count must be >= 1")
        if self.custom_arcs is None and not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must lie in (0, 1]")
        arcs = self.arcs
        if len(arcs) != self.count:
            raise ValueError("custom_arcs must contain one arc per electrode")
        for a, b in arcs:
            if not b > a:
                raise ValueError(f"electrode arc ({a}, {b}) is empty")
        total = sum(b - a for a, b in arcs)
        if total > 2 * math.pi + 1e-12:
            raise ValueError("electrode arcs overlap")
        # pairwise overlap modulo 2*pi
        for i, (a1, b1) in enumerate(arcs):
            for a2, b2 in arcs[i + 1:]:
                for shift in (-2 * math.pi, 0.0, 2 * math.pi):
                    if min(b1, b2 + shift) - max(a1, a2 + shift) > 1e-12:
                        raise ValueError("electrode arcs overlap")

    @classmethod
    def from_arcs(cls, arcs):
        arcs = tuple((float(a), float(b)) for a, b in arcs)
        return cls(count=len(arcs), coverage=float("nan"), custom_arcs=arcs)

    @property
    def arcs(self):
        """Per-electrode ``(start, end)`` polar angles in radians."""
        if self.custom_arcs is not None:
            return list(self.custom_arcs)
        half = self.coverage * math.pi / self.count
        return [
            (2 * math.pi * l / self.count - half, 2 * math.pi * l / self.count + half)
            for l in range(1, self.count + 1)
        ]

    @property
    def centers(self):
        return np.array([0.5 * (a + b) for a, b in self.arcs])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation with labelled boundary edges.

    ``parent_vertices`` maps vertices of a submesh back to the mesh it was
    cut from (``None`` for top-level meshes).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: np.ndarray
    characteristic_h: float
    n_electrodes: int = 0
    parent_vertices: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(self.vertices, float))
        object.__setattr__(self, "triangles", _readonly(self.triangles, np.int64))
        object.__setattr__(
            self, "boundary_edges", _readonly(np.reshape(self.boundary_edges, (-1, 2)), np.int64)
        )
        object.__setattr__(self, "boundary_labels", _readonly(self.boundary_labels, np.int64))
        if self.parent_vertices is not None:
            object.__setattr__(self, "parent_vertices", _readonly(self.parent_vertices, np.int64))
        if len(self.boundary_edges) != len(self.boundary_labels):
            raise ValueError("one label per boundary edge required")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def _geometry(self):
        return kernels.p1_geometry(self.vertices, self.triangles)

    @property
    def grads(self):
        """Barycentric basis gradients per triangle, shape ``(T, 3, 2)``."""
        return self._geometry[0]

    @property
    def areas(self):
        return self._geometry[1]

    @property
    def area(self):
        return float(self.areas.sum())

    @cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def boundary_nodes(self):
        return np.unique(self.boundary_edges)

    @cached_property
    def edge_lengths(self):
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2)

    @cached_property
    def boundary_edge_lengths(self):
        a, b = self.boundary_edges.T
        return np.linalg.norm(self.vertices[b] - self.vertices[a], axis=1)

    def electrode_edges(self, l):
        """Indices of boundary edges on electrode ``l``, ordered head to tail."""
        idx = np.flatnonzero(self.boundary_labels == l)
        return _chain(self.boundary_edges, idx)

    def electrode_arclength(self, l):
        """``(edge indices, start arclength per edge, edge lengths, total length)``."""
        idx = self.electrode_edges(l)
        lengths = self.boundary_edge_lengths[idx]
        starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        return idx, starts, lengths, float(lengths.sum())

    def electrode_endpoints(self, l):
        idx = self.electrode_edges(l)
        e = self.boundary_edges[idx]
        return self.vertices[e[0, 0]], self.vertices[e[-1, 1]]

    def electrode_lengths(self):
        return np.array(
            [self.boundary_edge_lengths[self.boundary_labels == l].sum()
             for l in range(1, self.n_electrodes + 1)]
        )


def _chain(edges, idx):
    """Order directed edges ``edges[idx]`` so that each head meets the next tail."""
    if len(idx) == 0:
        return idx
    sub = edges[idx]
    by_tail = {int(a): k for k, a in enumerate(sub[:, 0])}
    heads = set(int(b) for b in sub[:, 1])
    starts = [k for k, a in enumerate(sub[:, 0]) if int(a) not in heads]
    k = starts[0] if starts else 0
    order = []
    seen = set()
    while k is not None and k not in seen:
        seen.add(k)
        order.append(k)
        k = by_tail.get(int(sub[k, 1]))
    if len(order) != len(idx):
        raise ValueError("electrode edges are not connected along the boundary")
    return idx[np.array(order)]


def boundary_edges_of(triangles):
    """Directed edges (counter-clockwise for positively oriented triangles)
    that belong to exactly one triangle."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv.ravel()] == 1]


def _orient(vertices, triangles):
    p = vertices[triangles]
    det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])
    triangles = triangles.copy()
    flip = det < 0
    triangles[flip, 1], triangles[flip, 2] = triangles[flip, 2], triangles[flip, 1].copy()
    return triangles


def h_for_triangle_count(area, n_triangles):
    """Target edge length that yields roughly ``n_triangles`` on ``area``."""
    return math.sqrt(4.0 * area / (math.sqrt(3.0) * _AREA_FILL * n_triangles))


def _ellipse_point(a, b, phi):
    r = a * b / np.sqrt((b * np.cos(phi)) ** 2 + (a * np.sin(phi)) ** 2)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


def _piece_stations(length, h, edge_h, grading):
    """Arclength stations on a piece of given length: spacing ``h``, or,
    with ``edge_h``, spacing ``min(h, edge_h + grading * t)`` where ``t`` is
    the distance to the nearer piece end."""
    if edge_h is None or edge_h >= h:
        n = max(1, int(math.ceil(length / h - 1e-9)))
        return np.linspace(0.0, length, n + 1)
    t = np.linspace(0.0, length, 4001)
    spacing = np.minimum(h, edge_h + grading * np.minimum(t, length - t))
    density = np.concatenate([[0.0], np.cumsum(np.diff(t) / (0.5 * (spacing[1:] + spacing[:-1])))])
    n = max(1, int(math.ceil(density[-1] - 1e-9)))
    return np.interp(np.linspace(0.0, density[-1], n + 1), density, t)


def _boundary_polygon(a, b, h, layout, edge_h=None, grading=0.25):
    """Boundary vertices (ccw) and per-edge labels for an ellipse/disk.

    Pieces between consecutive arc endpoints are subdivided uniformly in
    arclength (or graded towards the endpoints when ``edge_h`` is given);
    arc endpoints are reproduced exactly.
    """
    two_pi = 2 * math.pi
    if layout is None:
        arcs = []
    else:
        arcs = [(s % two_pi, (s % two_pi) + (e - s)) for s, e in layout.arcs]
    breaks = sorted({s % two_pi for s, _ in arcs} | {e % two_pi for _, e in arcs})
    if not breaks:
        breaks = [0.0]
    pts, labels = [], []
    for i, start in enumerate(breaks):
        end = breaks[i + 1] if i + 1 < len(breaks) else breaks[0] + two_pi
        if end - start < 1e-14:
            continue
        mid = 0.5 * (start + end)
        label = GAP
        for l, (s, e) in enumerate(arcs, start=1):
            if (mid - s) % two_pi < (e - s):
                label = l
                break
        dense = np.linspace(start, end, 2001)
        xy = _ellipse_point(a, b, dense)
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
        stations = _piece_stations(cum[-1], h, edge_h if arcs else None, grading)
        n = len(stations) - 1
        phis = np.interp(stations, cum, dense)
        phis[0], phis[-1] = start, end
        pts.append(phis[:-1])
        labels.extend([label] * n)
    phi = np.concatenate(pts)
    xy = _ellipse_point(a, b, phi)
    # exact circle coordinates where possible
    if a == b:
        xy = np.stack([a * np.cos(phi), a * np.sin(phi)], axis=-1)
    return xy, np.array(labels, dtype=np.int64), phi


def generate_ellipse_mesh(semi_major, semi_minor, h, layout=None, max_triangles=2_000_000,
                          edge_h=None):
    """Mesh of the ellipse ``(x/semi_major)^2 + (y/semi_minor)^2 < 1``.

    The semi-major axis lies along x.  Electrode arcs in ``layout`` are
    polar-angle intervals (equal central angles).  ``edge_h`` refines the
    boundary towards every electrode endpoint (graded back to ``h``).
    """
    a, b = float(semi_major), float(semi_minor)
    if a <= 0 or b <= 0:
        raise ValueError("semi-axes must be positive")
    if h <= 0 or h >= min(a, b):
        raise ValueError("h must lie in (0, min semi-axis)")
    estimate = math.pi * a * b / (math.sqrt(3) / 4 * _AREA_FILL * h * h)
    if estimate > max_triangles:
        raise ValueError(
            f"h={h:g} would produce ~{estimate:.0f} triangles (cap {max_triangles})"
        )
    if edge_h is not None and not 0 < edge_h:
        raise ValueError("edge_h must be positive")
    bxy, labels, phi = _boundary_polygon(a, b, h, layout, edge_h)
    nb = len(bxy)
    segments = np.stack([np.arange(nb), (np.arange(nb) + 1) % nb], axis=1)
    amax = math.sqrt(3) / 4 * h * h
    out = tr.triangulate({"vertices": bxy, "segments": segments}, f"pq30a{amax:.15f}YQ")
    verts = out["vertices"]
    verts[:nb] = bxy
    tris = _orient(verts, out["triangles"].astype(np.int64))
    return Mesh(
        vertices=verts,
        triangles=tris,
        boundary_edges=segments,
        boundary_labels=labels,
        characteristic_h=float(h),
        n_electrodes=0 if layout is None else layout.count,
        meta={"domain": "ellipse", "semi_axes": (a, b), "boundary_angles": phi},
    )


def generate_disk_mesh(radius, h, layout=None, max_triangles=2_000_000, edge_h=None):
    """Mesh of the disk of ``radius`` centred at the origin."""
    mesh = generate_ellipse_mesh(radius, radius, h, layout, max_triangles, edge_h)
    mesh.meta["domain"] = "disk"
    return mesh


def generate_rectangle_mesh(width, height, h):
    """Structured mesh of ``[0, width] x [0, height]``, boundary Dirichlet."""
    if width <= 0 or height <= 0 or h <= 0:
        raise ValueError("width, height and h must be positive")
    nx = max(1, int(math.ceil(width / h - 1e-9)))
    ny = max(1, int(math.ceil(height / h - 1e-9)))
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00, v10 = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    v01, v11 = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    bedges = boundary_edges_of(tris)
    return Mesh(
        vertices=verts,
        triangles=tris,
        boundary_edges=bedges,
        boundary_labels=np.full(len(bedges), DIRICHLET),
        characteristic_h=float(max(width / nx, height / ny)),
        meta={"domain": "rectangle", "size": (float(width), float(height))},
    )


def boundary_distance_field(mesh):
    """Nodal Euclidean distance to the boundary polygon (0 on boundary nodes)."""
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    d = kernels.segment_distance(mesh.vertices, np.ascontiguousarray(a), np.ascontiguousarray(b))
    d[mesh.boundary_nodes] = 0.0
    return d


def extract_interior_submesh(mesh, d, distance=None):
    """Submesh of triangles whose vertices all lie farther than ``d`` from
    the boundary.  The new boundary is labelled ``DIRICHLET`` and
    ``parent_vertices`` maps every submesh vertex to ``mesh``."""
    if d < 0:
        raise ValueError("d must be non-negative")
    if d == 0:
        keep = np.ones(mesh.n_triangles, dtype=bool)
    else:
        if distance is None:
            distance = boundary_distance_field(mesh)
        keep = np.all(distance[mesh.triangles] > d, axis=1)
    if not keep.any():
        raise ValueError(f"no triangles farther than d={d:g} from the boundary")
    tris = mesh.triangles[keep]
    used = np.unique(tris)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    tris = remap[tris]
    bedges = boundary_edges_of(tris)
    return Mesh(
        vertices=mesh.vertices[used],
        triangles=tris,
        boundary_edges=bedges,
        boundary_labels=np.full(len(bedges), DIRICHLET),
        characteristic_h=mesh.characteristic_h,
        parent_vertices=used,
        meta={"domain": "submesh", "d": float(d), "parent": dict(mesh.meta)},
    )


# ---------------------------------------------------------------------------
# plain-text serialisation
# ---------------------------------------------------------------------------

def save_mesh(mesh, path):
    """Write ``mesh`` in the aetlm plain-text format (round-trips exactly)."""
    lines = ["# aetlm mesh v1", f"h {mesh.characteristic_h!r}", f"electrodes {mesh.n_electrodes}"]
    lines.append(f"vertices {mesh.n_vertices}")
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    lines += [
        f"{a} {b} {lab}"
        for (a, b), lab in zip(mesh.boundary_edges.tolist(), mesh.boundary_labels.tolist())
    ]
    pv = mesh.parent_vertices
    lines.append(f"parent_vertices {0 if pv is None else len(pv)}")
    if pv is not None:
        lines += [str(i) for i in pv.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
    it = iter(rows)

    def header(name):
        key, value = next(it)
        if key != name:
            raise ValueError(f"expected '{name}' section, found '{key}'")
        return value

    h = float(header("h"))
    n_el = int(header("electrodes"))
    verts = np.array([[float(x), float(y)] for x, y in (next(it) for _ in range(int(header("vertices"))))])
    tris = np.array([[int(v) for v in next(it)] for _ in range(int(header("triangles")))], dtype=np.int64)
    nb = int(header("boundary_edges"))
    be = np.array([[int(v) for v in next(it)] for _ in range(nb)], dtype=np.int64).reshape(-1, 3)
    npv = int(header("parent_vertices"))
    pv = np.array([int(next(it)[0]) for _ in range(npv)], dtype=np.int64) if npv else None
    return Mesh(
        vertices=verts.reshape(-1, 2),
        triangles=tris.reshape(-1, 3),
        boundary_edges=be[:, :2],
        boundary_labels=be[:, 2],
        characteristic_h=h,
        n_electrodes=n_el,
        parent_vertices=pv,
    )
