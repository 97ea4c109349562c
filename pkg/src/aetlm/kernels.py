"""Element-level numeric kernels.

Every kernel has a numba-compiled loop version and a vectorised numpy
version with identical signatures.  The loop versions are used unless the
environment variable ``AETLM_DISABLE_NUMBA`` is set to a truthy value (or
numba cannot be imported), in which case the numpy versions are bound
instead.  Both paths are exercised by the test-suite and compared in
``benchmarks/bench_kernels.py``.
"""

import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    njit = None


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


NUMBA_ENABLED = njit is not None and not _flag("AETLM_DISABLE_NUMBA")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def p1_geometry_np(vertices, triangles):
    """Barycentric gradients ``(T, 3, 2)`` and signed areas ``(T,)``."""
    p = vertices[triangles]
    x0, y0 = p[:, 0, 0], p[:, 0, 1]
    x1, y1 = p[:, 1, 0], p[:, 1, 1]
    x2, y2 = p[:, 2, 0], p[:, 2, 1]
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    grads = np.empty((len(triangles), 3, 2))
    grads[:, 0, 0] = y1 - y2
    grads[:, 0, 1] = x2 - x1
    grads[:, 1, 0] = y2 - y0
    grads[:, 1, 1] = x0 - x2
    grads[:, 2, 0] = y0 - y1
    grads[:, 2, 1] = x1 - x0
    grads /= det[:, None, None]
    return grads, 0.5 * det


def stiffness_values_np(grads, areas, coef):
    """Flattened ``(T*9,)`` element matrices ``coef_T * area_T * g_i . g_j``."""
    ke = np.einsum("tik,tjk->tij", grads, grads)
    ke *= (coef * areas)[:, None, None]
    return ke.reshape(-1)


def cell_gradient_np(grads, triangles, values):
    """Gradient of a nodal P1 field, constant on each triangle: ``(T, 2)``."""
    return np.einsum("ti,tik->tk", values[triangles], grads)


def scatter_gradient_load_np(grads, triangles, cell_vec, n_nodes):
    """``b_i = sum_T cell_vec_T . grad(w_i)|_T``."""
    contrib = np.einsum("tk,tik->ti", cell_vec, grads)
    return np.bincount(triangles.ravel(), weights=contrib.ravel(), minlength=n_nodes)


def scatter_cell_load_np(triangles, cell_vals, n_nodes):
    """``b_i = sum_{T containing i} cell_vals_T`` (caller folds in area/3)."""
    return np.bincount(
        triangles.ravel(), weights=np.repeat(cell_vals, 3), minlength=n_nodes
    )


def segment_distance_np(points, seg_a, seg_b):
    """Minimum Euclidean distance from each point to a set of segments."""
    out = np.full(len(points), np.inf)
    d = seg_b - seg_a
    dd = np.einsum("sk,sk->s", d, d)
    dd[dd == 0.0] = 1.0
    chunk = max(1, 2_000_000 // max(1, len(seg_a)))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        rel = p[:, None, :] - seg_a[None, :, :]
        t = np.clip(np.einsum("psk,sk->ps", rel, d) / dd, 0.0, 1.0)
        diff = rel - t[:, :, None] * d[None, :, :]
        out[start:start + chunk] = np.sqrt(np.min(np.einsum("psk,psk->ps", diff, diff), axis=1))
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if njit is not None:

    @njit(cache=True)
    def p1_geometry_nb(vertices, triangles):
        nt = triangles.shape[0]
        grads = np.empty((nt, 3, 2))
        areas = np.empty(nt)
        for t in range(nt):
            a, b, c = triangles[t, 0], triangles[t, 1], triangles[t, 2]
            x0, y0 = vertices[a, 0], vertices[a, 1]
            x1, y1 = vertices[b, 0], vertices[b, 1]
            x2, y2 = vertices[c, 0], vertices[c, 1]
            det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            grads[t, 0, 0] = (y1 - y2) / det
            grads[t, 0, 1] = (x2 - x1) / det
            grads[t, 1, 0] = (y2 - y0) / det
            grads[t, 1, 1] = (x0 - x2) / det
            grads[t, 2, 0] = (y0 - y1) / det
            grads[t, 2, 1] = (x1 - x0) / det
            areas[t] = 0.5 * det
        return grads, areas

    @njit(cache=True)
    def stiffness_values_nb(grads, areas, coef):
        nt = grads.shape[0]
        out = np.empty(nt * 9)
        for t in range(nt):
            s = coef[t] * areas[t]
            for i in range(3):
                for j in range(3):
                    out[9 * t + 3 * i + j] = s * (
                        grads[t, i, 0] * grads[t, j, 0] + grads[t, i, 1] * grads[t, j, 1]
                    )
        return out

    @njit(cache=True)
    def cell_gradient_nb(grads, triangles, values):
        nt = triangles.shape[0]
        out = np.zeros((nt, 2))
        for t in range(nt):
            for i in range(3):
                v = values[triangles[t, i]]
                out[t, 0] += v * grads[t, i, 0]
                out[t, 1] += v * grads[t, i, 1]
        return out

    @njit(cache=True)
    def scatter_gradient_load_nb(grads, triangles, cell_vec, n_nodes):
        out = np.zeros(n_nodes)
        for t in range(triangles.shape[0]):
            for i in range(3):
                out[triangles[t, i]] += (
                    cell_vec[t, 0] * grads[t, i, 0] + cell_vec[t, 1] * grads[t, i, 1]
                )
        return out

    @njit(cache=True)
    def scatter_cell_load_nb(triangles, cell_vals, n_nodes):
        out = np.zeros(n_nodes)
        for t in range(triangles.shape[0]):
            for i in range(3):
                out[triangles[t, i]] += cell_vals[t]
        return out

    @njit(cache=True)
    def segment_distance_nb(points, seg_a, seg_b):
        n = points.shape[0]
        out = np.empty(n)
        for p in range(n):
            px, py = points[p, 0], points[p, 1]
            best = np.inf
            for s in range(seg_a.shape[0]):
                ax, ay = seg_a[s, 0], seg_a[s, 1]
                dx, dy = seg_b[s, 0] - ax, seg_b[s, 1] - ay
                dd = dx * dx + dy * dy
                t = 0.0
                if dd > 0.0:
                    t = ((px - ax) * dx + (py - ay) * dy) / dd
                    t = min(1.0, max(0.0, t))
                ex, ey = px - ax - t * dx, py - ay - t * dy
                d2 = ex * ex + ey * ey
                if d2 < best:
                    best = d2
            out[p] = np.sqrt(best)
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "numpy": {
        "p1_geometry": p1_geometry_np,
        "stiffness_values": stiffness_values_np,
        "cell_gradient": cell_gradient_np,
        "scatter_gradient_load": scatter_gradient_load_np,
        "scatter_cell_load": scatter_cell_load_np,
        "segment_distance": segment_distance_np,
    }
}
if njit is not None:
    IMPLEMENTATIONS["numba"] = {
        "p1_geometry": p1_geometry_nb,
        "stiffness_values": stiffness_values_nb,
        "cell_gradient": cell_gradient_nb,
        "scatter_gradient_load": scatter_gradient_load_nb,
        "scatter_cell_load": scatter_cell_load_nb,
        "segment_distance": segment_distance_nb,
    }

BACKEND = "numba" if NUMBA_ENABLED else "numpy"
_active = IMPLEMENTATIONS[BACKEND]

p1_geometry = _active["p1_geometry"]
stiffness_values = _active["stiffness_values"]
cell_gradient = _active["cell_gradient"]
scatter_gradient_load = _active["scatter_gradient_load"]
scatter_cell_load = _active["scatter_cell_load"]
segment_distance = _active["segment_distance"]
