"""P1 finite-element operators and constrained sparse solves."""

from dataclasses import dataclass
import time
import weakref

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels

# 4-point Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
GAUSS_T = 0.5 * (_GL_X + 1.0)
GAUSS_W = 0.5 * _GL_W


class SolverError(RuntimeError):
    """A linear solve failed (singular system or residual above tolerance)."""


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    wall_time: float


@dataclass
class SparseSystem:
    """``matrix @ x = rhs`` subject to ``constraints @ x = 0``.

    ``constraints`` holds dense rows (e.g. the electrode grounding row);
    they are eliminated exactly, never penalised.
    """

    matrix: sp.spmatrix
    rhs: np.ndarray
    constraints: np.ndarray = None


@dataclass(frozen=True)
class RobinBlocks:
    """Electrode boundary couplings ``sum_l int_{e_l} zeta (u - U_l)(w - W_l)``.

    ``nodes``: node-node block, ``coupling``: node-electrode block (holding
    ``-int zeta w_i``), ``electrode``: diagonal ``int_{e_l} zeta``.
    """

    nodes: sp.csr_matrix
    coupling: sp.csr_matrix
    electrode: np.ndarray

    def full(self):
        """The symmetric block matrix over ``(u, U)``."""
        return sp.bmat(
            [[self.nodes, self.coupling], [self.coupling.T, sp.diags(self.electrode)]],
            format="csr",
        )


def _element_pattern(mesh):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return rows, cols


def cell_average(mesh, nodal):
    """Triangle means of a nodal field."""
    return np.asarray(nodal, dtype=float)[mesh.triangles].mean(axis=1)


def stiffness_from_cells(mesh, coef):
    """``int coef grad w_i . grad w_j`` for a per-triangle coefficient."""
    rows, cols = _element_pattern(mesh)
    vals = kernels.stiffness_values(mesh.grads, mesh.areas, np.ascontiguousarray(coef, dtype=float))
    n = mesh.n_vertices
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh, sigma):
    """Stiffness matrix for a nodal P1 conductivity ``sigma``.

    With P1 ``sigma`` and constant P1 gradients the element integral is
    exact using the triangle mean of ``sigma``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (mesh.n_vertices,):
        raise ValueError("sigma must be a nodal field")
    if not np.all(sigma > 0):
        raise ValueError("conductivity must be positive at every node")
    return stiffness_from_cells(mesh, cell_average(mesh, sigma))


def assemble_mass(mesh):
    rows, cols = _element_pattern(mesh)
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    vals = (mesh.areas[:, None, None] * local[None]).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_robin_electrode(mesh, zeta):
    """Boundary blocks of the (smoothened) complete electrode model.

    ``zeta`` holds one entry per electrode: a callable of the signed
    arclength ``x`` measured from the electrode midpoint, or a constant.
    Line integrals use a 4-point Gauss rule on every boundary edge.
    """
    L = mesh.n_electrodes
    if len(zeta) != L:
        raise ValueError(f"expected {L} electrode conductance profiles, got {len(zeta)}")
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    crow, ccol, cval = [], [], []
    dvals = np.zeros(L)
    phi_a, phi_b = 1.0 - GAUSS_T, GAUSS_T
    for l in range(1, L + 1):
        idx, starts, lengths, l_e = mesh.electrode_arclength(l)
        if len(idx) == 0:
            continue
        x = starts[:, None] + GAUSS_T[None, :] * lengths[:, None] - 0.5 * l_e
        prof = zeta[l - 1]
        z = np.asarray(prof(x), dtype=float) if callable(prof) else np.full(x.shape, float(prof))
        z = np.broadcast_to(z, x.shape)
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ValueError(f"electrode conductance on electrode {l} must be finite and >= 0")
        wz = z * GAUSS_W[None, :] * lengths[:, None]
        m_aa = wz @ (phi_a * phi_a)
        m_ab = wz @ (phi_a * phi_b)
        m_bb = wz @ (phi_b * phi_b)
        f_a = wz @ phi_a
        f_b = wz @ phi_b
        a, b = mesh.boundary_edges[idx].T
        rows += [a, a, b, b]
        cols += [a, b, a, b]
        vals += [m_aa, m_ab, m_ab, m_bb]
        crow += [a, b]
        ccol += [np.full(len(a), l - 1)] * 2
        cval += [-f_a, -f_b]
        dvals[l - 1] = wz.sum()
    if rows:
        nodes = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        coupling = sp.csr_matrix(
            (np.concatenate(cval), (np.concatenate(crow), np.concatenate(ccol))), shape=(n, L)
        )
    else:
        nodes = sp.csr_matrix((n, n))
        coupling = sp.csr_matrix((n, L))
    return RobinBlocks(nodes=nodes, coupling=coupling, electrode=dvals)


def sparse_lu(matrix):
    """SuperLU factorisation tuned for symmetric sparsity patterns."""
    return spla.splu(
        sp.csc_matrix(matrix),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )


def _nullspace_map(constraints, n):
    """Sparse ``T`` with ``constraints @ T = 0`` and a free-variable identity."""
    C = np.atleast_2d(np.asarray(constraints, dtype=float))
    k = C.shape[0]
    pivots = []
    for row in C:
        order = np.argsort(-np.abs(row), kind="stable")
        pivots.append(next(int(j) for j in order if j not in pivots))
    pivots = np.array(pivots)
    free = np.setdiff1d(np.arange(n), pivots)
    CP = C[:, pivots]
    if np.linalg.matrix_rank(CP) < k:
        raise SolverError("constraint rows are linearly dependent")
    dep = -np.linalg.solve(CP, C[:, free])  # (k, n-k)
    rows = np.concatenate([free, np.repeat(pivots, len(free))])
    cols = np.concatenate([np.arange(len(free)), np.tile(np.arange(len(free)), k)])
    vals = np.concatenate([np.ones(len(free)), dep.ravel()])
    keep = vals != 0.0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, len(free)))


class ConstrainedFactor:
    """Reusable factorisation of a :class:`SparseSystem` matrix.

    The constraints are eliminated through a null-space map ``T`` and the
    reduced symmetric matrix ``T' A T`` is factorised once with SuperLU.
    ``solve`` is safe to call repeatedly (and concurrently) afterwards.
    """

    def __init__(self, matrix, constraints=None):
        t0 = time.perf_counter()
        self.matrix = sp.csr_matrix(matrix)
        n = self.matrix.shape[0]
        if constraints is None or np.size(constraints) == 0:
            self.T = None
            reduced = self.matrix
        else:
            self.T = _nullspace_map(constraints, n)
            reduced = (self.T.T @ self.matrix @ self.T).tocsc()
        try:
            self._lu = sparse_lu(reduced)
        except RuntimeError as exc:
            raise SolverError(f"factorisation failed: {exc}") from exc
        if not np.all(np.isfinite(self._lu.U.diagonal())):
            raise SolverError("factorisation produced non-finite pivots")
        self.factor_time = time.perf_counter() - t0

    def _solve_reduced(self, rhs):
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("singular system")
        return x

    def solve(self, rhs, tol=1e-10, refine=2):
        t0 = time.perf_counter()
        rhs = np.asarray(rhs, dtype=float)
        red = rhs if self.T is None else self.T.T @ rhs
        x = self._solve_reduced(red)
        full = x if self.T is None else self.T @ x
        scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
        res = np.linalg.norm(self.matrix @ full - rhs) / scale
        steps = 1
        while res > tol and steps <= refine:
            r = rhs - self.matrix @ full
            dx = self._solve_reduced(r if self.T is None else self.T.T @ r)
            full = full + (dx if self.T is None else self.T @ dx)
            res = np.linalg.norm(self.matrix @ full - rhs) / scale
            steps += 1
        if res > tol and np.linalg.norm(rhs) > 0:
            raise SolverError(f"relative residual {res:.3e} exceeds tolerance {tol:.1e}")
        return full, SolveReport(iterations=steps, residual=res, wall_time=time.perf_counter() - t0)


def solve_constrained(system, tol=1e-10):
    """Solve a :class:`SparseSystem`; returns ``(x, SolveReport)``."""
    return ConstrainedFactor(system.matrix, system.constraints).solve(system.rhs, tol=tol)


def gradient_per_triangle(mesh, field):
    field = np.ascontiguousarray(field, dtype=float)
    if field.shape != (mesh.n_vertices,):
        raise ValueError("expected a nodal field")
    return kernels.cell_gradient(mesh.grads, mesh.triangles, field)


def gradient_load(mesh, cell_vec):
    """``b_i = int cell_vec . grad w_i`` for a piecewise-constant vector field."""
    v = np.ascontiguousarray(cell_vec * mesh.areas[:, None])
    return kernels.scatter_gradient_load(mesh.grads, mesh.triangles, v, mesh.n_vertices)


def cell_load(mesh, cell_vals):
    """``b_i = int q w_i`` for a piecewise-constant ``q``."""
    v = np.ascontiguousarray(cell_vals * mesh.areas / 3.0)
    return kernels.scatter_cell_load(mesh.triangles, v, mesh.n_vertices)


_mass_factors = weakref.WeakKeyDictionary()
_mass_matrices = weakref.WeakKeyDictionary()


def mass_matrix(mesh):
    """Cached :func:`assemble_mass` for ``mesh``."""
    m = _mass_matrices.get(mesh)
    if m is None:
        m = _mass_matrices[mesh] = assemble_mass(mesh)
    return m


def mass_solver(mesh):
    """Cached factorisation of the consistent mass matrix of ``mesh``."""
    f = _mass_factors.get(mesh)
    if f is None:
        f = sparse_lu(mass_matrix(mesh)).solve
        _mass_factors[mesh] = f
    return f


def l2_project_cells(mesh, cell_vals):
    """Nodal P1 L2-projection of a piecewise-constant field."""
    return mass_solver(mesh)(cell_load(mesh, cell_vals))


def _location(mesh, a, location):
    if location is not None:
        return location
    n = len(a)
    if n == mesh.n_vertices and n == mesh.n_triangles:
        raise ValueError("field location is ambiguous; pass location='node' or 'cell'")
    if n == mesh.n_vertices:
        return "node"
    if n == mesh.n_triangles:
        return "cell"
    raise ValueError("field length matches neither vertices nor triangles")


def l2_inner(mesh, a, b, location=None):
    """L2(Omega) inner product of two nodal (P1) or two per-cell (P0) fields."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    loc = _location(mesh, a, location)
    if loc == "node":
        return float(a @ (mass_matrix(mesh) @ b))
    return float(np.sum(mesh.areas * a * b))


def l2_norm(mesh, a, location=None):
    return float(np.sqrt(max(l2_inner(mesh, a, a, location), 0.0)))


def dump_matrix(path, matrix):
    """Write a sparse matrix in Matrix Market text format."""
    scipy.io.mmwrite(path, sp.coo_matrix(matrix), precision=17)
