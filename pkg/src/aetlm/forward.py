"""Forward electrostatics: SCEM, CEM and the Dirichlet continuum model."""

from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import SolverError
from .mesh import DIRICHLET


def fourier_pattern(n, L):
    """Currents ``I_l = cos(2*pi*n*l/L)``, ``l = 1..L``."""
    if n <= 0 or n % L == 0:
        raise ValueError(f"pattern n={n} violates charge conservation for L={L}")
    l = np.arange(1, L + 1)
    pattern = np.cos(2.0 * math.pi * n * l / L)
    check_pattern(pattern)
    return pattern


def check_pattern(pattern, atol=1e-12):
    pattern = np.asarray(pattern, dtype=float)
    if abs(pattern.sum()) > atol * max(1.0, np.abs(pattern).sum()):
        raise ValueError(f"injected currents must sum to zero (sum={pattern.sum():.3e})")
    return pattern


def electrode_conductance_profile(l_e, peak=1.0):
    """Smooth bump on ``(-l_e/2, l_e/2)`` with maximum ``peak`` at the centre.

    ``(1/eps^2) exp(eps^2 / (x^2 - eps^2))`` with ``eps = l_e/2``, rescaled
    so that its value at ``x = 0`` equals ``peak``.
    """
    if l_e <= 0 or peak <= 0:
        raise ValueError("electrode length and peak conductance must be positive")
    eps2 = (0.5 * l_e) ** 2

    def zeta(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = x * x < eps2
        out[inside] = peak * np.exp(1.0 + eps2 / (x[inside] ** 2 - eps2))
        return out

    return zeta


@dataclass(frozen=True)
class Scem:
    """Smoothened complete electrode model with bump conductance profiles."""

    peak: float = 1.0

    def profiles(self, mesh):
        return [electrode_conductance_profile(l_e, self.peak) for l_e in mesh.electrode_lengths()]


@dataclass(frozen=True)
class Cem:
    """Classic complete electrode model with contact impedances ``z``."""

    z: object = 2.0

    def profiles(self, mesh):
        z = np.broadcast_to(np.asarray(self.z, dtype=float), (mesh.n_electrodes,))
        if np.any(z <= 0):
            raise ValueError("contact impedances must be positive")
        return [1.0 / zl for zl in z]


@dataclass
class ForwardSolution:
    u: np.ndarray
    U: np.ndarray


class ElectrodeSystem:
    """Factorised SCEM/CEM system at a fixed conductivity.

    Unknowns are ``(u, U)``; the grounding ``sum U = 0`` is eliminated
    exactly.  One factorisation serves every current pattern and every
    linearised (derivative/adjoint) solve at this ``sigma``.
    """

    def __init__(self, mesh, sigma, model, tol=1e-10):
        if mesh.n_electrodes < 1:
            raise ValueError("mesh has no electrodes")
        self.mesh = mesh
        self.sigma = np.array(sigma, dtype=float)
        self.model = model
        self.tol = tol
        profiles = model.profiles(mesh) if hasattr(model, "profiles") else list(model)
        self.robin = fem.assemble_robin_electrode(mesh, profiles)
        if not np.any(self.robin.electrode > 0):
            raise SolverError("electrode conductance vanishes on every electrode")
        self.stiffness = fem.assemble_stiffness(mesh, self.sigma)
        self.matrix = sp.csr_matrix(self.robin.full() + sp.block_diag(
            [self.stiffness, sp.csr_matrix((mesh.n_electrodes, mesh.n_electrodes))]
        ))
        L = mesh.n_electrodes
        self.constraint = np.concatenate([np.zeros(mesh.n_vertices), np.ones(L)])[None, :]
        self.factor = fem.ConstrainedFactor(self.matrix, self.constraint)

    @property
    def n(self):
        return self.mesh.n_vertices

    def system(self, pattern):
        rhs = np.concatenate([np.zeros(self.n), check_pattern(pattern)])
        return fem.SparseSystem(self.matrix, rhs, self.constraint)

    def solve_rhs(self, node_rhs, electrode_rhs=None):
        """Solve with a general load ``(node_rhs, electrode_rhs)``."""
        if electrode_rhs is None:
            electrode_rhs = np.zeros(self.mesh.n_electrodes)
        rhs = np.concatenate([node_rhs, electrode_rhs])
        if not np.any(rhs):
            return np.zeros(self.n), np.zeros(self.mesh.n_electrodes)
        x, _ = self.factor.solve(rhs, tol=self.tol)
        return x[: self.n], x[self.n:]

    def solve(self, pattern):
        u, U = self.solve_rhs(np.zeros(self.n), check_pattern(pattern))
        return ForwardSolution(u=u, U=U)

    def electrode_currents(self, solution):
        """``int_{e_l} zeta (U_l - u)`` for every electrode."""
        return self.robin.electrode * solution.U + self.robin.coupling.T @ solution.u


def solve_scem(mesh, sigma, zeta=Scem(), pattern=None):
    """SCEM forward solve.  ``zeta`` is a :class:`Scem` model or a list of
    per-electrode profiles."""
    return ElectrodeSystem(mesh, sigma, zeta).solve(pattern)


def solve_cem(mesh, sigma, z=2.0, pattern=None):
    return ElectrodeSystem(mesh, sigma, Cem(z)).solve(pattern)


def dirichlet_nodes(mesh):
    e = mesh.boundary_edges[mesh.boundary_labels == DIRICHLET]
    return np.unique(e)


class DirichletSystem:
    """Factorised continuum model with Dirichlet data on every
    ``DIRICHLET``-labelled boundary node (strong imposition)."""

    def __init__(self, mesh, sigma):
        self.mesh = mesh
        self.sigma = np.array(sigma, dtype=float)
        self.boundary = dirichlet_nodes(mesh)
        if len(self.boundary) == 0:
            raise ValueError("mesh has no Dirichlet boundary")
        mask = np.ones(mesh.n_vertices, dtype=bool)
        mask[self.boundary] = False
        self.interior = np.flatnonzero(mask)
        K = fem.assemble_stiffness(mesh, self.sigma).tocsr()
        self.stiffness = K
        self.K_ii = K[self.interior][:, self.interior].tocsc()
        self.K_ib = K[self.interior][:, self.boundary]
        self._lu = fem.sparse_lu(self.K_ii) if len(self.interior) else None

    def boundary_values(self, g):
        mesh = self.mesh
        if callable(g):
            return np.asarray(g(mesh.vertices[self.boundary]), dtype=float)
        g = np.asarray(g, dtype=float)
        if g.shape == (mesh.n_vertices,):
            return g[self.boundary]
        if g.shape == (len(self.boundary),):
            return g
        raise ValueError("boundary data must be nodal, per boundary node, or callable")

    def solve(self, g):
        gb = self.boundary_values(g)
        u = np.zeros(self.mesh.n_vertices)
        u[self.boundary] = gb
        if self._lu is not None:
            u[self.interior] = self._lu.solve(-(self.K_ib @ gb))
        return ForwardSolution(u=u, U=np.zeros(0))

    def solve_homogeneous(self, node_rhs):
        """Solve ``K v = node_rhs`` on interior nodes with ``v = 0`` on the boundary."""
        v = np.zeros(self.mesh.n_vertices)
        if self._lu is not None and np.any(node_rhs):
            v[self.interior] = self._lu.solve(np.asarray(node_rhs)[self.interior])
        return v


def solve_dcm(mesh, sigma, g):
    return DirichletSystem(mesh, sigma).solve(g)


def power_density(mesh, sigma, solution):
    """Per-triangle ``sigma |grad u|^2`` with triangle-averaged ``sigma``."""
    u = solution.u if isinstance(solution, ForwardSolution) else solution
    g = fem.gradient_per_triangle(mesh, u)
    return fem.cell_average(mesh, sigma) * np.einsum("tk,tk->t", g, g)
