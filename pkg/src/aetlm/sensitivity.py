"""Linearisation of the power-density map and its adjoint.

For a current pattern with potential ``u`` at conductivity ``sigma`` the
derivative in direction ``tau`` is (per triangle)

    E'tau = tau |grad u|^2 + 2 sigma grad u . grad xi,

where ``xi`` solves the electrode (or Dirichlet) problem with load
``-int tau grad u . grad w``.  The adjoint uses the auxiliary potential
``v`` solving the same system with load ``int 2 sigma z grad u . grad w``:

    E'* z = z |grad u|^2 - grad u . grad v.

Conductivity updates ``tau`` are nodal P1 fields, data ``z`` are per-triangle
constants.  ``adjoint_load`` returns the exact dual vector
``b_i = int (E'* z) w_i`` so that ``tau . b == <E'tau, z>`` holds to solver
precision; ``apply_adjoint`` maps it to a nodal field by L2 projection.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .forward import DirichletSystem, ElectrodeSystem, power_density


@dataclass
class DerivativeSolution:
    xi: np.ndarray
    Xi: np.ndarray


@dataclass
class AdjointSolution:
    v: np.ndarray
    V: np.ndarray


class _Linearization:
    """Shared machinery; subclasses provide ``_solve`` for the boundary model."""

    def __init__(self, mesh, sigma, solutions):
        self.mesh = mesh
        self.sigma = np.array(sigma, dtype=float)
        self.sigma_cell = fem.cell_average(mesh, self.sigma)
        self.solutions = list(solutions)
        self.gradients = [fem.gradient_per_triangle(mesh, s.u) for s in self.solutions]
        self.grad_sq = [np.einsum("tk,tk->t", g, g) for g in self.gradients]

    def __len__(self):
        return len(self.solutions)

    def _solve(self, node_rhs):
        raise NotImplementedError

    def power_density(self, m):
        return power_density(self.mesh, self.sigma, self.solutions[m].u)

    def derivative_solve(self, m, tau):
        tau_cell = fem.cell_average(self.mesh, tau)
        load = fem.gradient_load(self.mesh, tau_cell[:, None] * self.gradients[m])
        xi, Xi = self._solve(-load)
        return DerivativeSolution(xi=xi, Xi=Xi)

    def apply_derivative(self, m, tau, deriv=None):
        if deriv is None:
            deriv = self.derivative_solve(m, tau)
        g = self.gradients[m]
        gxi = fem.gradient_per_triangle(self.mesh, deriv.xi)
        tau_cell = fem.cell_average(self.mesh, tau)
        return tau_cell * self.grad_sq[m] + 2.0 * self.sigma_cell * np.einsum("tk,tk->t", g, gxi)

    def adjoint_solve(self, m, z):
        z = np.asarray(z, dtype=float)
        load = fem.gradient_load(self.mesh, (2.0 * self.sigma_cell * z)[:, None] * self.gradients[m])
        v, V = self._solve(load)
        return AdjointSolution(v=v, V=V)

    def adjoint_cells(self, m, z, adj=None):
        """Per-triangle values of ``z |grad u|^2 - grad u . grad v(z)``."""
        if adj is None:
            adj = self.adjoint_solve(m, z)
        gv = fem.gradient_per_triangle(self.mesh, adj.v)
        return np.asarray(z) * self.grad_sq[m] - np.einsum("tk,tk->t", self.gradients[m], gv)

    def adjoint_load(self, m, z, adj=None):
        """Dual vector ``b_i = int (E'* z) w_i``."""
        return fem.cell_load(self.mesh, self.adjoint_cells(m, z, adj))

    def apply_adjoint(self, m, z, adj=None):
        """Nodal ``E'* z`` (L2 projection of the per-triangle adjoint)."""
        return fem.mass_solver(self.mesh)(self.adjoint_load(m, z, adj))

    def normal_load(self, tau):
        """Dual vector of ``sum_m E_m'* E_m' tau``."""
        out = np.zeros(self.mesh.n_vertices)
        for m in range(len(self)):
            out += self.adjoint_load(m, self.apply_derivative(m, tau))
        return out

    def apply_normal(self, tau):
        """Nodal ``sum_m E_m'* E_m' tau``."""
        out = np.zeros(self.mesh.n_vertices)
        for m in range(len(self)):
            out += self.apply_adjoint(m, self.apply_derivative(m, tau))
        return out

    def weight_cells(self):
        """``sum_m |grad u_m|^4``: the local multiplier part of the normal operator."""
        return sum(g * g for g in self.grad_sq)


class ScemLinearization(_Linearization):
    """Linearisation under the (smoothened) complete electrode model.

    ``system`` is the factorised :class:`ElectrodeSystem` at ``sigma``; its
    factorisation is reused for the forward, derivative and adjoint solves.
    """

    def __init__(self, system, patterns):
        self.system = system
        self.patterns = [np.asarray(p, dtype=float) for p in patterns]
        super().__init__(system.mesh, system.sigma, [system.solve(p) for p in self.patterns])

    @classmethod
    def build(cls, mesh, sigma, model, patterns):
        return cls(ElectrodeSystem(mesh, sigma, model), patterns)

    def _solve(self, node_rhs):
        return self.system.solve_rhs(node_rhs)


class DcmLinearization(_Linearization):
    """Linearisation under the Dirichlet continuum model (``xi = v = 0`` on
    the boundary)."""

    def __init__(self, system, boundary_data):
        self.system = system
        self.boundary_data = list(boundary_data)
        super().__init__(system.mesh, system.sigma, [system.solve(g) for g in self.boundary_data])

    @classmethod
    def build(cls, mesh, sigma, boundary_data):
        return cls(DirichletSystem(mesh, sigma), boundary_data)

    def _solve(self, node_rhs):
        return self.system.solve_homogeneous(node_rhs), np.zeros(0)


# spec-level function API -------------------------------------------------

def derivative_solve(state, tau, m=0):
    return state.derivative_solve(m, tau)


def apply_derivative(state, tau, deriv=None, m=0):
    return state.apply_derivative(m, tau, deriv)


def adjoint_solve(state, z, m=0):
    return state.adjoint_solve(m, z)


def apply_adjoint(state, z, adj=None, m=0):
    return state.apply_adjoint(m, z, adj)


def apply_normal(state, tau):
    return state.apply_normal(tau)


class GramOperator:
    """Discrete ``R = I + beta^2 Delta^2`` with natural Neumann conditions.

    Mixed P1 form: ``chi = Delta tau`` is defined weakly by
    ``<chi, psi> = -<grad tau, grad psi>``, and
    ``<R tau, w> = <tau, w> + beta^2 <chi(tau), chi(w)>``,
    i.e. the weak matrix is ``M + beta^2 K M^-1 K``.
    """

    def __init__(self, mesh, beta):
        if not beta > 0:
            raise ValueError("beta must be positive")
        self.mesh = mesh
        self.beta = float(beta)
        self.mass = fem.mass_matrix(mesh)
        self.laplace = fem.stiffness_from_cells(mesh, np.ones(mesh.n_triangles))
        self._msolve = fem.mass_solver(mesh)

    def laplacian(self, tau):
        """Auxiliary field ``chi``: the discrete Neumann Laplacian of ``tau``."""
        return -self._msolve(self.laplace @ tau)

    def weak(self, tau):
        """Dual vector ``<R tau, w_i>``."""
        return self.mass @ tau + self.beta ** 2 * (self.laplace @ self._msolve(self.laplace @ tau))

    def apply(self, tau):
        """Nodal ``R tau``."""
        return tau + self.beta ** 2 * self._msolve(self.laplace @ self._msolve(self.laplace @ tau))

    def sparse_approximation(self):
        """Sparse spectral equivalent of :meth:`weak` using the lumped mass."""
        lumped = np.asarray(self.mass.sum(axis=1)).ravel()
        return self.mass + self.beta ** 2 * (self.laplace @ sp.diags(1.0 / lumped) @ self.laplace)


def gram_assemble(mesh, beta):
    return GramOperator(mesh, beta)


def gram_apply(gram, tau):
    return gram.apply(np.asarray(tau, dtype=float))
