"""Levenberg-Marquardt reconstruction of conductivity from power densities.

Each outer iteration linearises the power-density map at ``sigma_k`` and
solves the regularised normal equation

    (sum_m E_m'* E_m' + alpha_k R) tau = sum_m E_m'* (E_m^delta - E_m(sigma_k))

with ``R = I + beta^2 Delta^2`` by preconditioned conjugate gradients on the
weak (mass-weighted) form.  The update is truncated to the region away from
the boundary, where the conductivity is treated as known.
"""

from dataclasses import asdict, dataclass, replace
import math
import time
import warnings

import numpy as np
import scipy.sparse as sp

from . import fem
from .forward import DirichletSystem, ElectrodeSystem, Scem
from .mesh import boundary_distance_field, extract_interior_submesh
from .phantom import NoiseSpec, add_noise, relative_error
from .sensitivity import DcmLinearization, GramOperator, ScemLinearization


@dataclass(frozen=True)
class LmConfig:
    alpha0: float = 50.0
    a: float = 1.2
    beta: float = 1.2e-3
    delta_d: float = 0.045
    step_tol: float = 1e-4
    max_iter: int = 15
    cg_tol: float = 1e-6
    cg_max_iter: int = 500
    eta_b_target: float = 1e-3
    phase1_max_iter: int = 30
    sigma_min: float = 1e-3
    max_time: float = math.inf
    discrepancy: float = 0.0
    stall_tol: float = 0.0

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not self.a > 1:
            raise ValueError("decay base a must exceed 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.delta_d >= 0:
            raise ValueError("delta_d must be non-negative")
        if not (self.step_tol > 0 and self.cg_tol > 0 and self.eta_b_target > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 0 or self.phase1_max_iter < 0 or self.cg_max_iter < 1:
            raise ValueError("iteration caps must be non-negative")
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be positive")
        if not self.stall_tol >= 0:
            raise ValueError("stall_tol must be non-negative (0 disables it)")
        if not self.discrepancy >= 0:
            raise ValueError("discrepancy factor must be non-negative (0 disables it)")

    @classmethod
    def preset(cls, name, **overrides):
        return replace(PRESETS[name], **overrides)

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "heart-lung": LmConfig(alpha0=50.0, a=1.2, beta=1.2e-3, delta_d=0.045, step_tol=1e-4, max_iter=15),
    "brain": LmConfig(
        alpha0=150.0, a=2.0, beta=1e-3, delta_d=0.005, step_tol=1e-4, max_iter=30,
        eta_b_target=1e-3, phase1_max_iter=30, stall_tol=0.02,
    ),
}


@dataclass
class Measurement:
    """Noisy power density of one experiment.

    ``pattern`` holds the injected electrode currents (SCEM data) and
    ``boundary`` the Dirichlet potential (DCM data); exactly one is set.
    ``noise_level`` is the L2 norm of the added noise (0 if unknown).
    """

    E_delta: np.ndarray
    pattern: np.ndarray = None
    U_true: np.ndarray = None
    boundary: np.ndarray = None
    noise_level: float = 0.0

    def __post_init__(self):
        if (self.pattern is None) == (self.boundary is None):
            raise ValueError("a measurement needs either a current pattern or boundary data")


@dataclass
class IterationRecord:
    """Metrics of iterate ``sigma_k`` and of the step taken from it.

    Step fields are NaN on the last record, where no step was taken.
    """

    k: int
    eta: float
    eta_b: list
    misfit: float
    wall_time: float
    alpha: float = math.nan
    tau_norm: float = math.nan
    cg_iterations: int = 0
    step_residual: float = math.nan
    clamped: int = 0
    phase: str = ""
    note: str = ""

    def row(self):
        d = asdict(self)
        eta_b = d.pop("eta_b")
        for m, v in enumerate(eta_b):
            d[f"eta_b_{m}"] = v
        d["eta_b_max"] = max(eta_b) if eta_b else math.nan
        return d


class StepError(RuntimeError):
    """Inner solve did not reach the requested tolerance."""


def alpha_schedule(alpha0, a, k):
    return alpha0 / a ** k


def known_region_mask(mesh, delta_d, distance=None):
    """Nodes within ``delta_d`` of the boundary (True = known, not updated)."""
    if delta_d == 0:
        return np.zeros(mesh.n_vertices, dtype=bool)
    if distance is None:
        distance = boundary_distance_field(mesh)
    return distance <= delta_d


def truncate_update(tau, distance, delta_d):
    """Zero ``tau`` wherever the boundary distance is at most ``delta_d``."""
    if delta_d < 0:
        raise ValueError("delta_d must be non-negative")
    tau = np.array(tau, dtype=float)
    if delta_d > 0:
        tau[np.asarray(distance) <= delta_d] = 0.0
    return tau


def boundary_voltage_error(U_true, U_k):
    U_true = np.asarray(U_true, dtype=float)
    return float(np.linalg.norm(U_true - np.asarray(U_k)) / np.linalg.norm(U_true))


def extract_boundary_trace(u, submesh):
    """Values of the parent-mesh field ``u`` at every node of ``submesh``
    (nodal Dirichlet data; only boundary entries are used by the solver)."""
    if submesh.parent_vertices is None:
        raise ValueError("mesh is not a submesh")
    return np.asarray(u)[submesh.parent_vertices]


@dataclass
class StepResult:
    tau: np.ndarray
    iterations: int
    residual: float
    verified_residual: float


def _pcg(apply_a, b, precond, inner_norm, tol, maxiter):
    """Preconditioned CG on ``A x = b``; stops on ``inner_norm(r) <= tol * inner_norm(b)``."""
    x = np.zeros_like(b)
    bnorm = inner_norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        ap = apply_a(p)
        pap = p @ ap
        if pap <= 0:
            raise StepError("step operator is not positive definite")
        step = rz / pap
        x += step * p
        r -= step * ap
        rel = inner_norm(r) / bnorm
        if rel <= tol:
            return x, it, rel
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, rel


def lm_step(lin, residuals, alpha, gram, mask=None, cg_tol=1e-6, cg_max_iter=500, verify=True):
    """Regularised Gauss-Newton update at the linearisation point of ``lin``.

    ``residuals[m]`` is ``E_m^delta - E_m(sigma_k)`` per triangle.  The
    returned ``tau`` solves ``(sum E'*E' + alpha R) tau = y`` to relative
    L2 residual ``cg_tol`` and is then zeroed where ``mask`` is True.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    mesh = lin.mesh
    msolve = fem.mass_solver(mesh)
    b = np.zeros(mesh.n_vertices)
    for m, r in enumerate(residuals):
        b += lin.adjoint_load(m, r)

    def apply_a(t):
        return lin.normal_load(t) + alpha * gram.weak(t)

    # spectrally close sparse surrogate: local part of E'*E' plus alpha R
    w = lin.weight_cells()
    local = _weighted_mass(mesh, w)
    factor = fem.sparse_lu(sp.csc_matrix(local + alpha * gram.sparse_approximation()))

    def l2_dual(r):
        return math.sqrt(max(r @ msolve(r), 0.0))

    tau, its, rel = _pcg(apply_a, b, factor.solve, l2_dual, cg_tol, cg_max_iter)
    verified = math.nan
    if verify:
        # independent nodal application of (M + alpha R) tau - y
        y = sum(lin.apply_adjoint(m, r) for m, r in enumerate(residuals))
        lhs = lin.apply_normal(tau) + alpha * gram.apply(tau)
        ynorm = fem.l2_norm(mesh, y, location="node")
        verified = fem.l2_norm(mesh, lhs - y, location="node") / ynorm if ynorm > 0 else 0.0
    if rel > cg_tol:
        raise StepError(
            f"inner CG stalled at relative residual {rel:.2e} after {its} iterations; "
            "increase alpha or cg_max_iter"
        )
    if mask is not None:
        tau[np.asarray(mask, dtype=bool)] = 0.0
    return StepResult(tau=tau, iterations=its, residual=rel, verified_residual=verified)


def _weighted_mass(mesh, w):
    """Mass matrix with per-triangle weight ``w``."""
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    vals = (w * mesh.areas)[:, None, None] * local[None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def _scem_linearize(mesh, model):
    def build(sigma, measurements):
        system = ElectrodeSystem(mesh, sigma, model)
        return ScemLinearization(system, [m.pattern for m in measurements])
    return build


def _dcm_linearize(mesh):
    def build(sigma, measurements):
        return DcmLinearization(DirichletSystem(mesh, sigma), [m.boundary for m in measurements])
    return build


def _run(config, mesh, measurements, sigma0, build, *, alpha_offset=0, max_iter=None,
         sigma_truth=None, eta_fn=None, stop_when=None, callback=None, phase="", t_start=None,
         k_offset=0):
    """Shared LM loop.  Returns ``(sigma, records, lin)`` where ``lin`` is
    the linearisation at the final iterate."""
    if len(measurements) == 0:
        raise ValueError("at least one measurement is required")
    sigma = np.array(sigma0, dtype=float)
    if sigma.shape != (mesh.n_vertices,):
        sigma = np.full(mesh.n_vertices, float(sigma0)) if sigma.ndim == 0 else sigma
    if np.any(sigma <= 0):
        raise ValueError("initial conductivity must be positive")
    max_iter = config.max_iter if max_iter is None else max_iter
    distance = boundary_distance_field(mesh)
    mask = known_region_mask(mesh, config.delta_d, distance)
    gram = GramOperator(mesh, config.beta)
    if eta_fn is None and sigma_truth is not None:
        def eta_fn(s):
            return relative_error(mesh, sigma_truth, s)
    t0 = time.perf_counter() if t_start is None else t_start
    noise_sq = sum(m.noise_level ** 2 for m in measurements)
    records = []
    stop = False
    k = 0
    while True:
        lin = build(sigma, measurements)
        residuals = [m.E_delta - lin.power_density(i) for i, m in enumerate(measurements)]
        misfit = sum(fem.l2_norm(mesh, r, location="cell") ** 2 for r in residuals)
        eta_b = [
            boundary_voltage_error(m.U_true, s.U)
            for m, s in zip(measurements, lin.solutions) if m.U_true is not None
        ]
        rec = IterationRecord(
            k=k + k_offset, eta=eta_fn(sigma) if eta_fn else math.nan, eta_b=eta_b,
            misfit=misfit, wall_time=time.perf_counter() - t0, phase=phase,
        )
        if stop_when is not None and stop_when(rec):
            rec.note = "target reached"
            stop = True
        elif config.discrepancy > 0 and misfit <= config.discrepancy ** 2 * noise_sq:
            rec.note = "discrepancy reached"
            stop = True
        elif config.stall_tol > 0 and records and \
                records[-1].misfit - misfit < config.stall_tol * records[-1].misfit:
            rec.note = "misfit stalled"
            stop = True
        elif stop:
            rec.note = "step below tolerance"
        elif k >= max_iter:
            rec.note = "iteration cap"
            stop = True
        elif rec.wall_time >= config.max_time:
            rec.note = "time budget"
            stop = True
        if stop:
            records.append(rec)
            if callback:
                callback(rec, sigma)
            return sigma, records, lin
        alpha = alpha_schedule(config.alpha0, config.a, k + alpha_offset)
        step = lm_step(lin, residuals, alpha, gram, mask, config.cg_tol, config.cg_max_iter)
        rec.alpha = alpha
        rec.tau_norm = fem.l2_norm(mesh, step.tau, location="node")
        rec.cg_iterations = step.iterations
        rec.step_residual = step.verified_residual
        new = sigma + step.tau
        low = new < config.sigma_min
        rec.clamped = int(low.sum())
        if rec.clamped:
            new[low] = config.sigma_min
        rec.wall_time = time.perf_counter() - t0
        records.append(rec)
        if callback:
            callback(rec, sigma)
        sigma = new
        stop = rec.tau_norm < config.step_tol
        k += 1


def lm_scem(config, mesh, measurements, sigma0, sigma_truth=None, model=Scem(), callback=None):
    """LM iterations with the smoothened complete electrode forward model."""
    sigma, records, _ = _run(
        config, mesh, measurements, sigma0, _scem_linearize(mesh, model),
        sigma_truth=sigma_truth, callback=callback, phase="scem",
    )
    return sigma, records


def lm_dcm(config, submesh, measurements, sigma0, sigma_truth=None, callback=None, delta_d=0.0):
    """LM iterations with Dirichlet data on every boundary node of ``submesh``.

    The boundary of the submesh carries prescribed potentials, so by default
    no collar is masked.
    """
    cfg = replace(config, delta_d=delta_d)
    sigma, records, _ = _run(
        cfg, submesh, measurements, sigma0, _dcm_linearize(submesh),
        sigma_truth=sigma_truth, callback=callback, phase="dcm",
    )
    return sigma, records


def simulate_dcm_measurements(submesh, sigma, traces, noise=NoiseSpec()):
    """Dirichlet power densities on ``submesh`` for each nodal trace."""
    system = DirichletSystem(submesh, sigma)
    out = []
    for i, g in enumerate(traces):
        sol = system.solve(g)
        E = fem.cell_average(submesh, sigma) * np.einsum(
            "tk,tk->t", *(2 * [fem.gradient_per_triangle(submesh, sol.u)])
        )
        out.append(Measurement(
            E_delta=add_noise(submesh, E, noise, i), boundary=np.asarray(g),
            noise_level=noise_level(submesh, E, noise),
        ))
    return out


def noise_level(mesh, E, noise):
    """L2 norm of the noise that :func:`add_noise` adds to ``E``."""
    if math.isinf(noise.snr_db):
        return 0.0
    return fem.l2_norm(mesh, E, location="cell") * 10.0 ** (-noise.snr_db / 20.0)


def simulate_measurements(mesh, sigma, patterns, model=Scem(), noise=NoiseSpec()):
    """Electrode-model power densities (pattern ``i`` gets noise seed offset ``i``)."""
    system = ElectrodeSystem(mesh, sigma, model)
    out = []
    for i, p in enumerate(patterns):
        sol = system.solve(p)
        E = fem.cell_average(mesh, sigma) * np.einsum(
            "tk,tk->t", *(2 * [fem.gradient_per_triangle(mesh, sol.u)])
        )
        out.append(Measurement(
            E_delta=add_noise(mesh, E, noise, i), pattern=np.asarray(p, dtype=float), U_true=sol.U,
            noise_level=noise_level(mesh, E, noise),
        ))
    return out


def mixed_reconstruction(config, mesh, measurements, sigma0, sigma_truth=None, model=Scem(),
                         noise=NoiseSpec(), callback=None):
    """Two-phase reconstruction: SCEM iterations until the electrode voltages
    are matched, then Dirichlet iterations on the interior subdomain.

    Phase 1 stops once ``eta_b < eta_b_target`` for every pattern (or on its
    cap, step tolerance or time budget, flagged in the record note; the
    misfit-based rules are reserved for phase 2).  The
    interior data for phase 2 are Dirichlet power densities on the subdomain
    ``{dist(x, boundary) > delta_d}`` with the boundary potential taken from
    the phase-1 SCEM solution, generated at ``sigma_truth`` (standing in
    for the acoustically recovered interior data) with fresh noise.
    Returns ``(sigma, records, info)``.
    """
    if sigma_truth is None:
        raise ValueError("mixed reconstruction needs sigma_truth to synthesise interior data")
    if any(m.U_true is None for m in measurements):
        raise ValueError("mixed reconstruction needs electrode voltages U_true")
    t0 = time.perf_counter()
    target = config.eta_b_target

    def reached(rec):
        return bool(rec.eta_b) and max(rec.eta_b) < target

    # the misfit-based rules only apply to phase 2; phase 1 ends on eta_b
    cfg1 = replace(config, stall_tol=0.0, discrepancy=0.0)
    sigma1, rec1, lin = _run(
        cfg1, mesh, measurements, sigma0, _scem_linearize(mesh, model),
        max_iter=config.phase1_max_iter, sigma_truth=sigma_truth, stop_when=reached,
        callback=callback, phase="scem", t_start=t0,
    )
    if not reached(rec1[-1]):
        rec1[-1].note = f"phase 1 ended ({rec1[-1].note}) before eta_b target"
        warnings.warn("phase 1 stopped before reaching the eta_b target", stacklevel=2)
    sub = extract_interior_submesh(mesh, config.delta_d)
    parent = sub.parent_vertices
    traces = [extract_boundary_trace(s.u, sub) for s in lin.solutions]
    noise2 = NoiseSpec(noise.snr_db, noise.seed + 1000)
    dcm_data = simulate_dcm_measurements(sub, np.asarray(sigma_truth)[parent], traces, noise2)

    def composite(s_sub):
        full = sigma1.copy()
        full[parent] = s_sub
        return full

    def eta_fn(s_sub):
        return relative_error(mesh, sigma_truth, composite(s_sub))

    cfg2 = replace(config, delta_d=0.0)
    sigma2, rec2, _ = _run(
        cfg2, sub, dcm_data, sigma1[parent], _dcm_linearize(sub), eta_fn=eta_fn,
        callback=(lambda r, s: callback(r, composite(s))) if callback else None,
        phase="dcm", t_start=t0, k_offset=len(rec1),
    )
    info = {"submesh": sub, "phase1_sigma": sigma1, "phase1_iterations": len(rec1) - 1,
            "phase2_measurements": dcm_data}
    return composite(sigma2), rec1 + rec2, info
