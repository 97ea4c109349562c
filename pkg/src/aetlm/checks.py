"""Numerical self-checks: adjoint identity, derivative consistency, Gram
operator eigenfunction, reciprocity and electrode-edge regularity."""

from dataclasses import dataclass
import math

import numpy as np

from . import fem
from .forward import Cem, DirichletSystem, ElectrodeSystem, Scem, fourier_pattern, power_density
from .mesh import ElectrodeLayout, extract_interior_submesh, generate_disk_mesh, generate_rectangle_mesh
from .sensitivity import DcmLinearization, GramOperator, ScemLinearization


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: str
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.3e} (want {self.tolerance}) {self.detail}".rstrip()


def smooth_field(points, rng, modes=3, scale=1.0):
    """Random smooth function: a few low-order trigonometric modes."""
    pts = np.asarray(points) / scale
    out = np.zeros(len(pts))
    for _ in range(modes):
        k = rng.uniform(-2.0, 2.0, size=2)
        out += rng.normal() * np.cos(np.pi * pts @ k + rng.uniform(0, 2 * np.pi))
    return out / math.sqrt(modes)


def random_state(mesh, rng, kind="scem", patterns=(1,), contrast=0.3):
    """Linearisation at a random smooth positive conductivity."""
    scale = np.ptp(mesh.vertices, axis=0).max() / 2
    sigma = 1.0 + contrast * np.tanh(smooth_field(mesh.vertices, rng, scale=scale))
    if kind == "scem":
        return ScemLinearization.build(
            mesh, sigma, Scem(), [fourier_pattern(n, mesh.n_electrodes) for n in patterns]
        )
    x, y = mesh.vertices.T / scale
    data = [np.cos(n * np.arctan2(y, x)) * np.hypot(x, y) ** n for n in patterns]
    return DcmLinearization.build(mesh, sigma, data)


def default_mesh(h=0.05, electrodes=16):
    """Unit disk with electrodes; its ``d = 0`` submesh serves the Dirichlet checks."""
    return generate_disk_mesh(1.0, h, ElectrodeLayout(electrodes))


def adjoint_identity(mesh, rng, kind="scem", draws=10, tol=1e-8, sign=1.0):
    """max over draws of ``|<E'tau, z> - <tau, E'*z>| / (||E'tau|| ||z||)``.

    ``sign`` multiplies the adjoint side; ``-1`` is a negative control.
    """
    scale = np.ptp(mesh.vertices, axis=0).max() / 2
    worst = 0.0
    for _ in range(draws):
        lin = random_state(mesh, rng, kind)
        tau = smooth_field(mesh.vertices, rng, scale=scale)
        z = smooth_field(mesh.centroids, rng, scale=scale)
        d = lin.apply_derivative(0, tau)
        lhs = fem.l2_inner(mesh, d, z, location="cell")
        rhs = sign * float(tau @ lin.adjoint_load(0, z))
        denom = fem.l2_norm(mesh, d, location="cell") * fem.l2_norm(mesh, z, location="cell")
        worst = max(worst, abs(lhs - rhs) / denom)
    return CheckResult(f"adjoint identity ({kind})", worst <= tol, worst, f"<= {tol:g}")


def derivative_ratios(mesh, rng, kind="scem", draws=10, step=1e-2):
    """Ratios ``r(h)/r(h/2)`` of the first-order Taylor remainder."""
    scale = np.ptp(mesh.vertices, axis=0).max() / 2
    ratios = []
    for _ in range(draws):
        lin = random_state(mesh, rng, kind)
        tau = smooth_field(mesh.vertices, rng, scale=scale)
        E0 = lin.power_density(0)
        dE = lin.apply_derivative(0, tau)
        res = []
        for h in (step, step / 2):
            s = lin.sigma + h * tau
            if kind == "scem":
                u = ElectrodeSystem(mesh, s, Scem()).solve(lin.patterns[0]).u
            else:
                u = DirichletSystem(mesh, s).solve(lin.boundary_data[0]).u
            Eh = power_density(mesh, s, u)
            res.append(fem.l2_norm(mesh, Eh - E0 - h * dE, location="cell"))
        ratios.append(res[0] / res[1])
    return np.array(ratios)


def derivative_consistency(mesh, rng, kind="scem", draws=10, band=(3.5, 4.5)):
    r = derivative_ratios(mesh, rng, kind, draws)
    ok = bool(np.all((r >= band[0]) & (r <= band[1])))
    worst = r[np.argmax(np.abs(r - 4.0))]
    return CheckResult(
        f"derivative Taylor ratio ({kind})", ok, float(worst), f"in [{band[0]}, {band[1]}]",
        f"range {r.min():.3f}..{r.max():.3f}",
    )


def gram_rayleigh_error(h, beta):
    """``|<R tau, tau>/<tau, tau> - (1 + beta^2 pi^4)|`` for ``tau = cos(pi x)``
    on the unit square."""
    mesh = generate_rectangle_mesh(1.0, 1.0, h)
    tau = np.cos(np.pi * mesh.vertices[:, 0])
    gram = GramOperator(mesh, beta)
    q = float(tau @ gram.weak(tau)) / fem.l2_inner(mesh, tau, tau, location="node")
    return abs(q - (1.0 + beta ** 2 * np.pi ** 4))


def gram_eigenfunction(h=0.05, beta=1.0, band=(3.5, 4.5)):
    e1, e2 = gram_rayleigh_error(h, beta), gram_rayleigh_error(h / 2, beta)
    ratio = e1 / e2
    exact = 1.0 + beta ** 2 * np.pi ** 4
    return CheckResult(
        "Gram eigenfunction cos(pi x)", band[0] <= ratio <= band[1], ratio,
        f"error ratio in [{band[0]}, {band[1]}]",
        f"rel. error {e1 / exact:.2e} -> {e2 / exact:.2e}",
    )


def reciprocity(mesh, rng, tol=1e-8, model=Scem()):
    """Reciprocity, current recovery and grounding for random patterns."""
    L = mesh.n_electrodes
    system = ElectrodeSystem(mesh, np.full(mesh.n_vertices, 1.0) + 0.2 * rng.random(mesh.n_vertices), model)
    I = rng.normal(size=L)
    I -= I.mean()
    J = rng.normal(size=L)
    J -= J.mean()
    sI, sJ = system.solve(I), system.solve(J)
    recip = abs(J @ sI.U - I @ sJ.U) / (np.linalg.norm(J) * np.linalg.norm(sI.U))
    cur = max(
        np.linalg.norm(system.electrode_currents(s) - p) / np.linalg.norm(p) for s, p in ((sI, I), (sJ, J))
    )
    ground = max(abs(sI.U.sum()), abs(sJ.U.sum()))
    return [
        CheckResult("reciprocity", recip <= tol, recip, f"<= {tol:g}"),
        CheckResult("electrode current recovery", cur <= tol, cur, f"<= {tol:g}"),
        CheckResult("grounding sum(U)", ground <= 1e-12, ground, "<= 1e-12"),
    ]


def endpoint_power_maximum(mesh, E):
    """Largest cell value of ``E`` within one boundary-edge length of any
    electrode endpoint (centroid distance)."""
    best = 0.0
    for l in range(1, mesh.n_electrodes + 1):
        idx = mesh.electrode_edges(l)
        for end, e in zip(mesh.electrode_endpoints(l), (idx[0], idx[-1])):
            d = np.linalg.norm(mesh.centroids - end, axis=1)
            near = d <= mesh.boundary_edge_lengths[e]
            if near.any():
                best = max(best, float(E[near].max()))
    return best


def electrode_edge_regularity(radius=0.25, h=0.01, edge_h=(6.25e-4, 3.125e-4, 1.5625e-4),
                              z=2.0, sigma=0.22, electrodes=16, n=1, stable=0.10):
    """Endpoint power-density maxima for CEM (contact impedance ``z``) and
    SCEM with unit peak (so ``z = 2 / max zeta`` at the default) on meshes refined towards
    the electrode endpoints.  Returns ``(results, cem_maxima, scem_maxima)``."""
    cem, scem = [], []
    pattern = fourier_pattern(n, electrodes)
    for eh in edge_h:
        mesh = generate_disk_mesh(radius, h, ElectrodeLayout(electrodes), edge_h=eh)
        s = np.full(mesh.n_vertices, sigma)
        for model, out in ((Cem(z), cem), (Scem(1.0), scem)):
            u = ElectrodeSystem(mesh, s, model).solve(pattern).u
            out.append(endpoint_power_maximum(mesh, power_density(mesh, s, u)))
    larger = all(c > s for c, s in zip(cem, scem))
    grows = all(b > a for a, b in zip(cem, cem[1:]))
    drift = max(abs(v / scem[0] - 1.0) for v in scem)
    results = [
        CheckResult("edge maximum CEM > SCEM", larger, min(c / s for c, s in zip(cem, scem)), "> 1"),
        CheckResult("CEM edge maximum grows", grows, cem[-1] / cem[0], "monotone increase"),
        CheckResult("SCEM edge maximum stable", drift <= stable, drift, f"<= {stable:g}"),
    ]
    return results, cem, scem


def run_all(h=0.05, seed=0, draws=10, adjoint_sign=1.0):
    """The diagnostic suite used by ``aetlm check``."""
    rng = np.random.default_rng(seed)
    mesh = default_mesh(h)
    dirichlet = extract_interior_submesh(mesh, 0.0)
    results = [
        adjoint_identity(mesh, rng, "scem", draws, sign=adjoint_sign),
        adjoint_identity(dirichlet, rng, "dcm", draws, sign=adjoint_sign),
        derivative_consistency(mesh, rng, "scem", draws),
        derivative_consistency(dirichlet, rng, "dcm", draws),
        gram_eigenfunction(),
    ]
    results += reciprocity(mesh, rng)
    return results
