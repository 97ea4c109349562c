import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aetlm.forward import (
    Cem, DirichletSystem, ElectrodeSystem, Scem, SolverError, electrode_conductance_profile,
    fourier_pattern, power_density, solve_cem, solve_dcm, solve_scem,
)
from aetlm.mesh import ElectrodeLayout, Mesh, extract_interior_submesh, generate_disk_mesh


# current patterns

def test_fourier_pattern_examples():
    assert fourier_pattern(2, 16)[15] == pytest.approx(1.0)
    assert abs(fourier_pattern(1, 16).sum()) <= 1e-12
    assert abs(fourier_pattern(3, 16) @ fourier_pattern(1, 16)) <= 1e-12


@pytest.mark.parametrize("n", [0, 16, 32, -1])
def test_fourier_pattern_rejects_unbalanced(n):
    with pytest.raises(ValueError):
        fourier_pattern(n, 16)


@given(st.integers(1, 63), st.integers(2, 64))
def test_fourier_patterns_balanced(n, L):
    if n % L == 0:
        return
    assert abs(fourier_pattern(n, L).sum()) <= 1e-12


def test_unbalanced_pattern_rejected(small_disk):
    with pytest.raises(ValueError):
        solve_scem(small_disk, np.ones(small_disk.n_vertices), Scem(), np.ones(16))


# conductance profile

def test_profile_examples():
    z = electrode_conductance_profile(0.1, 1.0)
    np.testing.assert_array_equal(z(np.array([-0.05, 0.05])), 0.0)
    assert z(np.array(0.0)) == pytest.approx(1.0)


@given(st.floats(1e-3, 1.0), st.floats(1e-2, 10.0), st.floats(-1.2, 1.2))
def test_profile_symmetric_bounded(l_e, peak, t):
    z = electrode_conductance_profile(l_e, peak)
    x = np.array(t * l_e / 2)
    assert z(x) == pytest.approx(float(z(-x)), rel=1e-14, abs=0.0)
    assert 0.0 <= z(x) <= peak * (1 + 1e-14)


def test_profile_matches_unscaled_bump():
    # (1/eps^2) exp(eps^2/(x^2-eps^2)) rescaled to peak 2 at x = 0
    eps = 0.05
    x = np.linspace(-0.049, 0.049, 11)
    raw = np.exp(eps ** 2 / (x ** 2 - eps ** 2)) / eps ** 2
    raw0 = math.exp(-1.0) / eps ** 2
    np.testing.assert_allclose(electrode_conductance_profile(2 * eps, 2.0)(x), 2.0 * raw / raw0, rtol=1e-12)


def test_profile_rejects_bad_arguments():
    with pytest.raises(ValueError):
        electrode_conductance_profile(0.0)
    with pytest.raises(ValueError):
        electrode_conductance_profile(1.0, -1.0)


# SCEM / CEM

def test_zero_pattern_zero_solution(small_disk):
    for model in (Scem(), Cem(2.0)):
        s = ElectrodeSystem(small_disk, np.ones(small_disk.n_vertices), model).solve(np.zeros(16))
        assert not s.u.any() and not s.U.any()


def _mirror_x(mesh):
    """Reflect x -> -x, keeping counter-clockwise orientation and labels."""
    v = mesh.vertices * np.array([-1.0, 1.0])
    return Mesh(v, mesh.triangles[:, ::-1], mesh.boundary_edges[::-1, ::-1],
                mesh.boundary_labels[::-1], mesh.characteristic_h, mesh.n_electrodes)


def test_mirror_antisymmetry(small_disk):
    # sigma symmetric in x; pattern I^(1) is odd under the mirror
    x, y = small_disk.vertices.T
    sigma = 1.0 + 0.5 * x ** 2 + 0.3 * y
    I = fourier_pattern(1, 16)
    u = solve_scem(small_disk, sigma, Scem(), I)
    # on the mirrored mesh electrode l sits at angle pi - theta_l, where I^(1) is -I_l
    um = solve_scem(_mirror_x(small_disk), sigma, Scem(), -I)
    np.testing.assert_allclose(um.u, -u.u, atol=1e-10 * np.abs(u.u).max())
    np.testing.assert_allclose(um.U, -u.U, atol=1e-10 * np.abs(u.U).max())


def test_mirror_antisymmetry_pointwise(disk):
    # same statement on one mesh, up to discretisation error
    from scipy.interpolate import LinearNDInterpolator
    u = solve_scem(disk, np.ones(disk.n_vertices), Scem(), fourier_pattern(1, 16)).u
    f = LinearNDInterpolator(disk.vertices, u)
    pts = disk.vertices[np.hypot(*disk.vertices.T) < 0.8]
    refl = f(pts * np.array([-1.0, 1.0]))
    assert np.max(np.abs(refl + f(pts))) <= 0.02 * np.abs(u).max()


@pytest.mark.parametrize("model", [Scem(), Scem(0.3), Cem(2.0), Cem(0.01)])
def test_current_recovery(small_disk, model, rng):
    sigma = 0.5 + rng.random(small_disk.n_vertices)
    sys = ElectrodeSystem(small_disk, sigma, model)
    for n in (1, 2, 5):
        I = fourier_pattern(n, 16)
        cur = sys.electrode_currents(sys.solve(I))
        assert np.linalg.norm(cur - I) <= 1e-8 * np.linalg.norm(I)


def test_grounding(small_disk, rng):
    s = ElectrodeSystem(small_disk, 1 + rng.random(small_disk.n_vertices), Scem()).solve(fourier_pattern(3, 16))
    assert abs(s.U.sum()) <= 1e-12 * np.abs(s.U).max()


def test_cem_large_impedance_limit(small_disk):
    # With prescribed currents u tends to the gap-model solution (Neumann data
    # I_l/|e_l|) and U grows linearly in z.
    sigma = np.ones(small_disk.n_vertices)
    I = fourier_pattern(1, 16)
    sols = [solve_cem(small_disk, sigma, z, I) for z in (1e4, 1e6, 1e8)]
    d1 = np.linalg.norm(sols[1].u - sols[0].u)
    d2 = np.linalg.norm(sols[2].u - sols[1].u)
    assert d2 < d1
    np.testing.assert_allclose(sols[2].U / 1e8, sols[1].U / 1e6, rtol=1e-5, atol=1e-8)


def test_scem_with_constant_profile_equals_cem(small_disk, rng):
    sigma = 0.5 + rng.random(small_disk.n_vertices)
    z = 2.0
    a = ElectrodeSystem(small_disk, sigma, [1.0 / z] * 16).matrix
    b = ElectrodeSystem(small_disk, sigma, Cem(z)).matrix
    assert abs(a - b).max() <= 1e-12


def test_vanishing_profile_is_singular(small_disk):
    with pytest.raises(SolverError):
        ElectrodeSystem(small_disk, np.ones(small_disk.n_vertices), [0.0] * 16)


def test_linearity_in_pattern(small_disk, rng):
    sys = ElectrodeSystem(small_disk, 1 + rng.random(small_disk.n_vertices), Scem())
    I1, I2 = fourier_pattern(1, 16), fourier_pattern(2, 16)
    a, b, c = sys.solve(I1), sys.solve(I2), sys.solve(I1 + I2)
    assert np.abs(c.u - a.u - b.u).max() <= 1e-10 * np.abs(c.u).max()
    assert np.abs(c.U - a.U - b.U).max() <= 1e-10 * np.abs(c.U).max()


@given(st.integers(0, 2 ** 31))
def test_reciprocity(seed):
    mesh = _small_mesh()
    r = np.random.default_rng(seed)
    sys = ElectrodeSystem(mesh, 0.2 + r.random(mesh.n_vertices), Scem(r.uniform(0.1, 5)))
    I, J = r.normal(size=16), r.normal(size=16)
    I -= I.mean()
    J -= J.mean()
    UI, UJ = sys.solve(I).U, sys.solve(J).U
    assert abs(J @ UI - I @ UJ) <= 1e-8 * np.linalg.norm(J) * np.linalg.norm(UI)


_cache = {}


def _small_mesh():
    if "m" not in _cache:
        _cache["m"] = generate_disk_mesh(1.0, 0.15, ElectrodeLayout(16))
    return _cache["m"]


# DCM

def test_dcm_reproduces_linear_data(dirichlet_disk):
    x = dirichlet_disk.vertices[:, 0]
    u = solve_dcm(dirichlet_disk, np.ones(dirichlet_disk.n_vertices), x).u
    np.testing.assert_allclose(u, x, atol=1e-12)


def test_dcm_constant_data(dirichlet_disk, rng):
    sigma = 0.5 + rng.random(dirichlet_disk.n_vertices)
    u = solve_dcm(dirichlet_disk, sigma, lambda p: np.full(len(p), 2.5)).u
    np.testing.assert_allclose(u, 2.5, atol=1e-12)


def test_dcm_boundary_values_exact(dirichlet_disk, rng):
    sys = DirichletSystem(dirichlet_disk, 1 + rng.random(dirichlet_disk.n_vertices))
    g = rng.normal(size=dirichlet_disk.n_vertices)
    u = sys.solve(g).u
    np.testing.assert_array_equal(u[sys.boundary], g[sys.boundary])


def test_dcm_second_order_convergence():
    errs, hs = [], []
    for h in (0.1, 0.05):
        m = extract_interior_submesh(generate_disk_mesh(1.0, h), 0.0)
        x, y = m.vertices.T
        exact = x ** 2 - y ** 2
        u = solve_dcm(m, np.ones(m.n_vertices), exact).u
        errs.append(np.abs(u - exact).max())
        hs.append(m.characteristic_h)
    rate = math.log(errs[0] / errs[1]) / math.log(hs[0] / hs[1])
    assert rate > 1.7


def test_dcm_requires_dirichlet_boundary(small_disk):
    with pytest.raises(ValueError):
        DirichletSystem(small_disk, np.ones(small_disk.n_vertices))


# power density

@pytest.mark.parametrize("s", [1.0, 2.0])
def test_power_density_linear_potential(disk, s):
    E = power_density(disk, np.full(disk.n_vertices, s), disk.vertices[:, 0])
    np.testing.assert_allclose(E, s, rtol=1e-12)


def test_power_density_single_triangle(rng):
    v = rng.normal(size=(3, 2))
    d1, d2 = v[1] - v[0], v[2] - v[0]
    if d1[0] * d2[1] - d1[1] * d2[0] < 0:
        v = v[[0, 2, 1]]
    m = Mesh(v, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]), np.zeros(3, int), 1.0)
    u = rng.normal(size=3)
    sigma = 1 + rng.random(3)
    # oracle: solve for the plane a + b x + c y through the three values
    coef = np.linalg.solve(np.column_stack([np.ones(3), v]), u)
    expected = sigma.mean() * (coef[1] ** 2 + coef[2] ** 2)
    assert power_density(m, sigma, u)[0] == pytest.approx(expected, rel=1e-12)


@given(st.floats(-100, 100))
def test_power_density_shift_invariant(c):
    mesh = _small_mesh()
    sigma = 1 + mesh.vertices[:, 0] ** 2
    u = solve_scem(mesh, sigma, Scem(), fourier_pattern(2, 16)).u
    E0 = power_density(mesh, sigma, u)
    np.testing.assert_allclose(power_density(mesh, sigma, u + c), E0, atol=1e-9 * E0.max())
    assert np.all(E0 >= 0)


def test_power_density_from_solution_object(small_disk):
    sigma = np.ones(small_disk.n_vertices)
    sol = solve_scem(small_disk, sigma, Scem(), fourier_pattern(1, 16))
    np.testing.assert_array_equal(power_density(small_disk, sigma, sol), power_density(small_disk, sigma, sol.u))

