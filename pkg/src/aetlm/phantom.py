"""Conductivity phantoms, mollification, measurement noise and error metrics."""

from dataclasses import dataclass, field
from importlib import resources
import math
import warnings

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

from . import fem

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def contains(self, pts):
        d = np.asarray(pts) - np.asarray(self.center)
        return np.einsum("...k,...k->...", d, d) < self.radius ** 2


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_axes: tuple
    angle: float = 0.0

    def contains(self, pts):
        d = np.asarray(pts) - np.asarray(self.center)
        c, s = math.cos(self.angle), math.sin(self.angle)
        x = c * d[..., 0] + s * d[..., 1]
        y = -s * d[..., 0] + c * d[..., 1]
        a, b = self.semi_axes
        return (x / a) ** 2 + (y / b) ** 2 < 1.0


@dataclass(frozen=True)
class Polygon:
    vertices: tuple

    def contains(self, pts):
        pts = np.asarray(pts)
        x, y = pts[..., 0], pts[..., 1]
        v = np.asarray(self.vertices, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xi)
        return inside


@dataclass(frozen=True)
class Region:
    name: str
    shape: object
    conductivity: float


@dataclass(frozen=True)
class PhantomSpec:
    """Piecewise-constant conductivity: background overpainted by regions."""

    name: str
    background: float
    regions: tuple
    epsilon: float
    domain: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.background <= 0 or any(r.conductivity <= 0 for r in self.regions):
            raise ValueError("all conductivities must be positive")

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], float(self.background))
        for r in self.regions:
            out[r.shape.contains(pts)] = r.conductivity
        return out

    def region(self, name):
        return next(r for r in self.regions if r.name == name)


def _shape_from(entry):
    kind = entry["kind"]
    if kind == "circle":
        return Circle(tuple(entry["center"]), float(entry["radius"]))
    if kind == "ellipse":
        return Ellipse(tuple(entry["center"]), tuple(entry["semi_axes"]), float(entry.get("angle", 0.0)))
    if kind == "polygon":
        return Polygon(tuple(tuple(p) for p in entry["vertices"]))
    raise ValueError(f"unknown region kind '{kind}'")


def phantom_spec_from_dict(data):
    regions = tuple(
        Region(str(e.get("name", f"region-{i}")), _shape_from(e), float(e["conductivity"]))
        for i, e in enumerate(data.get("regions", []))
    )
    return PhantomSpec(
        name=str(data.get("name", "phantom")),
        background=float(data["background"]),
        regions=regions,
        epsilon=float(data.get("epsilon", 0.0)),
        domain=dict(data.get("domain", {})),
    )


def load_phantom_spec(path):
    """Read a :class:`PhantomSpec` from a TOML file (see ``phantoms/*.toml``)."""
    with open(path, "rb") as fh:
        return phantom_spec_from_dict(tomllib.load(fh))


def builtin_spec(name):
    fname = {"heart-lung": "heart_lung.toml", "heart_lung": "heart_lung.toml", "brain": "brain.toml"}[name]
    data = resources.files("aetlm").joinpath("phantoms", fname).read_bytes()
    return phantom_spec_from_dict(tomllib.loads(data.decode()))


def heart_lung_phantom(mesh):
    """Unmollified nodal heart-lung conductivity on a radius-0.25 m disk."""
    return builtin_spec("heart-lung")(mesh.vertices)


def brain_phantom(mesh):
    """Unmollified nodal layered-brain conductivity on the 9 x 8 cm ellipse."""
    return builtin_spec("brain")(mesh.vertices)


def _mollifier_stencil(eps, n_radial=10, n_angular=32):
    """Offsets and weights of a polar quadrature for the normalised bump
    ``C exp(eps^2 / (r^2 - eps^2))`` on the disk of radius ``eps``."""
    x, w = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * eps * (x + 1.0)
    wr = 0.5 * eps * w * r * np.exp(eps * eps / (r * r - eps * eps))
    theta = (np.arange(n_angular) + 0.5) * 2 * math.pi / n_angular
    offsets = np.stack(
        [np.outer(r, np.cos(theta)).ravel(), np.outer(r, np.sin(theta)).ravel()], axis=1
    )
    weights = np.repeat(wr, n_angular)
    return offsets, weights / weights.sum()


def mollify(mesh, field, eps, n_radial=10, n_angular=32):
    """Convolve ``field`` with the unit-mass bump of radius ``eps`` at the nodes.

    ``field`` is either a callable ``f(points)`` (e.g. a :class:`PhantomSpec`,
    evaluated exactly at the quadrature points) or a nodal array (evaluated by
    linear interpolation, nearest-value outside the mesh hull).  Below a
    quarter of the mesh size the nodal values are returned unchanged.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = mesh.vertices
    if callable(field):
        f = field
    else:
        vals = np.asarray(field, dtype=float)
        lin = LinearNDInterpolator(pts, vals)
        near = NearestNDInterpolator(pts, vals)

        def f(q):
            out = lin(q)
            bad = np.isnan(out)
            if bad.any():
                out[bad] = near(q[bad])
            return out

    if eps < 0.25 * mesh.characteristic_h:
        warnings.warn(
            f"mollifier radius {eps:g} is below mesh resolution "
            f"{mesh.characteristic_h:g}; returning the field unchanged",
            stacklevel=2,
        )
        return np.asarray(f(pts), dtype=float)
    offsets, weights = _mollifier_stencil(eps, n_radial, n_angular)
    out = np.empty(len(pts))
    chunk = max(1, 400_000 // len(weights))
    for s in range(0, len(pts), chunk):
        q = pts[s:s + chunk, None, :] - offsets[None, :, :]
        vals = np.asarray(f(q.reshape(-1, 2)), dtype=float).reshape(q.shape[:2])
        out[s:s + chunk] = vals @ weights
    return out


def true_conductivity(mesh, spec):
    """Mollified nodal conductivity of a phantom (the experiments' ``sigma_t``)."""
    if spec.epsilon > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return mollify(mesh, spec, spec.epsilon)
    return spec(mesh.vertices)


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite or +inf")


def add_noise(mesh, E, spec, index=0):
    """Add white Gaussian noise to cell data ``E`` at exactly ``spec.snr_db``.

    The realisation is rescaled so that ``20 log10(||E|| / ||N||)`` equals the
    requested SNR in the L2(Omega) norm.  ``index`` offsets the seed (one
    independent realisation per current pattern).
    """
    E = np.asarray(E, dtype=float)
    if math.isinf(spec.snr_db):
        return E.copy()
    norm_e = fem.l2_norm(mesh, E, location="cell")
    if norm_e == 0.0:
        raise ValueError("cannot add noise at finite SNR to a zero field")
    rng = np.random.default_rng(spec.seed + index)
    noise = rng.standard_normal(E.shape)
    scale = norm_e * 10.0 ** (-spec.snr_db / 20.0) / fem.l2_norm(mesh, noise, location="cell")
    return E + scale * noise


def realized_snr(mesh, clean, noisy):
    n = fem.l2_norm(mesh, np.asarray(noisy) - np.asarray(clean), location="cell")
    return 20.0 * math.log10(fem.l2_norm(mesh, clean, location="cell") / n)


def relative_error(mesh, truth, recon):
    """``||truth - recon|| / ||truth||`` in L2(Omega) for nodal fields."""
    truth = np.asarray(truth, dtype=float)
    return fem.l2_norm(mesh, truth - np.asarray(recon, dtype=float), location="node") / fem.l2_norm(
        mesh, truth, location="node"
    )
