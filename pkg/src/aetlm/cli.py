"""Command-line driver: ``aetlm {simulate,reconstruct,check,phantom,mesh}``.

Experiments are described by a TOML file (see ``configs/``)::

    [experiment]  name, algorithm (lm-scem | lm-dcm | mixed), seed, sigma0
    [phantom]     name (built-in) or path (TOML phantom spec)
    [mesh]        triangles or h, electrodes, coverage
    [patterns]    indices (Fourier pattern numbers n)
    [noise]       snr_db ("inf" for clean data)
    [model]       kind (scem | cem), peak, z
    [lm]          preset plus any LmConfig field
    [data]        dir (optional: reuse the output of ``simulate``)
    [output]      dir, snapshot_every
"""

import argparse
from dataclasses import dataclass, field, fields
import json
import math
from pathlib import Path
import platform
import sys
import time
import warnings

import numpy as np

from . import __version__, checks, fem, io
from .forward import Cem, ElectrodeSystem, Scem, fourier_pattern
from .lm import (
    LmConfig, PRESETS, StepError, known_region_mask, lm_dcm, lm_scem, mixed_reconstruction,
    simulate_dcm_measurements, simulate_measurements, extract_boundary_trace,
)
from .mesh import (
    ElectrodeLayout, extract_interior_submesh, generate_disk_mesh, generate_ellipse_mesh,
    h_for_triangle_count, load_mesh, save_mesh,
)
from .phantom import NoiseSpec, builtin_spec, load_phantom_spec, relative_error, true_conductivity

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4

ALGORITHMS = ("lm-scem", "lm-dcm", "mixed")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    algorithm: str = "lm-scem"
    seed: int = 0
    sigma0: object = None
    phantom: str = "heart-lung"
    phantom_path: str = None
    triangles: int = 15000
    h: float = None
    electrodes: int = 16
    coverage: float = 0.5
    patterns: list = field(default_factory=lambda: [1, 2, 3])
    snr_db: float = 60.0
    model: str = "scem"
    peak: float = 1.0
    z: float = 2.0
    lm: LmConfig = field(default_factory=LmConfig)
    data_dir: str = None
    out_dir: str = "runs/experiment"
    snapshot_every: int = 0
    source: str = None

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["lm"] = self.lm.to_dict()
        return d

    def model_object(self):
        return Scem(self.peak) if self.model == "scem" else Cem(self.z)

    def noise(self):
        return NoiseSpec(self.snr_db, self.seed)


def _section(data, name):
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _float(v, what):
    if isinstance(v, str) and v.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {v!r}") from None


def config_from_dict(data, base_dir=Path(".")):
    exp = _section(data, "experiment")
    ph = _section(data, "phantom")
    me = _section(data, "mesh")
    pa = _section(data, "patterns")
    no = _section(data, "noise")
    mo = _section(data, "model")
    lm_sec = dict(_section(data, "lm"))
    da = _section(data, "data")
    ou = _section(data, "output")
    cfg = ExperimentConfig()
    cfg.name = str(exp.get("name", cfg.name))
    cfg.algorithm = str(exp.get("algorithm", cfg.algorithm))
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got '{cfg.algorithm}'")
    cfg.seed = int(exp.get("seed", cfg.seed))
    cfg.sigma0 = exp.get("sigma0")
    if "path" in ph:
        p = Path(ph["path"])
        p = p if p.is_absolute() else base_dir / p
        if not p.exists():
            raise ConfigError(f"phantom spec file {p} does not exist")
        cfg.phantom_path = str(p)
    cfg.phantom = str(ph.get("name", cfg.phantom))
    if "h" in me:
        cfg.h = _float(me["h"], "mesh.h")
    cfg.triangles = int(me.get("triangles", cfg.triangles))
    cfg.electrodes = int(me.get("electrodes", cfg.electrodes))
    cfg.coverage = _float(me.get("coverage", cfg.coverage), "mesh.coverage")
    cfg.patterns = [int(n) for n in pa.get("indices", cfg.patterns)]
    if not cfg.patterns:
        raise ConfigError("at least one current pattern is required")
    for n in cfg.patterns:
        if n <= 0 or n % cfg.electrodes == 0:
            raise ConfigError(f"pattern index {n} is invalid for {cfg.electrodes} electrodes")
    cfg.snr_db = _float(no.get("snr_db", cfg.snr_db), "noise.snr_db")
    if math.isnan(cfg.snr_db) or cfg.snr_db == -math.inf:
        raise ConfigError("noise.snr_db must be finite or inf")
    cfg.model = str(mo.get("kind", cfg.model))
    if cfg.model not in ("scem", "cem"):
        raise ConfigError("model.kind must be 'scem' or 'cem'")
    cfg.peak = _float(mo.get("peak", cfg.peak), "model.peak")
    cfg.z = _float(mo.get("z", cfg.z), "model.z")
    preset = lm_sec.pop("preset", None)
    known = {f.name for f in fields(LmConfig)}
    unknown = set(lm_sec) - known
    if unknown:
        raise ConfigError(f"unknown [lm] keys: {sorted(unknown)}")
    try:
        overrides = {
            k: (int(v) if k.endswith("max_iter") else _float(v, f"lm.{k}")) for k, v in lm_sec.items()
        }
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown lm preset '{preset}' (have {sorted(PRESETS)})")
            cfg.lm = LmConfig.preset(preset, **overrides)
        else:
            cfg.lm = LmConfig(**overrides)
    except ValueError as exc:
        raise ConfigError(f"[lm]: {exc}") from None
    if "dir" in da:
        p = Path(da["dir"])
        cfg.data_dir = str(p if p.is_absolute() else base_dir / p)
    cfg.out_dir = str(ou.get("dir", f"runs/{cfg.name}"))
    cfg.snapshot_every = int(ou.get("snapshot_every", 0))
    return cfg


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = config_from_dict(data, path.parent)
    cfg.source = str(path)
    return cfg


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------

def phantom_spec(cfg):
    if cfg.phantom_path:
        return load_phantom_spec(cfg.phantom_path)
    try:
        return builtin_spec(cfg.phantom)
    except KeyError:
        raise ConfigError(f"unknown built-in phantom '{cfg.phantom}'") from None


def build_mesh(cfg, spec):
    dom = spec.domain
    kind = dom.get("kind", "disk")
    if kind == "disk":
        a = b = float(dom["radius"])
    elif kind == "ellipse":
        a, b = (float(v) for v in dom["semi_axes"])
    else:
        raise ConfigError(f"unsupported phantom domain '{kind}'")
    h = cfg.h or h_for_triangle_count(math.pi * a * b, cfg.triangles)
    try:
        layout = ElectrodeLayout(cfg.electrodes, cfg.coverage)
        if kind == "disk":
            return generate_disk_mesh(a, h, layout)
        return generate_ellipse_mesh(a, b, h, layout)
    except ValueError as exc:
        raise ConfigError(f"[mesh]: {exc}") from None


def initial_sigma(cfg, spec, mesh, truth):
    if cfg.sigma0 is None:
        sigma0 = np.full(mesh.n_vertices, spec.background)
    else:
        sigma0 = np.full(mesh.n_vertices, _float(cfg.sigma0, "experiment.sigma0"))
    if np.any(sigma0 <= 0):
        raise ConfigError("experiment.sigma0 must be positive")
    # the collar is known: start from the true values there
    mask = known_region_mask(mesh, cfg.lm.delta_d)
    sigma0[mask] = truth[mask]
    return sigma0


def simulate(cfg, mesh, truth):
    patterns = [fourier_pattern(n, cfg.electrodes) for n in cfg.patterns]
    return simulate_measurements(mesh, truth, patterns, cfg.model_object(), cfg.noise())


def _dcm_problem(cfg, mesh, truth):
    """Dirichlet data on the interior subdomain from the true SCEM potentials."""
    sub = extract_interior_submesh(mesh, cfg.lm.delta_d)
    system = ElectrodeSystem(mesh, truth, cfg.model_object())
    traces = [extract_boundary_trace(system.solve(fourier_pattern(n, cfg.electrodes)).u, sub)
              for n in cfg.patterns]
    data = simulate_dcm_measurements(sub, truth[sub.parent_vertices], traces, cfg.noise())
    return sub, data


def _write_manifest(out, cfg, inputs, outputs, extra=None):
    manifest = {
        "aetlm_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "noise_seed_rule": "pattern m uses seed + m; interior (phase-2) data use seed + 1000 + m",
        "input_hash": io.content_hash([p for p in inputs if Path(p).exists()]),
        "inputs": [str(p) for p in inputs],
        "output_hash": io.content_hash([p for p in outputs if Path(p).exists()]),
        "outputs": sorted(Path(p).name for p in outputs),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _inputs(cfg):
    out = [cfg.source] if cfg.source else []
    if cfg.phantom_path:
        out.append(cfg.phantom_path)
    return out


def cmd_mesh(cfg, out):
    spec = phantom_spec(cfg)
    mesh = build_mesh(cfg, spec)
    files = [out / "mesh.txt", out / "mesh.vtk"]
    save_mesh(mesh, files[0])
    io.write_vtk(files[1], mesh, cell_data={"area": mesh.areas})
    _write_manifest(out, cfg, _inputs(cfg), files)
    print(f"mesh: {mesh.n_triangles} triangles, {mesh.n_vertices} vertices, h={mesh.characteristic_h:.4g}")
    return EXIT_OK


def cmd_phantom(cfg, out):
    spec = phantom_spec(cfg)
    mesh = build_mesh(cfg, spec)
    truth = true_conductivity(mesh, spec)
    files = [out / "sigma_truth.npy", out / "sigma_truth.vtk", out / "mesh.txt"]
    np.save(files[0], truth)
    io.write_vtk(files[1], mesh, {"sigma_truth": truth})
    save_mesh(mesh, files[2])
    _write_manifest(out, cfg, _inputs(cfg), files)
    print(f"phantom '{spec.name}': sigma in [{truth.min():.4g}, {truth.max():.4g}] S/m")
    return EXIT_OK


def cmd_simulate(cfg, out):
    spec = phantom_spec(cfg)
    mesh = build_mesh(cfg, spec)
    truth = true_conductivity(mesh, spec)
    meas = simulate(cfg, mesh, truth)
    files = io.save_measurements(out, meas, truth)
    io.write_voltages_csv(out / "U_true.csv", [m.U_true for m in meas], cfg.patterns)
    files.append(out / "U_true.csv")
    save_mesh(mesh, out / "mesh.txt")
    files.append(out / "mesh.txt")
    io.write_vtk(out / "data.vtk", mesh, {"sigma_truth": truth},
                 {f"E_delta_{m}": x.E_delta for m, x in enumerate(meas)})
    files.append(out / "data.vtk")
    _write_manifest(out, cfg, _inputs(cfg), files)
    print(f"simulated {len(meas)} measurements on {mesh.n_triangles} triangles at {cfg.snr_db} dB")
    return EXIT_OK


def cmd_reconstruct(cfg, out):
    spec = phantom_spec(cfg)
    inputs = _inputs(cfg)
    if cfg.data_dir:
        d = Path(cfg.data_dir)
        if not (d / "mesh.txt").exists():
            raise ConfigError(f"data directory {d} has no mesh.txt (run 'simulate' first)")
        mesh = load_mesh(d / "mesh.txt")
        meas, truth = io.load_measurements(d)
        if truth is None:
            truth = true_conductivity(mesh, spec)
        inputs += sorted(str(p) for p in d.iterdir() if p.suffix in (".npy", ".txt", ".json"))
    else:
        mesh = build_mesh(cfg, spec)
        truth = true_conductivity(mesh, spec)
        meas = None
    sigma0 = initial_sigma(cfg, spec, mesh, truth)
    t0 = time.perf_counter()
    with io.RecordWriter(out / "records.csv", mesh, cfg.snapshot_every, out, truth) as writer:
        info = {}
        if cfg.algorithm == "lm-dcm":
            sub, data = _dcm_problem(cfg, mesh, truth)
            parent = sub.parent_vertices
            writer.mesh = None

            def cb(rec, s):
                full = sigma0.copy()
                full[parent] = s
                writer(rec, full)

            sub_truth = truth[parent]
            s_sub, records = lm_dcm(cfg.lm, sub, data, sigma0[parent], sub_truth, callback=cb)
            sigma = sigma0.copy()
            sigma[parent] = s_sub
            records_eta = relative_error(mesh, truth, sigma)
        else:
            if meas is None:
                meas = simulate(cfg, mesh, truth)
            if cfg.algorithm == "lm-scem":
                sigma, records = lm_scem(cfg.lm, mesh, meas, sigma0, truth, cfg.model_object(), writer)
            else:
                sigma, records, info = mixed_reconstruction(
                    cfg.lm, mesh, meas, sigma0, truth, cfg.model_object(), cfg.noise(), writer
                )
            records_eta = relative_error(mesh, truth, sigma)
    elapsed = time.perf_counter() - t0
    files = [out / "sigma_r.npy", out / "sigma_r.vtk", out / "records.csv", out / "summary.json"]
    np.save(files[0], sigma)
    io.write_vtk(files[1], mesh, {"sigma_r": sigma, "sigma_truth": truth, "error": sigma - truth})
    last = records[-1]
    with_b = [r for r in records if r.eta_b]
    steps = sum(1 for r in records if not math.isnan(r.alpha))
    summary = {
        "algorithm": cfg.algorithm,
        "final_eta": records_eta,
        "final_eta_b": with_b[-1].eta_b if with_b else [],
        "iterations": steps,
        "stop_reason": last.note,
        "wall_time_s": elapsed,
        "triangles": mesh.n_triangles,
        "max_step_residual": float(np.nanmax([r.step_residual for r in records] + [0.0])),
        "clamped_total": int(sum(r.clamped for r in records)),
    }
    if info:
        summary["phase1_iterations"] = info["phase1_iterations"]
        summary["submesh_triangles"] = info["submesh"].n_triangles
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
    _write_manifest(out, cfg, inputs, files)
    print(f"{cfg.algorithm}: eta = {records_eta:.4%} after {steps} iterations "
          f"({last.note}), {elapsed:.1f} s")
    return EXIT_OK


def cmd_check(args, out):
    results = checks.run_all(h=args.h, seed=args.seed or 0, draws=args.draws,
                             adjoint_sign=-1.0 if args.corrupt_adjoint_sign else 1.0)
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    (out / "checks.txt").write_text("\n".join(lines) + "\n")
    io.write_checks_csv(out / "checks.csv", results)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def _parser():
    p = argparse.ArgumentParser(prog="aetlm", description="Acousto-electric tomography by Levenberg-Marquardt.")
    p.add_argument("--version", action="version", version=f"aetlm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment TOML file")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--seed", type=int, help="noise seed (overrides [experiment] seed)")
        sp.add_argument("--threads", type=int, help="worker threads for compiled kernels")
        sp.add_argument("--snapshot-every", type=int, help="VTK snapshot of sigma_k every N iterations")

    for name, helptext in (("simulate", "simulate noisy power densities"),
                           ("reconstruct", "run a reconstruction"),
                           ("phantom", "write the true conductivity only"),
                           ("mesh", "write the mesh only")):
        common(sub.add_parser(name, help=helptext))
    chk = sub.add_parser("check", help="run the numerical self-checks")
    common(chk, config_required=False)
    chk.add_argument("--h", type=float, default=0.05, help="mesh size of the unit-disk test mesh")
    chk.add_argument("--draws", type=int, default=10)
    chk.add_argument("--corrupt-adjoint-sign", action="store_true", help=argparse.SUPPRESS)
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from . import kernels

    if kernels.NUMBA_ENABLED:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        if args.command == "check":
            out = Path(args.out or "runs/check")
            out.mkdir(parents=True, exist_ok=True)
            return cmd_check(args, out)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.snapshot_every is not None:
            cfg.snapshot_every = args.snapshot_every
        out = Path(args.out or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        handler = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
                   "phantom": cmd_phantom, "mesh": cmd_mesh}[args.command]
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return handler(cfg, out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"aetlm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (fem.SolverError, StepError) as exc:
        print(f"aetlm: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
