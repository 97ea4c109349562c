"""Compare the numba and numpy kernel backends.

Part 1 times every kernel in-process on disk meshes of increasing size
(numba compile time excluded by a warm-up call).  Part 2 times a short
end-to-end reconstruction in two subprocesses, one with
``AETLM_DISABLE_NUMBA=1``, since the backend is fixed at import time.

    python3 benchmarks/bench_kernels.py [--sizes 15000 77000] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from aetlm import kernels
from aetlm.mesh import ElectrodeLayout, generate_disk_mesh, h_for_triangle_count


def _time(fn, args, repeat):
    fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_table(sizes, repeat):
    rows = []
    for n in sizes:
        mesh = generate_disk_mesh(0.25, h_for_triangle_count(np.pi * 0.0625, n), ElectrodeLayout(16))
        v, t = np.ascontiguousarray(mesh.vertices), np.ascontiguousarray(mesh.triangles)
        grads, areas = kernels.p1_geometry_np(v, t)
        coef = np.ones(len(t))
        u = np.sin(10 * v[:, 0]) * v[:, 1]
        vec = np.ascontiguousarray(np.random.default_rng(0).normal(size=(len(t), 2)))
        seg = mesh.boundary_edges
        cases = {
            "p1_geometry": (v, t),
            "stiffness_values": (grads, areas, coef),
            "cell_gradient": (grads, t, u),
            "scatter_gradient_load": (grads, t, vec, len(v)),
            "scatter_cell_load": (t, coef, len(v)),
            "segment_distance": (v, np.ascontiguousarray(v[seg[:, 0]]), np.ascontiguousarray(v[seg[:, 1]])),
        }
        for name, args in cases.items():
            r = {"triangles": len(t), "kernel": name}
            for backend, impl in kernels.IMPLEMENTATIONS.items():
                r[backend] = _time(impl[name], args, repeat)
            rows.append(r)
    return rows


_E2E = """
import time, numpy as np
from aetlm import kernels, lm, phantom, forward
from aetlm.mesh import ElectrodeLayout, generate_disk_mesh, h_for_triangle_count
t0 = time.perf_counter()
mesh = generate_disk_mesh(0.25, h_for_triangle_count(np.pi * 0.0625, {n}), ElectrodeLayout(16))
truth = phantom.true_conductivity(mesh, phantom.builtin_spec("heart-lung"))
meas = lm.simulate_measurements(mesh, truth, [forward.fourier_pattern(k, 16) for k in (1, 2, 3)],
                                noise=phantom.NoiseSpec(60.0, 0))
t1 = time.perf_counter()
cfg = lm.LmConfig.preset("heart-lung", max_iter={iters})
sigma, rec = lm.lm_scem(cfg, mesh, meas, 0.22, truth)
t2 = time.perf_counter()
print(kernels.BACKEND, t1 - t0, t2 - t1, rec[-1].eta)
"""


def end_to_end(n, iters):
    out = {}
    for backend, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, AETLM_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _E2E.format(n=n, iters=iters)],
                             env=env, capture_output=True, text=True, check=True)
        name, setup, solve, eta = res.stdout.split()
        out[name] = {"setup_s": float(setup), "lm_s": float(solve), "eta": float(eta)}
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[15000, 77000])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--e2e-triangles", type=int, default=15000)
    p.add_argument("--e2e-iters", type=int, default=3)
    p.add_argument("--json", help="also write results to this file")
    args = p.parse_args(argv)

    rows = kernel_table(args.sizes, args.repeat)
    print(f"{'triangles':>9}  {'kernel':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for r in rows:
        nb, npy = r.get("numba", np.nan), r["numpy"]
        print(f"{r['triangles']:>9}  {r['kernel']:<22}{1e3 * nb:>12.3f}{1e3 * npy:>12.3f}{npy / nb:>10.1f}")
    e2e = end_to_end(args.e2e_triangles, args.e2e_iters)
    print(f"\nend-to-end ({args.e2e_triangles} triangles, {args.e2e_iters} LM iterations, includes JIT load):")
    for name, r in e2e.items():
        print(f"  {name:<6} setup {r['setup_s']:.2f} s  LM {r['lm_s']:.2f} s  eta {r['eta']:.6%}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "end_to_end": e2e}, fh, indent=2)


if __name__ == "__main__":
    main()
