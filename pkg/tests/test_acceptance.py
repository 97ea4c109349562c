"""Acceptance suite: one PASS/FAIL line per criterion.

    pytest tests/test_acceptance.py -v -s

Tolerances are fixed constants below; the reconstruction criteria run the
shipped configs in ``configs/`` (a couple of minutes in total).
"""

from dataclasses import replace
import math
from pathlib import Path
import time

import numpy as np
import pytest

from aetlm import checks, cli, lm
from aetlm.mesh import extract_interior_submesh
from aetlm.phantom import relative_error, true_conductivity

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# 1 adjoint identity
ADJ_MAX_TRIANGLES = 5000
ADJ_DRAWS = 10
ADJ_TOL = 1e-8
ADJ_RUNTIME_S = 60.0
# 2 derivative consistency
FD_DRAWS = 10
FD_BAND = (3.5, 4.5)
FD_RUNTIME_S = 120.0
# 3 Gram operator: error ratio under one halving of h
GRAM_BAND = (3.5, 4.5)
# 4 forward physics
RECIP_TOL = 1e-8
CURRENT_TOL = 1e-8
GROUND_TOL = 1e-12
# 5 electrode-edge regularity
EDGE_STABLE = 0.10
# 6 heart-lung
HL_ETA_MAX = 0.02
HL_MAX_STEPS = 15
HL_ORDER_SLACK = 1.05  # reading of "<= approximately"
HL_RUNTIME_S = 30 * 60.0
# 7 noise stability
N40_ETA_MAX = 0.03
N40_PLATEAU = 0.10
# 8 mixed strategy
ETA_B_TARGET = 1e-3
ETA_SWITCH = 0.05
MIXED_ETA_MAX = 1e-2

_results = {}


def report(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({title}): {detail}"
    _results[number] = line
    return line


@pytest.fixture
def emit(capsys):
    def _emit(line):
        with capsys.disabled():
            print("\n" + line)
    return _emit


def _pipeline(config_name):
    cfg = cli.load_config(CONFIGS / config_name)
    spec = cli.phantom_spec(cfg)
    mesh = cli.build_mesh(cfg, spec)
    truth = true_conductivity(mesh, spec)
    sigma0 = cli.initial_sigma(cfg, spec, mesh, truth)
    return cfg, mesh, truth, sigma0


def test_criterion_1_adjoint_identity(emit):
    mesh = checks.default_mesh(0.05)
    assert mesh.n_triangles <= ADJ_MAX_TRIANGLES
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    scem = checks.adjoint_identity(mesh, rng, "scem", ADJ_DRAWS, ADJ_TOL)
    dcm = checks.adjoint_identity(extract_interior_submesh(mesh, 0.0), rng, "dcm", ADJ_DRAWS, ADJ_TOL)
    elapsed = time.perf_counter() - t0
    ok = scem.passed and dcm.passed and elapsed < ADJ_RUNTIME_S
    emit(report(1, "adjoint identity", ok,
                f"max rel. defect SCEM {scem.value:.2e}, DCM {dcm.value:.2e} (want <= {ADJ_TOL:g}) "
                f"on {mesh.n_triangles} triangles, {ADJ_DRAWS} draws, {elapsed:.1f} s (want < {ADJ_RUNTIME_S:g} s)"))
    assert ok


def test_criterion_2_derivative_consistency(emit):
    mesh = checks.default_mesh(0.05)
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    rs = checks.derivative_ratios(mesh, rng, "scem", FD_DRAWS)
    rd = checks.derivative_ratios(extract_interior_submesh(mesh, 0.0), rng, "dcm", FD_DRAWS)
    elapsed = time.perf_counter() - t0
    r = np.concatenate([rs, rd])
    ok = bool(np.all((r >= FD_BAND[0]) & (r <= FD_BAND[1]))) and elapsed < FD_RUNTIME_S
    emit(report(2, "derivative consistency", ok,
                f"Taylor ratios SCEM {rs.min():.3f}..{rs.max():.3f}, DCM {rd.min():.3f}..{rd.max():.3f} "
                f"over {FD_DRAWS} draws each (want in {list(FD_BAND)}), "
                f"{elapsed:.1f} s (want < {FD_RUNTIME_S:g} s)"))
    assert ok


def test_criterion_3_gram_operator(emit):
    res = checks.gram_eigenfunction(h=0.05, beta=1.0, band=GRAM_BAND)
    emit(report(3, "Gram operator eigenfunction", res.passed,
                f"error ratio h/(h/2) = {res.value:.3f} (want in {list(GRAM_BAND)}), {res.detail}"))
    assert res.passed


def test_criterion_4_forward_physics(emit):
    mesh = checks.default_mesh(0.05)
    rng = np.random.default_rng(2)
    worst = {"reciprocity": 0.0, "electrode current recovery": 0.0, "grounding sum(U)": 0.0}
    for _ in range(5):
        for r in checks.reciprocity(mesh, rng, RECIP_TOL):
            worst[r.name] = max(worst[r.name], r.value)
    ok = (worst["reciprocity"] <= RECIP_TOL and worst["electrode current recovery"] <= CURRENT_TOL
          and worst["grounding sum(U)"] <= GROUND_TOL)
    emit(report(4, "forward physics", ok,
                f"reciprocity {worst['reciprocity']:.2e} (want <= {RECIP_TOL:g}), currents "
                f"{worst['electrode current recovery']:.2e} (want <= {CURRENT_TOL:g}), "
                f"|sum U| {worst['grounding sum(U)']:.2e} (want <= {GROUND_TOL:g})"))
    assert ok


def test_criterion_5_electrode_edge_regularity(emit):
    results, cem, scem = checks.electrode_edge_regularity(stable=EDGE_STABLE)
    ok = all(r.passed for r in results)
    emit(report(5, "electrode-edge regularity", ok,
                "endpoint max E  CEM " + " -> ".join(f"{v:.0f}" for v in cem)
                + "  SCEM " + " -> ".join(f"{v:.0f}" for v in scem)
                + f"  (CEM > SCEM: {results[0].passed}, CEM grows: {results[1].passed}, "
                f"SCEM drift {results[2].value:.1%} <= {EDGE_STABLE:.0%}: {results[2].passed})"))
    assert ok


@pytest.fixture(scope="module")
def heart_lung_runs():
    cfg, mesh, truth, sigma0 = _pipeline("heart_lung.toml")
    out = {"triangles": mesh.n_triangles}
    for pats in ((1, 2, 3), (2, 3), (2,)):
        meas = cli.simulate(replace(cfg, patterns=list(pats)), mesh, truth)
        t0 = time.perf_counter()
        sigma, rec = lm.lm_scem(cfg.lm, mesh, meas, sigma0, truth, cfg.model_object())
        out[pats] = (relative_error(mesh, truth, sigma), rec, time.perf_counter() - t0)
    return out


def test_criterion_6_heart_lung(emit, heart_lung_runs):
    e123, rec, secs = heart_lung_runs[(1, 2, 3)]
    e23 = heart_lung_runs[(2, 3)][0]
    e2 = heart_lung_runs[(2,)][0]
    steps = sum(1 for r in rec if not math.isnan(r.alpha))
    ok_eta = e123 <= HL_ETA_MAX and steps <= HL_MAX_STEPS and secs < HL_RUNTIME_S
    ok_order = e123 < e23 <= HL_ORDER_SLACK * e2
    emit(report(6, "heart-lung reconstruction", ok_eta and ok_order,
                f"{heart_lung_runs['triangles']} triangles: eta(I123) = {e123:.3%} after {steps} steps "
                f"in {secs:.0f} s (want <= {HL_ETA_MAX:.0%}, <= {HL_MAX_STEPS} steps); ordering "
                f"{e123:.3%} < {e23:.3%} <= {HL_ORDER_SLACK} x {e2:.3%}: {ok_order}"))
    assert ok_eta and ok_order


def test_criterion_7_noise_stability(emit):
    cfg, mesh, truth, sigma0 = _pipeline("heart_lung_40db.toml")
    meas = cli.simulate(cfg, mesh, truth)
    sigma, rec = lm.lm_scem(cfg.lm, mesh, meas, sigma0, truth, cfg.model_object())
    eta = [r.eta for r in rec]
    last = eta[-3:]
    drift = (max(last) - min(last)) / min(last)
    ok = eta[-1] <= N40_ETA_MAX and drift < N40_PLATEAU
    emit(report(7, "noise stability (40 dB)", ok,
                f"final eta {eta[-1]:.3%} (want <= {N40_ETA_MAX:.0%}); last three "
                + ", ".join(f"{v:.3%}" for v in last)
                + f", spread {drift:.1%} (want < {N40_PLATEAU:.0%})"))
    assert ok


@pytest.fixture(scope="module")
def brain_runs():
    cfg, mesh, truth, sigma0 = _pipeline("brain_mixed.toml")
    meas = cli.simulate(cfg, mesh, truth)
    t0 = time.perf_counter()
    sigma, rec, info = lm.mixed_reconstruction(cfg.lm, mesh, meas, sigma0, truth, cfg.model_object(), cfg.noise())
    budget = time.perf_counter() - t0
    mixed_eta = relative_error(mesh, truth, sigma)
    # SCEM-only gets the same wall-clock budget and no early stopping
    cfg_s, _, _, _ = _pipeline("brain_scem.toml")
    scem_cfg = replace(cfg_s.lm, max_time=budget, max_iter=10 ** 6, stall_tol=0.0, discrepancy=0.0)
    sig_s, rec_s = lm.lm_scem(scem_cfg, mesh, meas, sigma0, truth, cfg.model_object())
    return {
        "triangles": mesh.n_triangles, "mixed": (mixed_eta, rec, info, budget),
        "scem": (relative_error(mesh, truth, sig_s), rec_s),
    }


def test_criterion_8_mixed_strategy(emit, brain_runs):
    mixed_eta, rec, info, budget = brain_runs["mixed"]
    scem_eta, rec_s = brain_runs["scem"]
    first_b = next((i for i, r in enumerate(rec) if r.eta_b and max(r.eta_b) < ETA_B_TARGET), None)
    first_eta = next((i for i, r in enumerate(rec) if r.eta < ETA_SWITCH), None)
    ok_a = first_b is not None and first_eta is not None and first_b < first_eta
    ok_b = mixed_eta < scem_eta
    ok_c = mixed_eta <= MIXED_ETA_MAX
    emit(report(8, "mixed strategy", ok_a and ok_b and ok_c,
                f"{brain_runs['triangles']} triangles; (a) eta_b < {ETA_B_TARGET:g} at record {first_b}, "
                f"eta < {ETA_SWITCH:.0%} at record {first_eta}: {ok_a}; (b) mixed {mixed_eta:.3%} vs "
                f"SCEM-only {scem_eta:.3%} in {budget:.1f} s ({len(rec_s) - 1} SCEM steps): {ok_b}; "
                f"(c) mixed {mixed_eta:.3%} <= {MIXED_ETA_MAX:.0%}: {ok_c}"))
    assert ok_a and ok_b and ok_c


def test_criterion_9_reference_values_informational(emit, heart_lung_runs, brain_runs):
    # Not a numeric gate: published values are order-of-magnitude anchors only.
    line = ("[INFO] criterion 9 (published values as anchors, no gate): "
            f"eta(I123, 60 dB) {heart_lung_runs[(1, 2, 3)][0]:.3%} vs 0.162%; "
            f"eta(I2) {heart_lung_runs[(2,)][0]:.2%} vs 3.08%; "
            f"mixed {brain_runs['mixed'][0]:.3%} vs 0.0813%; "
            f"SCEM-only (equal budget) {brain_runs['scem'][0]:.2%} vs 4.09%")
    _results[9] = line
    emit(line)
