import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from aetlm import io, lm
from aetlm.mesh import generate_rectangle_mesh


@pytest.fixture(scope="module")
def square():
    return generate_rectangle_mesh(1.0, 1.0, 0.25)


def test_vtk_round_trip(tmp_path, square, rng):
    p = rng.normal(size=square.n_vertices)
    c = rng.normal(size=square.n_triangles)
    io.write_vtk(tmp_path / "f.vtk", square, {"p": p}, {"c": c, "d": 2 * c})
    pts, tris, pd, cd = io.read_vtk(tmp_path / "f.vtk")
    np.testing.assert_array_equal(pts, square.vertices)
    np.testing.assert_array_equal(tris, square.triangles)
    np.testing.assert_array_equal(pd["p"], p)
    np.testing.assert_array_equal(cd["c"], c)
    np.testing.assert_array_equal(cd["d"], 2 * c)


@given(arrays(np.float64, 25, elements=st.floats(-1e300, 1e300)))
def test_vtk_values_exact(vals):
    import tempfile
    from pathlib import Path
    mesh = generate_rectangle_mesh(1.0, 1.0, 0.25)
    with tempfile.TemporaryDirectory() as d:
        io.write_vtk(Path(d) / "v.vtk", mesh, {"v": vals})
        np.testing.assert_array_equal(io.read_vtk(Path(d) / "v.vtk")[2]["v"], vals)


def test_vtk_shape_mismatch(tmp_path, square):
    with pytest.raises(ValueError):
        io.write_vtk(tmp_path / "x.vtk", square, {"p": np.zeros(3)})


def _record(k, alpha=0.5):
    return lm.IterationRecord(k=k, eta=0.1 / (k + 1), eta_b=[0.01, 0.02], misfit=1.0, wall_time=0.1 * k,
                              alpha=alpha, tau_norm=0.3)


def test_record_writer(tmp_path, square):
    with io.RecordWriter(tmp_path / "r.csv", square, snapshot_every=2, truth=np.ones(square.n_vertices)) as w:
        for k in range(4):
            w(_record(k), np.full(square.n_vertices, float(k)))
        w(_record(4, alpha=math.nan), np.full(square.n_vertices, 4.0))
    rows = io.read_records_csv(tmp_path / "r.csv")
    assert [int(r["k"]) for r in rows] == [0, 1, 2, 3, 4]
    assert float(rows[1]["eta"]) == 0.05 and float(rows[0]["eta_b_max"]) == 0.02
    assert rows[4]["alpha"] == "nan"
    snaps = sorted(p.name for p in tmp_path.glob("sigma_*.vtk"))
    assert snaps == ["sigma_0000.vtk", "sigma_0002.vtk", "sigma_0004.vtk"]
    _, _, pd, _ = io.read_vtk(tmp_path / "sigma_0002.vtk")
    np.testing.assert_array_equal(pd["sigma"], 2.0)
    np.testing.assert_array_equal(pd["sigma_truth"], 1.0)
    assert len(w.records) == 5


def test_record_writer_without_snapshots(tmp_path):
    with io.RecordWriter(tmp_path / "r.csv") as w:
        w(_record(0), np.zeros(3))
    assert not list(tmp_path.glob("*.vtk"))


def test_measurement_round_trip(tmp_path, rng):
    meas = [
        lm.Measurement(rng.normal(size=7), pattern=rng.normal(size=4), U_true=rng.normal(size=4), noise_level=0.3),
        lm.Measurement(rng.normal(size=7), boundary=rng.normal(size=5)),
    ]
    truth = rng.random(5)
    io.save_measurements(tmp_path / "d", meas, truth)
    back, t = io.load_measurements(tmp_path / "d")
    np.testing.assert_array_equal(t, truth)
    for a, b in zip(meas, back):
        for name in ("E_delta", "pattern", "U_true", "boundary"):
            x, y = getattr(a, name), getattr(b, name)
            assert (x is None and y is None) or np.array_equal(x, y)
        assert a.noise_level == b.noise_level
    with pytest.raises(FileNotFoundError):
        io.load_measurements(tmp_path / "nope")


def test_voltage_and_check_csv(tmp_path):
    U = [np.array([1.0, -1.0, 0.0]), np.array([0.5, 0.25, -0.75])]
    io.write_voltages_csv(tmp_path / "u.csv", U, [2, 3])
    labels, back = io.read_voltages_csv(tmp_path / "u.csv")
    assert labels == ["2", "3"]
    np.testing.assert_array_equal(back, np.array(U))
    from aetlm.checks import CheckResult
    io.write_checks_csv(tmp_path / "c.csv", [CheckResult("a", True, 1e-12, "<= 1e-8")])
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "a,True,1e-12,<= 1e-8,"


def test_content_hash(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.write_bytes(b"x")
    b.write_bytes(b"y")
    h = io.content_hash([a, b])
    assert h == io.content_hash([b, a])
    b.write_bytes(b"z")
    assert io.content_hash([a, b]) != h
