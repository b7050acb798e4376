import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrom.aero import (
    AeroReference,
    coefficient_weights,
    integrate_coefficients,
    moment_reference,
    wind_axes,
)
from graphrom.mesh import SurfaceMesh


def plate(nx=4, ny=3, lx=2.0, ly=1.0, x0=0.0):
    xs, ys = np.meshgrid(np.linspace(x0, x0 + lx, nx + 1), np.linspace(0, ly, ny + 1), indexing="ij")
    nodes = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], 1)
    idx = np.arange(nodes.shape[0]).reshape(nx + 1, ny + 1)
    cells = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            cells += [(a, b, c), (a, c, d)]
    return SurfaceMesh(nodes, np.array(cells))


def icosphere(level):
    t = (1 + 5**0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(level):
        cache, nf = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return SurfaceMesh(np.array(verts), np.array(f))


def test_flat_plate_lift():
    m = plate()
    ref = AeroReference(1.0, m.total_area)
    c = integrate_coefficients(m, -np.ones(m.n_nodes), np.zeros((m.n_nodes, 3)), ref)
    assert abs(c.CL - 1.0) <= 1e-12 and abs(c.CD) <= 1e-12


def test_uniform_friction_drag():
    m = plate()
    cf = np.zeros((m.n_nodes, 3))
    cf[:, 0] = 1.0
    c = integrate_coefficients(m, np.zeros(m.n_nodes), cf, AeroReference(1.0, m.total_area))
    assert abs(c.CD - 1.0) <= 1e-12 and abs(c.CL) <= 1e-12


def test_symmetric_uniform_load_no_moment():
    m = plate(x0=-1.0)
    ref = AeroReference(1.0, m.total_area, tuple(m.nodes.mean(axis=0)))
    c = integrate_coefficients(m, -np.ones(m.n_nodes), np.zeros((m.n_nodes, 3)), ref)
    assert abs(c.CMy) <= 1e-12


def test_moment_closed_form():
    # lift 1 per unit plate area on x in [0, 2], axis at x = 0: CMy = -x_c * CL / c = -1
    m = plate()
    ref = AeroReference(1.0, m.total_area, (0.0, 0.0, 0.0))
    c = integrate_coefficients(m, -np.ones(m.n_nodes), np.zeros((m.n_nodes, 3)), ref)
    assert abs(c.CMy + 1.0) <= 1e-12


def test_aoa_rotation():
    m = plate()
    ref = AeroReference(1.0, m.total_area, aoa=90.0)
    c = integrate_coefficients(m, -np.ones(m.n_nodes), np.zeros((m.n_nodes, 3)), ref)
    # normal force along +z is pure drag at 90 degrees
    assert abs(c.CD - 1.0) <= 1e-12 and abs(c.CL) <= 1e-12
    d, l = wind_axes(17.0)
    assert abs(d @ l) < 1e-15


def test_shape_errors():
    m = plate()
    ref = AeroReference(1.0, 1.0)
    with pytest.raises(ValueError, match="cp"):
        integrate_coefficients(m, np.zeros(3), np.zeros((m.n_nodes, 3)), ref)
    with pytest.raises(ValueError, match="cf"):
        integrate_coefficients(m, np.zeros(m.n_nodes), np.zeros((m.n_nodes, 2)), ref)
    with pytest.raises(ValueError):
        AeroReference(0.0, 1.0)
    with pytest.raises(ValueError):
        AeroReference(1.0, -1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    m = plate(5, 4)
    ref = AeroReference(0.7, 1.3, (0.3, 0.1, 0.0), aoa=3.0)
    p1, p2 = rng.standard_normal((2, m.n_nodes))
    f1, f2 = rng.standard_normal((2, m.n_nodes, 3))
    c1 = np.array(integrate_coefficients(m, p1, f1, ref).as_tuple())
    c2 = np.array(integrate_coefficients(m, p2, f2, ref).as_tuple())
    c = np.array(integrate_coefficients(m, a * p1 + b * p2, a * f1 + b * f2, ref).as_tuple())
    np.testing.assert_allclose(c, a * c1 + b * c2, atol=1e-12)


def test_weights_match_integration(demo_mesh, rng):
    ref = AeroReference(0.8, 1.2, (0.25, 0.0, 0.0), aoa=2.5)
    cp = rng.standard_normal(demo_mesh.n_nodes)
    cf = rng.standard_normal((demo_mesh.n_nodes, 3))
    c = integrate_coefficients(demo_mesh, cp, cf, ref)
    w = coefficient_weights(demo_mesh, ref)
    F = np.column_stack([cp, cf])
    for key in ("CL", "CD", "CMy"):
        assert (w[key] * F).sum() == pytest.approx(getattr(c, key), abs=1e-12)


def test_frame_invariance(demo_mesh, rng):
    th = 11.0
    t = np.radians(th)
    R = np.array([[np.cos(t), 0, np.sin(t)], [0, 1, 0], [-np.sin(t), 0, np.cos(t)]])
    cp = rng.standard_normal(demo_mesh.n_nodes)
    cf = rng.standard_normal((demo_mesh.n_nodes, 3))
    point = np.array([0.25, 0.0, 0.01])
    ref = AeroReference(0.8, 1.2, tuple(point), aoa=3.0)
    rot = SurfaceMesh(demo_mesh.nodes @ R.T, demo_mesh.cells)
    ref2 = AeroReference(0.8, 1.2, tuple(R @ point), aoa=3.0 - th)
    a = integrate_coefficients(demo_mesh, cp, cf, ref).as_tuple()
    b = integrate_coefficients(rot, cp, cf @ R.T, ref2).as_tuple()
    np.testing.assert_allclose(b, a, atol=1e-10)


def test_sphere_force_convergence():
    # cp = z on the unit sphere: F = -integral(z n dA) = (0, 0, -4 pi / 3)
    errs = []
    hs = []
    for level in (1, 2, 3):
        m = icosphere(level)
        c = integrate_coefficients(m, m.nodes[:, 2], np.zeros((m.n_nodes, 3)), AeroReference(1.0, 1.0))
        errs.append(abs(c.CL + 4 * np.pi / 3))
        hs.append(np.sqrt(m.cell_areas.mean()))
    for i in range(2):
        assert np.log(errs[i] / errs[i + 1]) / np.log(hs[i] / hs[i + 1]) >= 1.0


def test_moment_reference_values():
    nodes = np.array([[0.0, 0, 0], [0.4064, 0, 0], [0.1, 0.5, 0], [0.5, 0.5, 0]])
    p = moment_reference(nodes, 0.30, 0.4064)
    assert p[0] == pytest.approx(0.12192, abs=1e-15)
    np.testing.assert_array_equal(moment_reference(nodes, 0.0, 0.4064), [0, 0, 0])
    assert moment_reference(nodes, 0.25, 0.1412)[0] == pytest.approx(0.0353, abs=1e-15)
    # other span station: leading edge there is x = 0.1
    assert moment_reference(nodes, 0.5, 0.4, span_y=0.5)[0] == pytest.approx(0.3)
    for bad in (-0.1, 1.2):
        with pytest.raises(ValueError):
            moment_reference(nodes, bad, 0.4)
