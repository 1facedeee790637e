import numpy as np
import pytest

from rtaccel.geometry import (build_circle_mesh, build_octahedral_sphere_mesh,
                              build_rect_mesh, dump_mesh, duffy_rule, gauss01,
                              load_mesh, sphere_patch_quadrature,
                              triangle_rule_d6)


def test_gauss01_degree_exactness():
    for n in (2, 4, 6):
        x, w = gauss01(n)
        assert abs(w.sum() - 1.0) < 1e-14
        for p in range(2 * n):
            exact = 1.0 / (p + 1)
            assert abs(w @ x ** p - exact) < 1e-13


@pytest.mark.parametrize("rule", [duffy_rule(8), triangle_rule_d6()])
def test_triangle_rules_integrate_monomials(rule):
    xi, w = rule
    assert abs(w.sum() - 0.5) < 1e-13
    # exact value of x^a y^b over the unit triangle is a! b! / (a+b+2)!
    import math
    for a in range(4):
        for b in range(4 - a):
            exact = math.factorial(a) * math.factorial(b) \
                / math.factorial(a + b + 2)
            val = w @ (xi[:, 0] ** a * xi[:, 1] ** b)
            assert abs(val - exact) < 1e-12


def test_rect_mesh_counts_and_areas():
    mesh = build_rect_mesh(28, 28, 7.0, 7.0)
    assert mesh.vertices.shape == (841, 2)
    assert mesh.triangles.shape == (1568, 3)
    assert abs(mesh.areas.sum() - 49.0) < 1e-12
    assert np.all(mesh.areas > 0)
    assert len(mesh.boundary_edges) == 4 * 28
    mesh.validate()


def test_rect_mesh_rejects_bad_counts():
    with pytest.raises(ValueError):
        build_rect_mesh(0, 4, 1.0, 1.0)


def test_circle_mesh_basic():
    mesh = build_circle_mesh(2)
    assert mesh.n_elements == 4
    assert np.array_equal(mesh.pairing, [2, 3, 0, 1])
    assert abs(mesh.measures.sum() - 2 * np.pi) < 1e-13
    mesh.validate()


@pytest.mark.parametrize("level", [0, 1, 2])
def test_sphere_mesh_measures(level):
    mesh = build_octahedral_sphere_mesh(level)
    assert mesh.n_elements == 8 * 4 ** level
    assert abs(mesh.measures.sum() - 4 * np.pi) < 1e-11
    # antipodal pairing: fixed-point free involution with equal measures
    p = mesh.pairing
    assert np.all(p[p] == np.arange(len(p)))
    assert np.all(p != np.arange(len(p)))
    assert np.allclose(mesh.measures[p], mesh.measures, rtol=1e-12)
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0)
    mesh.validate()


def test_sphere_elements_stay_in_octants():
    # element quadrature nodes never cross a coordinate plane, which the
    # boundary integrals of |s.n| rely on
    mesh = build_octahedral_sphere_mesh(2)
    for e in range(mesh.n_elements):
        pts = mesh.quad_points[mesh.quad_elem == e]
        for d in range(3):
            col = pts[:, d]
            straddles = col.min() < -1e-9 and col.max() > 1e-9
            assert not straddles


def test_sphere_patch_quadrature_octant():
    mesh = build_octahedral_sphere_mesh(0)
    verts = mesh.vertices[mesh.elements[0]]
    xi, w = duffy_rule(20)
    pts, pw = sphere_patch_quadrature(verts, xi, w)
    assert abs(pw.sum() - 4 * np.pi / 8) < 1e-12
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    # int_octant |x| ds = pi/4, so |x|+|y|+|z| integrates to 3 pi/4 on any
    # octant regardless of its sign pattern
    val = pw @ np.abs(pts).sum(axis=1)
    assert abs(val - 3 * np.pi / 4) < 1e-10


def test_dump_load_roundtrip_spatial():
    mesh = build_rect_mesh(5, 3, 2.0, 1.0)
    text = dump_mesh(mesh)
    back = load_mesh(text)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert back.grid == mesh.grid


@pytest.mark.parametrize("mesh", [build_circle_mesh(4),
                                  build_octahedral_sphere_mesh(1)])
def test_dump_load_roundtrip_angular(mesh):
    back = load_mesh(dump_mesh(mesh))
    assert back.kind == mesh.kind
    assert np.array_equal(back.pairing, mesh.pairing)
    assert np.allclose(back.measures, mesh.measures, rtol=0, atol=1e-15)
    assert np.allclose(back.quad_points, mesh.quad_points, rtol=0, atol=1e-15)
    assert np.allclose(back.quad_weights, mesh.quad_weights, rtol=0, atol=1e-15)


def test_load_mesh_rejects_garbage():
    with pytest.raises(ValueError):
        load_mesh("not a mesh\n1 2 3\n")
    with pytest.raises(ValueError):
        load_mesh("rtaccel-mesh 99 spatial\n")
