import numpy as np
import pytest

from rtaccel.assembly import OpticalField, SourceSpec
from rtaccel.geometry import (build_circle_mesh, build_octahedral_sphere_mesh,
                              build_rect_mesh)
from rtaccel.operators import BlockVector, build_system
from rtaccel.solver import dense_oracle


def tiny_system(kind="circle", seed=7, sigma_s_scale=1.0):
    rng = np.random.default_rng(seed)
    smesh = build_rect_mesh(3, 3, 1.0, 1.0)
    amesh = build_circle_mesh(3) if kind == "circle" \
        else build_octahedral_sphere_mesh(0)
    nt = smesh.triangles.shape[0]
    optics = OpticalField(sigma_s=sigma_s_scale * (0.5 + rng.random(nt)),
                          sigma_a=0.2 + rng.random(nt))
    return build_system(smesh, amesh, optics, 0.4,
                        source=SourceSpec(interior=1.0, boundary=0.5))


@pytest.mark.parametrize("kind", ["circle", "sphere"])
def test_operators_match_materialized(kind):
    system = tiny_system(kind)
    T, S, M = system.materialize()
    rng = np.random.default_rng(1)
    for _ in range(3):
        x = system.random(rng)
        xf = system.to_flat(x)
        for op, mat in [(system.apply_T, T), (system.apply_S, S),
                        (system.apply_M, M)]:
            got = system.to_flat(op(x))
            want = mat @ xf
            assert np.abs(got - want).max() < 1e-12 * np.abs(want).max()


@pytest.mark.parametrize("kind", ["circle", "sphere"])
def test_transport_solve_matches_direct(kind):
    import scipy.sparse.linalg as spla
    system = tiny_system(kind)
    T, _, _ = system.materialize()
    rng = np.random.default_rng(2)
    b = system.random(rng)
    x = system.solve_transport(b)
    want = spla.spsolve(T.tocsc(), system.to_flat(b))
    assert np.abs(system.to_flat(x) - want).max() < 1e-9 * np.abs(want).max()
    assert system.solve_count == 1


def test_energy_inequality():
    # x^T T x >= x^T M x is what makes the weighted norm the right one
    system = tiny_system()
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = system.random(rng)
        tx = system.to_flat(x) @ system.to_flat(system.apply_T(x))
        mx = system.to_flat(x) @ system.to_flat(system.apply_M(x))
        assert tx >= mx * (1 - 1e-12)


def test_contraction_of_half_step():
    system = tiny_system()
    rho = system.rho
    rng = np.random.default_rng(4)
    for _ in range(5):
        u = system.random(rng)
        r_u = system.residual_precond(u)
        u_next = system.half_step(u)
        r_next = system.residual_precond(u_next)
        assert system.weighted_norm(r_next) <= \
            rho * system.weighted_norm(r_u) * (1 + 1e-9)


def test_residual_identity():
    system = tiny_system()
    rng = np.random.default_rng(5)
    u = system.random(rng)
    lhs = system.residual_precond(u)
    rhs = system.half_step(u) - u
    scale = system.weighted_norm(rhs)
    assert system.weighted_norm(lhs - rhs) < 1e-10 * max(scale, 1.0)


def test_half_step_fixed_point():
    system = tiny_system()
    u_h = dense_oracle(system)
    dev = system.weighted_norm(system.half_step(u_h) - u_h)
    assert dev < 1e-9 * system.weighted_norm(u_h)


def test_pure_absorber_one_sweep():
    # without scattering the half step solves the problem from any start
    system = tiny_system(sigma_s_scale=0.0)
    exact = dense_oracle(system)
    rng = np.random.default_rng(6)
    u = system.half_step(system.random(rng))
    assert system.weighted_norm(u - exact) < 1e-10 * system.weighted_norm(exact)


def test_weighted_norm_indicator():
    system = tiny_system()
    ang = system.matrices.angular
    spat = system.matrices.spatial
    v = system.zeros()
    v.even[0] = 1.0
    want = np.sqrt(ang.m_plus[0] * spat.m_sigt_plus[0, 0])
    assert abs(system.weighted_norm(v) - want) < 1e-14


def test_block_vector_arithmetic_and_flat_roundtrip():
    system = tiny_system()
    rng = np.random.default_rng(8)
    a, b = system.random(rng), system.random(rng)
    c = a + 2.0 * b - b
    assert np.allclose(c.even, a.even + b.even)
    back = system.from_flat(system.to_flat(a))
    assert np.array_equal(back.even, a.even)
    assert np.array_equal(back.odd, a.odd)


def test_size_mismatch_rejected():
    system = tiny_system()
    bad = BlockVector(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        system.apply_T(bad)
