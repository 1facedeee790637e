import numpy as np
import pytest

from rtaccel.assembly import OpticalField, SourceSpec, assemble_angular
from rtaccel.geometry import build_circle_mesh, build_rect_mesh
from rtaccel.operators import BlockVector, build_system
from rtaccel.subspace import (Column, CorrectionSolver, SubspaceBasis,
                              build_space, eigen_theta, enrich_odd_scatter,
                              enrich_odd_sweep, galerkin_correction)


def scattering_system(sigma_s_scale=1.0, seed=3):
    rng = np.random.default_rng(seed)
    smesh = build_rect_mesh(4, 4, 1.0, 1.0)
    amesh = build_circle_mesh(3)
    nt = smesh.triangles.shape[0]
    optics = OpticalField(sigma_s=sigma_s_scale * (0.5 + rng.random(nt)),
                          sigma_a=0.1 + 0.2 * rng.random(nt))
    return build_system(smesh, amesh, optics, 0.3,
                        source=SourceSpec(interior=1.0))


def test_eigen_theta_circle_poisson_modes():
    # Fourier analysis of the circle kernel gives eigenvalues g^|l|; the
    # even modes at g = 0.5 converge to 1, 1/4, 1/4, 1/16
    ang = assemble_angular(build_circle_mesh(64), 0.5)
    basis = eigen_theta(ang, 4)
    target = np.array([1.0, 0.25, 0.25, 0.0625])
    assert np.all(np.abs(basis.gammas - target) < 0.01 * target)
    assert np.all(np.diff(basis.gammas) <= 1e-12)
    ortho = basis.even.T @ (ang.m_plus[:, None] * basis.even)
    assert np.abs(ortho - np.eye(4)).max() < 1e-12
    assert basis.odd.shape == (ang.n_odd, 4 * 2)


def test_eigen_theta_deterministic_and_validated():
    ang = assemble_angular(build_circle_mesh(8), 0.4)
    b1 = eigen_theta(ang, 3)
    b2 = eigen_theta(ang, 3)
    assert np.array_equal(b1.even, b2.even)
    assert np.array_equal(b1.odd, b2.odd)
    with pytest.raises(ValueError):
        eigen_theta(ang, 0)
    with pytest.raises(ValueError):
        eigen_theta(ang, 9)


def test_correction_solver_galerkin_consistency():
    system = scattering_system()
    basis = eigen_theta(system.matrices.angular, 2)
    corr = CorrectionSolver(system, basis)
    rng = np.random.default_rng(11)
    c = rng.standard_normal(corr.size)
    full = corr.prolong(c)
    lhs = corr.restrict(system.apply_T(full) - system.apply_S(full))
    rhs = corr.reduced @ c
    assert np.abs(lhs - rhs).max() < 1e-11 * np.abs(rhs).max()
    # right-hand side route agrees with restricting the scattering action
    r = system.random(rng)
    assert np.abs(corr.scatter_rhs(r)
                  - corr.restrict(system.apply_S(r))).max() < 1e-12


def test_correction_reduces_residual_energy():
    # u_c is the energy-projection of the error onto the reduced space, so
    # applying it after a half step must not increase the residual norm
    system = scattering_system()
    corr = CorrectionSolver(system, eigen_theta(system.matrices.angular, 3))
    u_half = system.half_step(system.zeros())
    u_c = galerkin_correction(corr, u_half)
    assert system.weighted_norm(u_c) > 0
    r_before = system.weighted_norm(system.residual_precond(u_half))
    r_after = system.weighted_norm(system.residual_precond(u_half + u_c))
    assert r_after <= r_before * (1 + 1e-9)


def test_enrichments_solve_their_odd_blocks():
    system = scattering_system()
    ang, spat = system.matrices.angular, system.matrices.spatial
    corr = CorrectionSolver(system, eigen_theta(ang, 2))
    u_half = system.half_step(system.zeros())
    u_c = galerkin_correction(corr, u_half)

    u1 = enrich_odd_sweep(system, u_half, u_c)
    assert np.abs(u1.even).max() == 0.0
    new_odd = system.odd_mat(u_half) + system.odd_mat(u1)
    lhs = system._apply_M_minus(new_odd)
    rhs = ang.theta_minus @ (system.odd_mat(u_half) * spat.m_sigs_minus) \
        + system.odd_mat(system.load) \
        - system._apply_A(system.even_mat(u_half) + system.even_mat(u_c))
    assert np.abs(lhs - rhs).max() < 1e-12 * max(np.abs(rhs).max(), 1.0)

    u2 = enrich_odd_scatter(system, u_half, u_c)
    assert np.abs(u2.even).max() == 0.0
    x = system.odd_mat(u_half) + system.odd_mat(u2)
    lhs2 = system._apply_M_minus(x) - ang.theta_minus @ (x * spat.m_sigs_minus)
    rhs2 = system.odd_mat(system.load) \
        - system._apply_A(system.even_mat(u_half) + system.even_mat(u_c))
    scale = max(np.abs(rhs2).max(), 1.0)
    assert np.abs(lhs2 - rhs2).max() < 1e-8 * scale


def test_pure_absorber_shortcuts():
    system = scattering_system(sigma_s_scale=0.0)
    corr = CorrectionSolver(system, eigen_theta(system.matrices.angular, 2))
    u_half = system.half_step(system.zeros())
    u_c = galerkin_correction(corr, u_half)
    # no scattering: the correction right-hand side vanishes identically
    assert system.weighted_norm(u_c) == 0.0
    u1 = enrich_odd_sweep(system, u_half, u_c)
    u2 = enrich_odd_scatter(system, u_half, u_c)
    assert np.array_equal(u1.odd, u2.odd)


def test_build_space_configurations():
    system = scattering_system()
    corr = CorrectionSolver(system, eigen_theta(system.matrices.angular, 2))
    u_half = system.half_step(system.zeros())
    u_c = galerkin_correction(corr, u_half)
    u1 = enrich_odd_sweep(system, u_half, u_c)
    u2 = enrich_odd_scatter(system, u_half, u_c)

    assert build_space("none").n == 0
    assert build_space("wc", u_c=u_c).n == 1
    b = build_space("tw1", u_c=u_c, odd_sweep=u1, odd_scatter=u2)
    assert b.n == 4
    assert [c.provenance for c in b.columns] == \
        ["galerkin-correction", "galerkin-correction", "odd-sweep",
         "odd-scatter"]
    # history columns ride along for tw1m; zero iterates are dropped
    hist = [Column(system.zeros(), "history", r0_image=system.zeros()),
            Column(u_half.copy(), "history", r0_image=system.zeros())]
    bm = build_space("tw1m", u_c=u_c, odd_sweep=u1, odd_scatter=u2,
                     history=hist)
    assert bm.n == 5
    # exact duplicates are dropped
    dup = build_space("tw1m", u_c=u_c, odd_sweep=u1, odd_scatter=u2,
                      history=[Column(u1.copy(), "history",
                                      r0_image=system.zeros())])
    assert dup.n == 4

    with pytest.raises(ValueError):
        build_space("fancy")
    with pytest.raises(ValueError):
        build_space("wc")
    with pytest.raises(ValueError):
        build_space("tw1", u_c=u_c)
