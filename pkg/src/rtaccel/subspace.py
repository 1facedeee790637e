"""Diffusion-flavored correction subspaces for residual minimization.

The even scattering matrix pencil (theta_plus, m_plus) is diagonalized once
per angular mesh; the leading eigenvectors span the angular directions in
which source iteration is slowest.  Tensorizing them with the full spatial
spaces gives a small correction space on which the transport bilinear form
is assembled and factorized once per run.  Optional odd-parity enrichments
(a transport sweep and a scattering-implicit solve for the odd block) feed
additional candidate directions to the minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import BlockVector, TransportSystem, _omega_row

__all__ = [
    "EigenBasis",
    "eigen_theta",
    "CorrectionSolver",
    "galerkin_correction",
    "enrich_odd_sweep",
    "enrich_odd_scatter",
    "InnerScatterError",
    "SubspaceBasis",
    "Column",
    "build_space",
]


@dataclass
class EigenBasis:
    """Leading generalized eigenpairs of (theta_plus, m_plus).

    ``even`` columns are m_plus-orthonormal; ``odd[:, k*s_dim + i]`` carries
    the odd-space projection of s_i times the k-th even eigenvector.
    """

    gammas: np.ndarray   # (K,) eigenvalues, non-increasing
    even: np.ndarray     # (n_pairs, K)
    odd: np.ndarray      # (n_odd, K * s_dim)
    s_dim: int

    @property
    def K(self) -> int:
        return len(self.gammas)


def eigen_theta(ang, K: int) -> EigenBasis:
    """Top-K generalized eigenpairs of the even scattering pencil.

    The diagonal even mass makes this a similarity transform of a dense
    symmetric matrix.  Eigenvector sign is fixed by making the first
    component of visible magnitude positive.
    """
    P = ang.n_pairs
    if not 1 <= K <= P:
        raise ValueError(f"K must be in 1..{P}, got {K}")
    d = np.sqrt(ang.m_plus)
    sym = ang.theta_plus / d[:, None] / d[None, :]
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1][:K]
    gammas = vals[order]
    H = vecs[:, order] / d[:, None]
    for k in range(K):
        col = H[:, k]
        lead = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if col[lead] < 0:
            H[:, k] = -col

    s_dim = ang.s_dim
    dl = ang.dl
    odd = np.zeros((ang.n_odd, K * s_dim))
    # (M^-)^{-1} A_i H, exploiting that A_i is block diagonal over pairs
    for i in range(s_dim):
        w = np.einsum("pab,pb->pa", ang.m_minus_inv, ang.a_pair[i])  # (P, dl)
        for k in range(K):
            odd[:, k * s_dim + i] = (w * H[:, k][:, None]).ravel()
    return EigenBasis(gammas=gammas, even=H, odd=odd, s_dim=s_dim)


class CorrectionSolver:
    """Galerkin solver for the transport-minus-scattering form on the
    tensor space spanned by an angular eigenbasis.

    The reduced matrix has Kronecker blocks (small angular Gram) x (sparse
    spatial factor); it is assembled and LU-factorized once and reused every
    iteration.  Odd basis columns whose angular part vanishes are dropped
    (they would make the reduced matrix singular without enlarging the
    space).
    """

    def __init__(self, system: TransportSystem, basis: EigenBasis):
        self.system = system
        self.basis = basis
        ang, spat = system.matrices.angular, system.matrices.spatial
        H = basis.even
        K = basis.K

        # Drop odd angular columns with (numerically) zero mass norm.
        Hm_all = basis.odd
        X3 = Hm_all.reshape(ang.n_pairs, ang.dl, -1)
        mass_sq = np.einsum("paj,pab,pbj->j", X3, ang.m_minus, X3)
        keep = mass_sq > 1e-24 * max(mass_sq.max(), 1e-300)
        self.odd_keep = np.flatnonzero(keep)
        Hm = Hm_all[:, self.odd_keep]
        self.Hm = Hm
        Kd = Hm.shape[1]

        def mm_apply(Y):
            Y3 = Y.reshape(ang.n_pairs, ang.dl, -1)
            return np.einsum("pab,pbj->paj", ang.m_minus, Y3).reshape(Y.shape)

        g_theta_p = H.T @ ang.theta_plus @ H
        g_m_minus = Hm.T @ mm_apply(Hm)
        g_theta_m = Hm.T @ (ang.theta_minus @ Hm)
        alphas = [np.asarray(Hm.T @ (ang.a_sparse(n) @ H)) for n in range(2)]

        ee = sp.kron(sp.identity(K), spat.m_sigt_plus) \
            - sp.kron(g_theta_p, spat.m_sigs_plus)
        for n in range(len(spat.normals)):
            row = _omega_row(ang, spat.normals[n])
            w_b = H.T @ (ang.omega[row][:, None] * H)
            ee = ee + sp.kron(w_b, spat.boundary_mass[n])
        oe = None
        for n in range(2):
            term = sp.kron(alphas[n], spat.d_mats[n].T)
            oe = term if oe is None else oe + term
        oo = sp.kron(g_m_minus, sp.diags(spat.m_sigt_minus)) \
            - sp.kron(g_theta_m, sp.diags(spat.m_sigs_minus))
        reduced = sp.bmat([[ee, -oe.T], [oe, oo]], format="csc")
        self.n_even_red = K * spat.n_even
        self.n_odd_red = Kd * spat.n_odd
        self.size = reduced.shape[0]
        self.reduced = reduced
        try:
            self.factor = spla.splu(reduced)
        except RuntimeError as exc:
            raise ValueError("reduced correction system is singular; the "
                             "eigenbasis does not yield a well-posed "
                             "correction space") from exc

    def prolong(self, coords: np.ndarray) -> BlockVector:
        """Map reduced coordinates to a full block vector."""
        sys_ = self.system
        Cp = coords[:self.n_even_red].reshape(self.basis.K, sys_.n_vertices)
        Cm = coords[self.n_even_red:].reshape(-1, sys_.n_elements)
        even = self.basis.even @ Cp
        odd = self.Hm @ Cm
        return BlockVector(even.ravel(), odd.ravel())

    def restrict(self, x: BlockVector) -> np.ndarray:
        """Plain transpose of :meth:`prolong`."""
        sys_ = self.system
        rp = self.basis.even.T @ sys_.even_mat(x)
        rm = self.Hm.T @ sys_.odd_mat(x)
        return np.concatenate([rp.ravel(), rm.ravel()])

    def scatter_rhs(self, r: BlockVector) -> np.ndarray:
        """Reduced right-hand side: restriction of S r."""
        sys_ = self.system
        ang, spat = sys_.matrices.angular, sys_.matrices.spatial
        E = ang.theta_plus @ self.basis.even          # (P, K)
        rhs_p = (E.T @ sys_.even_mat(r)) @ spat.m_sigs_plus
        F = ang.theta_minus @ self.Hm                 # (L, Kd)
        rhs_m = (F.T @ sys_.odd_mat(r)) * spat.m_sigs_minus[None, :]
        return np.concatenate([rhs_p.ravel(), rhs_m.ravel()])

    def solve(self, r: BlockVector) -> BlockVector:
        coords = self.factor.solve(self.scatter_rhs(r))
        if not np.all(np.isfinite(coords)):
            raise ValueError("reduced correction solve produced non-finite "
                             "values (singular reduced system?)")
        return self.prolong(coords)


def galerkin_correction(corr: CorrectionSolver, r_k: BlockVector) -> BlockVector:
    """Correction u_c with (t - s)(u_c, v) = s(r_k, v) on the reduced space."""
    return corr.solve(r_k)


def enrich_odd_sweep(system: TransportSystem, u_half: BlockVector,
                     u_c: BlockVector) -> BlockVector:
    """Odd-only update from one explicit odd transport sweep.

    Recomputes the odd block consistently with the corrected even part by
    inverting the odd mass only (scattering treated explicitly).
    """
    ang, spat = system.matrices.angular, system.matrices.spatial
    s_odd = ang.theta_minus @ (system.odd_mat(u_half) * spat.m_sigs_minus[None, :])
    a_even = system._apply_A(system.even_mat(u_half) + system.even_mat(u_c))
    target = s_odd + system.odd_mat(system.load) - a_even
    new_odd = system._apply_M_minus_inv(target)
    return BlockVector(np.zeros_like(u_half.even),
                       new_odd.ravel() - u_half.odd)


class InnerScatterError(RuntimeError):
    """The odd scattering-implicit solve failed to converge."""


def enrich_odd_scatter(system: TransportSystem, u_half: BlockVector,
                       u_c: BlockVector,
                       rtol: float | None = None) -> BlockVector:
    """Odd-only update with scattering treated implicitly.

    Solves (M^- - S^-) x = load^- - A (u^+ + u_c^+) by CG preconditioned
    with the odd mass; reduces to the sweep when sigma_s vanishes.
    """
    if rtol is None:
        rtol = system.inner_tol
    ang, spat = system.matrices.angular, system.matrices.spatial
    a_even = system._apply_A(system.even_mat(u_half) + system.even_mat(u_c))
    rhs = (system.odd_mat(system.load) - a_even).ravel()

    def mminv(v):
        return system._apply_M_minus_inv(v.reshape(system.shape_odd)).ravel()

    if np.max(spat.m_sigs_minus) == 0.0:
        x = mminv(rhs)
        return BlockVector(np.zeros_like(u_half.even), x - u_half.odd)

    def op(v):
        V = v.reshape(system.shape_odd)
        sv = ang.theta_minus @ (V * spat.m_sigs_minus[None, :])
        return (system._apply_M_minus(V) - sv).ravel()

    n = rhs.size
    A = spla.LinearOperator((n, n), matvec=op)
    M = spla.LinearOperator((n, n), matvec=mminv)
    x0 = mminv(rhs)
    x, info = spla.cg(A, rhs, x0=x0, M=M, rtol=rtol, atol=0.0,
                      maxiter=2000)
    if info != 0:
        raise InnerScatterError(f"odd scattering solve did not converge "
                                f"(info={info})")
    return BlockVector(np.zeros_like(u_half.even), x - u_half.odd)


@dataclass
class Column:
    """One candidate direction handed to the minimizer.

    ``r0_image`` caches the linearized residual image when it is already
    known (history iterates), avoiding a fresh transport solve.
    """

    vector: BlockVector
    provenance: str
    r0_image: BlockVector | None = None


@dataclass
class SubspaceBasis:
    columns: list

    @property
    def n(self) -> int:
        return len(self.columns)


_SPACES = ("none", "wc", "tw1", "tw1m")


def build_space(space: str, *, u_c: BlockVector | None = None,
                odd_sweep: BlockVector | None = None,
                odd_scatter: BlockVector | None = None,
                history: list | None = None) -> SubspaceBasis:
    """Assemble the minimization basis for one outer step.

    ``space`` selects the configuration: "none" (plain source iteration),
    "wc" (the Galerkin correction alone), "tw1" (correction split by parity
    plus the two odd enrichments), "tw1m" ("tw1" plus history columns, which
    must come with precomputed residual images).  Zero columns and exact
    duplicates are dropped.
    """
    if space not in _SPACES:
        raise ValueError(f"unknown subspace configuration {space!r}")
    cols: list[Column] = []
    if space == "none":
        return SubspaceBasis(cols)
    if u_c is None:
        raise ValueError(f"configuration {space!r} requires a correction")
    if space == "wc":
        cols.append(Column(u_c, "galerkin-correction"))
    else:
        cols.append(Column(BlockVector(u_c.even, np.zeros_like(u_c.odd)),
                           "galerkin-correction"))
        cols.append(Column(BlockVector(np.zeros_like(u_c.even), u_c.odd),
                           "galerkin-correction"))
        if odd_sweep is None or odd_scatter is None:
            raise ValueError("tw1 configurations require both odd enrichments")
        cols.append(Column(odd_sweep, "odd-sweep"))
        cols.append(Column(odd_scatter, "odd-scatter"))
        if space == "tw1m":
            for col in (history or []):
                cols.append(col)

    kept: list[Column] = []
    for col in cols:
        v = col.vector
        if not (np.any(v.even) or np.any(v.odd)):
            continue
        dup = any(np.array_equal(v.even, k.vector.even)
                  and np.array_equal(v.odd, k.vector.odd) for k in kept)
        if dup:
            continue
        kept.append(col)
    return SubspaceBasis(kept)
