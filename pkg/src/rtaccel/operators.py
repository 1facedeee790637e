"""Matrix-free operator applications and the inner transport solver.

The full system couples an even unknown (pairs x P1 vertices) and an odd
unknown (odd angular dofs x elements).  All operators act on
:class:`BlockVector` without materializing Kronecker products; the inner
solve eliminates the odd unknown and factorizes one sparse SPD Schur block
per antipodal direction pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (OpticalField, SourceSpec, SystemMatrices,
                       assemble_load, assemble_system)
from .geometry import AngularMesh, SpatialMesh

__all__ = [
    "BlockVector",
    "TransportSystem",
    "TransportSolver",
    "InnerSolveError",
    "build_system",
]


class InnerSolveError(RuntimeError):
    """Raised when an inner transport solve misses its residual target."""


@dataclass
class BlockVector:
    """Coefficient vector split into even and odd parity blocks."""

    even: np.ndarray
    odd: np.ndarray

    def copy(self) -> "BlockVector":
        return BlockVector(self.even.copy(), self.odd.copy())

    def __add__(self, other: "BlockVector") -> "BlockVector":
        return BlockVector(self.even + other.even, self.odd + other.odd)

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        return BlockVector(self.even - other.even, self.odd - other.odd)

    def __mul__(self, a: float) -> "BlockVector":
        return BlockVector(a * self.even, a * self.odd)

    __rmul__ = __mul__

    def __neg__(self) -> "BlockVector":
        return BlockVector(-self.even, -self.odd)

    def dot(self, other: "BlockVector") -> float:
        return float(self.even @ other.even + self.odd @ other.odd)

    @property
    def size(self) -> int:
        return self.even.size + self.odd.size


class TransportSystem:
    """Assembled discrete problem bound to its meshes and optical data.

    Provides the operator applications (transport ``apply_T``, scattering
    ``apply_S``, weighted mass ``apply_M``), the preconditioned residual map
    and the inner transport solve.  ``solve_count`` tracks the number of
    inner solves for cost assertions.
    """

    def __init__(self, spatial_mesh: SpatialMesh, angular_mesh: AngularMesh,
                 optics: OpticalField, matrices: SystemMatrices,
                 load: BlockVector, inner_tol: float = 1e-10,
                 direct_limit: int = 200_000):
        self.spatial_mesh = spatial_mesh
        self.angular_mesh = angular_mesh
        self.optics = optics
        self.matrices = matrices
        self.load = load
        self.inner_tol = float(inner_tol)
        self.direct_limit = int(direct_limit)
        self.solve_count = 0
        self._solver: TransportSolver | None = None
        ang, spat = matrices.angular, matrices.spatial
        self.n_pairs = ang.n_pairs
        self.n_odd_ang = ang.n_odd
        self.n_vertices = spat.n_even
        self.n_elements = spat.n_odd
        self.shape_even = (self.n_pairs, self.n_vertices)
        self.shape_odd = (self.n_odd_ang, self.n_elements)
        self._check(load)

    # -- bookkeeping -------------------------------------------------------

    def _check(self, x: BlockVector) -> None:
        if x.even.shape != (self.n_pairs * self.n_vertices,) or \
           x.odd.shape != (self.n_odd_ang * self.n_elements,):
            raise ValueError("block vector is not bound to this system "
                             f"(expected sizes {self.n_pairs * self.n_vertices}"
                             f"/{self.n_odd_ang * self.n_elements})")

    def zeros(self) -> BlockVector:
        return BlockVector(np.zeros(self.n_pairs * self.n_vertices),
                           np.zeros(self.n_odd_ang * self.n_elements))

    def random(self, rng: np.random.Generator, scale: float = 1.0) -> BlockVector:
        return BlockVector(scale * rng.standard_normal(self.n_pairs * self.n_vertices),
                           scale * rng.standard_normal(self.n_odd_ang * self.n_elements))

    @property
    def rho(self) -> float:
        return self.optics.rho

    def even_mat(self, x: BlockVector) -> np.ndarray:
        return x.even.reshape(self.shape_even)

    def odd_mat(self, x: BlockVector) -> np.ndarray:
        return x.odd.reshape(self.shape_odd)

    # -- operator applications ---------------------------------------------

    def _apply_A(self, Xp: np.ndarray) -> np.ndarray:
        """(advection coupling) even matrix (P, nv) -> odd matrix (L, nt)."""
        ang, spat = self.matrices.angular, self.matrices.spatial
        out = np.zeros(self.shape_odd)
        for n in range(2):
            out += ang.a_sparse(n) @ (Xp @ spat.d_mats[n])
        return out

    def _apply_At(self, Xm: np.ndarray) -> np.ndarray:
        """Transpose coupling: odd matrix (L, nt) -> even matrix (P, nv)."""
        ang, spat = self.matrices.angular, self.matrices.spatial
        out = np.zeros(self.shape_even)
        for n in range(2):
            out += ang.a_sparse(n).T @ (Xm @ spat.d_mats[n].T)
        return out

    def _apply_M_minus(self, Xm: np.ndarray) -> np.ndarray:
        ang, spat = self.matrices.angular, self.matrices.spatial
        X3 = Xm.reshape(self.n_pairs, ang.dl, self.n_elements)
        Y3 = np.einsum("pab,pbt->pat", ang.m_minus, X3)
        return (Y3 * spat.m_sigt_minus[None, None, :]).reshape(self.shape_odd)

    def _apply_M_minus_inv(self, Xm: np.ndarray) -> np.ndarray:
        ang, spat = self.matrices.angular, self.matrices.spatial
        X3 = (Xm / spat.m_sigt_minus[None, :]).reshape(
            self.n_pairs, ang.dl, self.n_elements)
        Y3 = np.einsum("pab,pbt->pat", ang.m_minus_inv, X3)
        return Y3.reshape(self.shape_odd)

    def apply_T(self, x: BlockVector) -> BlockVector:
        """Transport bilinear form: advection + total mass + outflow."""
        self._check(x)
        ang, spat = self.matrices.angular, self.matrices.spatial
        Xp, Xm = self.even_mat(x), self.odd_mat(x)
        even = ang.m_plus[:, None] * (Xp @ spat.m_sigt_plus)
        for n in range(len(spat.normals)):
            row = _omega_row(ang, spat.normals[n])
            even += ang.omega[row][:, None] * (Xp @ spat.boundary_mass[n])
        even -= self._apply_At(Xm)
        odd = self._apply_A(Xp) + self._apply_M_minus(Xm)
        return BlockVector(even.ravel(), odd.ravel())

    def apply_S(self, x: BlockVector) -> BlockVector:
        """Scattering operator (never materialized as a Kronecker product)."""
        self._check(x)
        ang, spat = self.matrices.angular, self.matrices.spatial
        Xp, Xm = self.even_mat(x), self.odd_mat(x)
        even = ang.theta_plus @ (Xp @ spat.m_sigs_plus)
        odd = ang.theta_minus @ (Xm * spat.m_sigs_minus[None, :])
        return BlockVector(even.ravel(), odd.ravel())

    def apply_M(self, x: BlockVector) -> BlockVector:
        """sigma_t-weighted mass (the iteration's energy norm)."""
        self._check(x)
        ang, spat = self.matrices.angular, self.matrices.spatial
        Xp, Xm = self.even_mat(x), self.odd_mat(x)
        even = ang.m_plus[:, None] * (Xp @ spat.m_sigt_plus)
        return BlockVector(even.ravel(), self._apply_M_minus(Xm).ravel())

    def m_dot(self, x: BlockVector, y: BlockVector) -> float:
        return x.dot(self.apply_M(y))

    def weighted_norm(self, x: BlockVector) -> float:
        """Norm induced by the sigma_t-weighted mass matrix."""
        val = self.m_dot(x, x)
        if np.isnan(val):
            raise ValueError("weighted norm is NaN; vector contains invalid data")
        return float(np.sqrt(max(val, 0.0)))

    # -- transport solve and residual maps ----------------------------------

    @property
    def solver(self) -> "TransportSolver":
        if self._solver is None:
            self._solver = TransportSolver(self)
        return self._solver

    def solve_transport(self, b: BlockVector) -> BlockVector:
        """Solve T x = b by odd elimination; verifies the residual."""
        self._check(b)
        x = self.solver.solve(b)
        self.solve_count += 1
        return x

    def half_step(self, u: BlockVector) -> BlockVector:
        """One transport sweep: solve T u' = S u + load."""
        return self.solve_transport(self.apply_S(u) + self.load)

    def residual_precond(self, u: BlockVector) -> BlockVector:
        """Preconditioned residual R(u) = T^{-1} (load - (T - S) u)."""
        rhs = self.load - self.apply_T(u) + self.apply_S(u)
        return self.solve_transport(rhs)

    def apply_R0(self, w: BlockVector) -> BlockVector:
        """Linear part of the residual map: R(w) - R(0) = -T^{-1}(T - S) w."""
        return self.solve_transport(self.apply_S(w) - self.apply_T(w))

    # -- dense materialization (tiny instances; used by oracles/tests) -------

    def materialize(self, limit: int = 5000):
        """Sparse T, S, M as explicit matrices on concat(even, odd) layout."""
        if self.load.size > limit:
            raise ValueError(f"refusing to materialize {self.load.size} dofs "
                             f"(limit {limit})")
        ang, spat = self.matrices.angular, self.matrices.spatial
        m_plus_d = sp.diags(ang.m_plus)
        M_plus = sp.kron(m_plus_d, spat.m_sigt_plus)
        B = None
        for n in range(len(spat.normals)):
            row = _omega_row(ang, spat.normals[n])
            term = sp.kron(sp.diags(ang.omega[row]), spat.boundary_mass[n])
            B = term if B is None else B + term
        A = None
        for n in range(2):
            term = sp.kron(ang.a_sparse(n), spat.d_mats[n].T)
            A = term if A is None else A + term
        m_minus_ang = sp.block_diag([ang.m_minus[p] for p in range(ang.n_pairs)])
        M_minus = sp.kron(m_minus_ang, sp.diags(spat.m_sigt_minus))
        T = sp.bmat([[B + M_plus, -A.T], [A, M_minus]], format="csr")
        S = sp.block_diag([
            sp.kron(sp.csr_matrix(ang.theta_plus), spat.m_sigs_plus),
            sp.kron(sp.csr_matrix(ang.theta_minus), sp.diags(spat.m_sigs_minus)),
        ], format="csr")
        M = sp.block_diag([M_plus, M_minus], format="csr")
        return T, S, M

    def to_flat(self, x: BlockVector) -> np.ndarray:
        return np.concatenate([x.even, x.odd])

    def from_flat(self, v: np.ndarray) -> BlockVector:
        ne = self.n_pairs * self.n_vertices
        return BlockVector(v[:ne].copy(), v[ne:].copy())


def _omega_row(ang, normal: np.ndarray) -> int:
    hit = np.where(np.all(np.abs(ang.normals - normal[None, :]) < 1e-9, axis=1))[0]
    if len(hit) == 0:
        raise ValueError("angular omega table lacks a required boundary normal")
    return int(hit[0])


class TransportSolver:
    """Inner solver for T x = b via elimination of the odd block.

    The even-parity Schur complement decouples into one sparse SPD matrix
    per direction pair; each is factorized once (sparse LU) when the vertex
    count is moderate, otherwise solved by Jacobi-preconditioned CG.
    """

    def __init__(self, system: TransportSystem):
        self.system = system
        ang, spat = system.matrices.angular, system.matrices.spatial
        nv = system.n_vertices
        inv_odd_diag = 1.0 / spat.m_sigt_minus

        # Spatial transfer matrices D_n (M_t^-)^{-1} D_m^T.
        G = [[None, None], [None, None]]
        for n in range(2):
            for m in range(n, 2):
                G[n][m] = (spat.d_mats[n] @ sp.diags(inv_odd_diag)
                           @ spat.d_mats[m].T).tocsr()
        G[1][0] = G[0][1].T.tocsr()

        self.blocks = []
        self.direct = nv <= system.direct_limit
        self.factors = []
        for p in range(ang.n_pairs):
            c = np.einsum("na,ab,mb->nm", ang.a_pair[:2, p], ang.m_minus_inv[p],
                          ang.a_pair[:2, p])
            blk = ang.m_plus[p] * spat.m_sigt_plus
            for n in range(2):
                for m in range(2):
                    blk = blk + c[n, m] * G[n][m]
            for i in range(len(spat.normals)):
                row = _omega_row(ang, spat.normals[i])
                blk = blk + ang.omega[row][p] * spat.boundary_mass[i]
            blk = blk.tocsc()
            self.blocks.append(blk)
            if self.direct:
                self.factors.append(spla.splu(blk))
            else:
                self.factors.append(None)

    def _solve_block(self, p: int, rhs: np.ndarray) -> np.ndarray:
        if self.direct:
            return self.factors[p].solve(rhs)
        blk = self.blocks[p]
        M = spla.LinearOperator(blk.shape, lambda v: v / blk.diagonal())
        x, info = spla.cg(blk, rhs, rtol=self.system.inner_tol * 1e-2,
                          atol=0.0, M=M, maxiter=10_000)
        if info != 0:
            raise InnerSolveError(f"PCG on Schur block {p} stopped with "
                                  f"info={info}")
        return x

    def solve(self, b: BlockVector) -> BlockVector:
        sys_ = self.system
        Bp, Bm = sys_.even_mat(b), sys_.odd_mat(b)
        t1 = sys_._apply_M_minus_inv(Bm)
        rhs = Bp + sys_._apply_At(t1)
        Xp = np.empty_like(rhs)
        for p in range(sys_.n_pairs):
            Xp[p] = self._solve_block(p, rhs[p])
        Xm = sys_._apply_M_minus_inv(Bm - sys_._apply_A(Xp))
        x = BlockVector(Xp.ravel(), Xm.ravel())
        # verified residual
        r = b - sys_.apply_T(x)
        nb = np.sqrt(b.dot(b))
        nr = np.sqrt(r.dot(r))
        if nb > 0 and nr > sys_.inner_tol * nb:
            raise InnerSolveError(
                f"inner solve residual {nr:.3e} exceeds tol*|b| = "
                f"{sys_.inner_tol * nb:.3e}")
        return x


def build_system(spatial_mesh: SpatialMesh, angular_mesh: AngularMesh,
                 optics: OpticalField, g: float,
                 source: SourceSpec | None = None,
                 inner_tol: float = 1e-10,
                 depth_cap: int | None = None,
                 direct_limit: int = 200_000) -> TransportSystem:
    """Assemble matrices and load for a problem and bind them."""
    matrices = assemble_system(spatial_mesh, angular_mesh, optics, g,
                               depth_cap=depth_cap)
    if source is None:
        source = SourceSpec()
    even, odd = assemble_load(spatial_mesh, matrices.angular, source)
    load = BlockVector(even, odd)
    return TransportSystem(spatial_mesh, angular_mesh, optics, matrices, load,
                           inner_tol=inner_tol, direct_limit=direct_limit)
