"""Assembly of the parity-split transport system matrices.

Discretization: even angular part on piecewise constants over antipodal
element pairs, odd angular part on discontinuous piecewise linears (odd
extension of the local linear basis of the representative element of each
pair); even spatial part on continuous P1 hats, odd spatial part on
piecewise constants.

Angular block layout conventions used throughout the package:
  * even angular index = antipodal pair index p (0..n_pairs-1)
  * odd angular index  = p * dl + a with a the local vertex (dl = 3 on the
    sphere, 2 on the circle)
  * tensor dofs are ordered angular-major, spatial-minor, e.g. the even
    coefficient of (pair p, vertex i) sits at p * n_vertices + i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import (AngularMesh, SpatialMesh, gauss01, triangle_rule_d6,
                       sphere_element_frame)

__all__ = [
    "OpticalField",
    "SourceSpec",
    "hg_phase",
    "AngularBlocks",
    "SpatialBlocks",
    "SystemMatrices",
    "assemble_angular",
    "assemble_spatial",
    "assemble_load",
    "assemble_system",
]


# ---------------------------------------------------------------------------
# optical data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpticalField:
    """Piecewise-constant scattering/absorption cross sections.

    ``sigma_a`` must be strictly positive on every element (absorbing
    medium); this is what makes the scattering fraction rho < 1 and the
    source iteration a contraction.
    """

    sigma_s: np.ndarray
    sigma_a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma_s", np.asarray(self.sigma_s, dtype=float))
        object.__setattr__(self, "sigma_a", np.asarray(self.sigma_a, dtype=float))
        if self.sigma_s.shape != self.sigma_a.shape:
            raise ValueError("sigma_s and sigma_a must have matching shapes")
        if np.any(self.sigma_s < 0):
            raise ValueError("sigma_s must be nonnegative")
        if np.any(self.sigma_a <= 0):
            raise ValueError("sigma_a must be strictly positive on every element")

    @property
    def sigma_t(self) -> np.ndarray:
        return self.sigma_s + self.sigma_a

    @property
    def rho(self) -> float:
        """Scattering fraction sup |sigma_s / sigma_t| < 1."""
        return float(np.max(self.sigma_s / self.sigma_t))

    @staticmethod
    def constant(sigma_s: float, sigma_a: float, n_elements: int) -> "OpticalField":
        return OpticalField(np.full(n_elements, float(sigma_s)),
                            np.full(n_elements, float(sigma_a)))


@dataclass(frozen=True)
class SourceSpec:
    """Isotropic sources: interior density per spatial element and inflow
    boundary density per boundary edge (scalars broadcast)."""

    interior: np.ndarray | float = 0.0
    boundary: np.ndarray | float = 0.0


# ---------------------------------------------------------------------------
# scattering phase function
# ---------------------------------------------------------------------------

def hg_phase(g: float, mu, kind: str = "sphere"):
    """Henyey-Greenstein phase function evaluated at cos angles ``mu``.

    Normalized so that the integral over the unit sphere (resp. circle) of
    ``hg_phase(g, s . s')`` in s' equals 1 for every s.
    """
    if not 0.0 <= g < 1.0:
        raise ValueError("anisotropy parameter g must lie in [0, 1)")
    mu = np.asarray(mu, dtype=float)
    if kind == "sphere":
        return (1.0 - g * g) / (4.0 * np.pi) / (1.0 + g * g - 2.0 * g * mu) ** 1.5
    if kind == "circle":
        return (1.0 - g * g) / (2.0 * np.pi) / (1.0 + g * g - 2.0 * g * mu)
    raise ValueError(f"unknown angular domain kind {kind!r}")


# ---------------------------------------------------------------------------
# angular blocks
# ---------------------------------------------------------------------------

@dataclass
class AngularBlocks:
    """Angular factor matrices of the tensor-product system.

    ``theta_plus``/``theta_minus`` are the scattering-operator Galerkin
    matrices on the even/odd angular spaces, ``m_plus`` the (diagonal) even
    mass, ``m_minus`` the pair-block odd mass, ``a_pair[i, p, a]`` the moment
    integrals of s_i against the odd basis (nonzero only within pair p), and
    ``omega[n, p]`` the half-range weights  integral of |s . normal_n| over
    pair p  that produce the boundary term.
    """

    mesh: AngularMesh
    g: float
    dl: int
    theta_plus: np.ndarray      # (P, P)
    theta_minus: np.ndarray     # (L, L)
    m_plus: np.ndarray          # (P,)
    m_minus: np.ndarray         # (P, dl, dl)
    m_minus_inv: np.ndarray     # (P, dl, dl)
    a_pair: np.ndarray          # (s_dim, P, dl)
    normals: np.ndarray         # (nn, 2)
    omega: np.ndarray           # (nn, P)
    normalization_defect: float
    theta_nodes: int
    _a_sparse: list = field(default=None, repr=False)  # type: ignore

    @property
    def n_pairs(self) -> int:
        return len(self.m_plus)

    @property
    def n_odd(self) -> int:
        return self.n_pairs * self.dl

    @property
    def s_dim(self) -> int:
        return self.a_pair.shape[0]

    def a_sparse(self, i: int) -> sp.csr_matrix:
        """Sparse moment matrix of s_i, shape (n_odd, n_pairs)."""
        if self._a_sparse is None:
            self._a_sparse = [None] * self.s_dim
        if self._a_sparse[i] is None:
            P, dl = self.n_pairs, self.dl
            rows = np.arange(P * dl)
            cols = np.repeat(np.arange(P), dl)
            self._a_sparse[i] = sp.csr_matrix(
                (self.a_pair[i].ravel(), (rows, cols)), shape=(P * dl, P))
        return self._a_sparse[i]


def _theta_depth(mesh: AngularMesh, g: float, depth_cap: int | None) -> int:
    """Subdivision depth so kernel-quadrature cells resolve the phase peak."""
    width = max(0.5 * (1.0 - g), 0.03 if mesh.kind == "sphere" else 0.01)
    diam = float(mesh.diameters.max())
    depth = int(np.ceil(np.log2(max(diam / width, 1.0))))
    cap = depth_cap if depth_cap is not None else (3 if mesh.kind == "sphere" else 8)
    return int(np.clip(depth, 0, cap))


def _subdivided_bary(depth: int, dim: int) -> list[np.ndarray]:
    """Corner coordinates of the 4^depth (2^depth) uniform sub-simplices,
    expressed in the parent's barycentric/local coordinates."""
    cells = [np.eye(dim)]
    for _ in range(depth):
        new = []
        for B in cells:
            if dim == 3:
                m01 = 0.5 * (B[0] + B[1])
                m12 = 0.5 * (B[1] + B[2])
                m20 = 0.5 * (B[2] + B[0])
                new += [np.array([B[0], m01, m20]), np.array([m01, B[1], m12]),
                        np.array([m20, m12, B[2]]), np.array([m01, m12, m20])]
            else:
                mid = 0.5 * (B[0] + B[1])
                new += [np.array([B[0], mid]), np.array([mid, B[1]])]
        cells = new
    return cells


def _theta_nodes(mesh: AngularMesh, depth: int):
    """Kernel-quadrature nodes on the representative (half-domain) elements.

    Returns unit points S (N, dim), weights w (N,), pair index per node and
    local linear basis values per node (N, dl).
    """
    reps = mesh.pair_reps
    if mesh.kind == "sphere":
        xi, w_ref = triangle_rule_d6()
        ref_bary = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])
        cells = _subdivided_bary(depth, 3)
        # node barycentrics for the whole subdivided reference element
        bary = np.vstack([ref_bary @ B for B in cells])        # (nsub*12, 3)
        w_pat = np.tile(w_ref, len(cells)) / (4.0 ** depth)    # ref-area weights
        pts = []
        wts = []
        pidx = []
        for p, e in enumerate(reps):
            tv = mesh.vertices[mesh.elements[e]]
            v0, e1, e2, area, h = sphere_element_frame(tv)
            x = bary @ tv
            r = np.linalg.norm(x, axis=1)
            pts.append(x / r[:, None])
            wts.append(w_pat * (2.0 * area) * h / r ** 3)
            pidx.append(np.full(len(bary), p))
        vals = np.tile(bary, (len(reps), 1))
        return (np.vstack(pts), np.concatenate(wts),
                np.concatenate(pidx), vals)

    # circle
    t8, w8 = gauss01(8)
    nsub = 2 ** depth
    offs = np.arange(nsub) / nsub
    t = (offs[:, None] + t8[None, :] / nsub).ravel()           # parent coords
    w_pat = np.tile(w8 / nsub, nsub)
    pts = []
    wts = []
    pidx = []
    vals = []
    for p, e in enumerate(reps):
        a0, a1 = mesh.arcs[e]
        phi = a0 + (a1 - a0) * t
        pts.append(np.column_stack([np.cos(phi), np.sin(phi)]))
        wts.append(w_pat * (a1 - a0))
        pidx.append(np.full(len(t), p))
        vals.append(np.column_stack([1.0 - t, t]))
    return (np.vstack(pts), np.concatenate(wts),
            np.concatenate(pidx), np.vstack(vals))


def _abs_cos_integral(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact integral of |cos t| over [a, b] (vectorized)."""
    def F(u):
        m = np.floor(u / np.pi)
        v = u - m * np.pi
        s = np.where(v <= 0.5 * np.pi, np.sin(v), 2.0 - np.sin(v))
        return 2.0 * m + s
    return F(b) - F(a)


def assemble_angular(mesh: AngularMesh, g: float,
                     normals: np.ndarray | None = None,
                     depth_cap: int | None = None,
                     chunk: int = 512) -> AngularBlocks:
    """Assemble all angular factor matrices for anisotropy ``g``.

    The scattering matrices are assembled from a single global node set, so
    positive semidefiniteness of the phase kernel carries over to the
    matrices exactly (up to roundoff); accuracy is reported through
    ``normalization_defect`` (relative defect of the kernel row sums).
    """
    if normals is None:
        normals = np.array([(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)])
    normals = np.asarray(normals, dtype=float)
    dl = 2 if mesh.kind == "circle" else 3
    P = mesh.n_pairs
    reps = mesh.pair_reps

    # --- single integrals on the mesh's fine quadrature (representatives) ---
    rep_pair = -np.ones(mesh.n_elements, dtype=np.int64)
    rep_pair[reps] = np.arange(P)
    sel = rep_pair[mesh.quad_elem] >= 0
    s_f = mesh.quad_points[sel]
    w_f = mesh.quad_weights[sel]
    bary_f = mesh.quad_bary[sel][:, :dl]
    p_f = rep_pair[mesh.quad_elem[sel]]

    m_plus = 2.0 * mesh.measures[reps]

    m_minus = np.zeros((P, dl, dl))
    outer = w_f[:, None, None] * (bary_f[:, :, None] * bary_f[:, None, :])
    np.add.at(m_minus, p_f, outer)
    m_minus *= 2.0
    m_minus_inv = np.linalg.inv(m_minus)

    s_dim = mesh.dim
    a_pair = np.zeros((s_dim, P, dl))
    for i in range(s_dim):
        contrib = (w_f * s_f[:, i])[:, None] * bary_f
        np.add.at(a_pair[i], p_f, contrib)
    a_pair *= 2.0

    omega = np.zeros((len(normals), P))
    if mesh.kind == "circle":
        alphas = np.arctan2(normals[:, 1], normals[:, 0])
        for n, alpha in enumerate(alphas):
            arcs = mesh.arcs[reps]
            omega[n] = 2.0 * _abs_cos_integral(arcs[:, 0] - alpha, arcs[:, 1] - alpha)
    else:
        for n, nv in enumerate(normals):
            proj = np.abs(s_f[:, 0] * nv[0] + s_f[:, 1] * nv[1])
            np.add.at(omega[n], p_f, w_f * proj)
        omega *= 2.0

    # --- scattering kernel double integrals ---
    depth = _theta_depth(mesh, g, depth_cap)
    S, w, pidx, vals = _theta_nodes(mesh, depth)
    N = len(w)
    L = P * dl
    U = sp.csr_matrix((np.ones(N), (np.arange(N), pidx)), shape=(N, P))
    rows = np.repeat(np.arange(N), dl)
    cols = (pidx[:, None] * dl + np.arange(dl)[None, :]).ravel()
    Psi = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(N, L))

    theta_plus = np.zeros((P, P))
    theta_minus = np.zeros((L, L))
    Uw = U.multiply(w[:, None]).tocsr()
    Psiw = Psi.multiply(w[:, None]).tocsr()
    for start in range(0, N, chunk):
        rows_sl = slice(start, min(start + chunk, N))
        M = S[rows_sl] @ S.T
        Kp = hg_phase(g, M, mesh.kind)
        Km = hg_phase(g, -M, mesh.kind)
        theta_plus += Uw[rows_sl].T @ ((Kp + Km) @ Uw)
        theta_minus += Psiw[rows_sl].T @ ((Kp - Km) @ Psiw)
    theta_plus *= 2.0
    theta_minus *= 2.0
    theta_plus = 0.5 * (theta_plus + theta_plus.T)
    theta_minus = 0.5 * (theta_minus + theta_minus.T)

    defect = float(np.max(np.abs(theta_plus.sum(axis=1) - m_plus) / m_plus))

    return AngularBlocks(
        mesh=mesh, g=float(g), dl=dl,
        theta_plus=theta_plus, theta_minus=theta_minus,
        m_plus=m_plus, m_minus=m_minus, m_minus_inv=m_minus_inv,
        a_pair=a_pair, normals=normals, omega=omega,
        normalization_defect=defect, theta_nodes=N,
    )


# ---------------------------------------------------------------------------
# spatial blocks
# ---------------------------------------------------------------------------

@dataclass
class SpatialBlocks:
    """Spatial factor matrices on the P1 (even) / P0 (odd) pair of spaces."""

    mesh: SpatialMesh
    optics: OpticalField
    m_sigt_plus: sp.csr_matrix   # P1 mass weighted by sigma_t
    m_sigs_plus: sp.csr_matrix   # P1 mass weighted by sigma_s
    m_sigt_minus: np.ndarray     # diagonal: sigma_t * area per element
    m_sigs_minus: np.ndarray
    d_mats: list                 # [D_x, D_y], (n_vertices, n_elements) sparse
    normals: np.ndarray          # (nn, 2) distinct outward normals
    boundary_mass: list          # per normal: P1 edge mass on that side
    edge_normal_group: np.ndarray  # boundary edge -> normal index

    @property
    def n_even(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_odd(self) -> int:
        return self.mesh.n_elements


def _normal_groups(mesh: SpatialMesh):
    keys = [tuple(np.round(n, 10)) for n in mesh.boundary_normals]
    distinct = sorted(set(keys))
    index = {k: i for i, k in enumerate(distinct)}
    groups = np.array([index[k] for k in keys], dtype=np.int64)
    return np.asarray(distinct, dtype=float), groups


def assemble_spatial(mesh: SpatialMesh, optics: OpticalField) -> SpatialBlocks:
    """Assemble spatial masses, derivative matrices and boundary masses."""
    if optics.sigma_s.shape != (mesh.n_elements,):
        raise ValueError("optical field not aligned with mesh elements")
    nv, nt = mesh.n_vertices, mesh.n_elements
    tris = mesh.triangles
    areas = mesh.areas
    sig_t = optics.sigma_t
    sig_s = optics.sigma_s

    # P1 weighted masses: local matrix area/12 * (1 + delta_ij).
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    ii = np.repeat(tris, 3, axis=1).ravel()          # row index pattern
    jj = np.tile(tris, (1, 3)).ravel()
    base = (areas[:, None, None] * local[None, :, :]).reshape(nt, -1)
    m_sigt_plus = sp.csr_matrix(((sig_t[:, None] * base).ravel(), (ii, jj)),
                                shape=(nv, nv))
    m_sigs_plus = sp.csr_matrix(((sig_s[:, None] * base).ravel(), (ii, jj)),
                                shape=(nv, nv))
    m_sigs_plus.eliminate_zeros()

    # P1 gradients; D_n[i, e] = area_e * d(phi_i)/d(x_n) on element e.
    p = mesh.vertices[tris]                          # (nt, 3, 2)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]  # = 2*area (positive)
    grad = np.empty((nt, 3, 2))
    grad[:, 1, 0] = e2[:, 1] / det
    grad[:, 1, 1] = -e2[:, 0] / det
    grad[:, 2, 0] = -e1[:, 1] / det
    grad[:, 2, 1] = e1[:, 0] / det
    grad[:, 0] = -grad[:, 1] - grad[:, 2]
    rows = tris.ravel()
    cols = np.repeat(np.arange(nt), 3)
    d_mats = [sp.csr_matrix(((areas[:, None] * grad[:, :, n]).ravel(),
                             (rows, cols)), shape=(nv, nt))
              for n in range(2)]

    normals, groups = _normal_groups(mesh)
    boundary_mass = []
    for n in range(len(normals)):
        edges = mesh.boundary_edges[groups == n]
        pts = mesh.vertices[edges]
        lens = np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
        loc = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
        vals = (lens[:, None, None] * loc[None]).ravel()
        r = np.repeat(edges, 2, axis=1).ravel()
        c = np.tile(edges, (1, 2)).ravel()
        boundary_mass.append(sp.csr_matrix((vals, (r, c)), shape=(nv, nv)))

    return SpatialBlocks(
        mesh=mesh, optics=optics,
        m_sigt_plus=m_sigt_plus, m_sigs_plus=m_sigs_plus,
        m_sigt_minus=sig_t * areas, m_sigs_minus=sig_s * areas,
        d_mats=d_mats, normals=normals, boundary_mass=boundary_mass,
        edge_normal_group=groups,
    )


# ---------------------------------------------------------------------------
# combined system + load
# ---------------------------------------------------------------------------

@dataclass
class SystemMatrices:
    angular: AngularBlocks
    spatial: SpatialBlocks

    @property
    def n_even(self) -> int:
        return self.angular.n_pairs * self.spatial.n_even

    @property
    def n_odd(self) -> int:
        return self.angular.n_odd * self.spatial.n_odd


def assemble_load(spatial_mesh: SpatialMesh, angular: AngularBlocks,
                  source: SourceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Load vector (even, odd) for isotropic interior/boundary sources.

    The odd component vanishes because odd angular basis functions integrate
    to zero against isotropic data.
    """
    nv = spatial_mesh.n_vertices
    nt = spatial_mesh.n_elements
    P = angular.n_pairs

    q = np.broadcast_to(np.asarray(source.interior, dtype=float), (nt,))
    qphi = np.zeros(nv)
    contrib = (q * spatial_mesh.areas / 3.0)
    np.add.at(qphi, spatial_mesh.triangles[:, 0], contrib)
    np.add.at(qphi, spatial_mesh.triangles[:, 1], contrib)
    np.add.at(qphi, spatial_mesh.triangles[:, 2], contrib)
    even = (angular.m_plus[:, None] * qphi[None, :])

    qb = np.broadcast_to(np.asarray(source.boundary, dtype=float),
                         (len(spatial_mesh.boundary_edges),))
    if np.any(qb != 0.0):
        normals, groups = _normal_groups(spatial_mesh)
        # match angular omega table rows to the spatial normal list
        omega_rows = []
        for nvec in normals:
            hit = np.where(np.all(np.abs(angular.normals - nvec) < 1e-9, axis=1))[0]
            if len(hit) == 0:
                raise ValueError("angular blocks lack omega for a boundary normal")
            omega_rows.append(hit[0])
        qb_phi = np.zeros((len(normals), nv))
        for e, (edge, grp) in enumerate(zip(spatial_mesh.boundary_edges, groups)):
            pts = spatial_mesh.vertices[edge]
            half = 0.5 * np.linalg.norm(pts[1] - pts[0]) * qb[e]
            qb_phi[grp, edge[0]] += half
            qb_phi[grp, edge[1]] += half
        for grp, row in enumerate(omega_rows):
            even += angular.omega[row][:, None] * qb_phi[grp][None, :]

    odd = np.zeros(angular.n_odd * nt)
    return even.ravel(), odd


def assemble_system(spatial_mesh: SpatialMesh, angular_mesh: AngularMesh,
                    optics: OpticalField, g: float,
                    depth_cap: int | None = None) -> SystemMatrices:
    """Assemble angular and spatial blocks with matching boundary normals."""
    normals, _ = _normal_groups(spatial_mesh)
    angular = assemble_angular(angular_mesh, g, normals=normals,
                               depth_cap=depth_cap)
    spatial = assemble_spatial(spatial_mesh, optics)
    return SystemMatrices(angular=angular, spatial=spatial)
