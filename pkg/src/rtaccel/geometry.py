"""Spatial and angular meshes for the even/odd-parity transport discretization.

The spatial domain is a rectangle triangulated by a structured grid.  The
angular domain is the unit circle (arcs) or the unit sphere (octahedral
refinement), in both cases closed under the antipodal map ``s -> -s`` so that
even/odd parity splittings are exact at the mesh level.

Meshes can be written to and read from a small plain-text format, see
:func:`dump_mesh` / :func:`load_mesh`::

    rtaccel-mesh 1 spatial
    grid 28 28 7.0 7.0
    vertices 841
    <x> <y>
    triangles 1568
    <i> <j> <k>

    rtaccel-mesh 1 sphere
    vertices 6
    <x> <y> <z>
    elements 8
    <i> <j> <k>
    pairing
    <p0> <p1> ...

    rtaccel-mesh 1 circle
    arcs 4
    <phi0> <phi1>
    pairing
    <p0> <p1> ...

Indices are zero based.  ``pairing`` is the antipodal involution on elements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpatialMesh",
    "AngularMesh",
    "build_rect_mesh",
    "build_circle_mesh",
    "build_octahedral_sphere_mesh",
    "dump_mesh",
    "load_mesh",
]


# ---------------------------------------------------------------------------
# quadrature rules
# ---------------------------------------------------------------------------

def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def duffy_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the unit triangle via the collapsed-square map.

    Returns barycentric-style coordinates (xi, eta) with xi,eta >= 0 and
    xi + eta <= 1, and weights summing to 1/2 (the reference area).
    """
    a, wa = gauss01(n)
    b, wb = gauss01(n)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    xi = A.ravel()
    eta = (B * (1.0 - A)).ravel()
    w = (WA * WB * (1.0 - A)).ravel()
    return np.column_stack([xi, eta]), w


# Symmetric 12-point rule of degree 6 on the unit triangle (weights sum to 1,
# to be scaled by the element area).
_D6_GROUPS = [
    (0.116786275726379, (0.501426509658179, 0.249286745170910, 0.249286745170910)),
    (0.050844906370207, (0.873821971016996, 0.063089014491502, 0.063089014491502)),
    (0.082851075618374, (0.053145049844816, 0.310352451033785, 0.636502499121399)),
]


def triangle_rule_d6() -> tuple[np.ndarray, np.ndarray]:
    """Degree-6 symmetric rule: (xi, eta) points and weights summing to 1/2."""
    pts = []
    wts = []
    for w, (l1, l2, l3) in _D6_GROUPS:
        lams = {(l1, l2, l3), (l1, l3, l2), (l2, l1, l3),
                (l2, l3, l1), (l3, l1, l2), (l3, l2, l1)}
        for lam in sorted(lams):
            pts.append((lam[1], lam[2]))  # barycentric (l2, l3) -> (xi, eta)
            wts.append(w)
    return np.asarray(pts), 0.5 * np.asarray(wts)


# ---------------------------------------------------------------------------
# spatial mesh
# ---------------------------------------------------------------------------

@dataclass
class SpatialMesh:
    """Conforming triangulation of an axis-aligned rectangle.

    ``boundary_edges`` lists vertex pairs of edges on the rectangle boundary,
    ``boundary_normals`` the matching outward unit normals.  ``grid`` records
    the structured-grid provenance (cells_x, cells_y, length_x, length_y) and
    is used to check alignment with piecewise-constant material layouts.
    """

    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3) int
    areas: np.ndarray             # (nt,)
    centroids: np.ndarray         # (nt, 2)
    boundary_edges: np.ndarray    # (nb, 2) int
    boundary_normals: np.ndarray  # (nb, 2)
    grid: tuple | None = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    def validate(self) -> None:
        if np.any(self.areas <= 0):
            raise ValueError("degenerate or inverted triangle in mesh")
        # Conformity: every interior edge shared by exactly two triangles,
        # boundary edges by one.
        edges: dict[tuple[int, int], int] = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        if any(c > 2 for c in edges.values()):
            raise ValueError("non-conforming mesh: edge shared by >2 triangles")
        n_boundary = sum(1 for c in edges.values() if c == 1)
        if n_boundary != len(self.boundary_edges):
            raise ValueError("boundary edge bookkeeping inconsistent")


def build_rect_mesh(cells_x: int, cells_y: int,
                    length_x: float, length_y: float) -> SpatialMesh:
    """Structured triangulation of (0, length_x) x (0, length_y).

    Each grid cell is split along its (+x, +y) diagonal, giving
    2 * cells_x * cells_y triangles and (cells_x+1) * (cells_y+1) vertices.
    """
    if cells_x < 1 or cells_y < 1:
        raise ValueError("need at least one cell per direction")
    if length_x <= 0 or length_y <= 0:
        raise ValueError("rectangle side lengths must be positive")
    xs = np.linspace(0.0, length_x, cells_x + 1)
    ys = np.linspace(0.0, length_y, cells_y + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (cells_y + 1) + j

    tris = np.empty((2 * cells_x * cells_y, 3), dtype=np.int64)
    t = 0
    for i in range(cells_x):
        for j in range(cells_y):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris[t] = (v00, v10, v11)      # lower-right triangle
            tris[t + 1] = (v00, v11, v01)  # upper-left triangle
            t += 2

    p = vertices[tris]
    areas = 0.5 * np.abs(
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    centroids = p.mean(axis=1)

    b_edges = []
    b_normals = []
    for i in range(cells_x):
        b_edges.append((vid(i, 0), vid(i + 1, 0)))
        b_normals.append((0.0, -1.0))
        b_edges.append((vid(i, cells_y), vid(i + 1, cells_y)))
        b_normals.append((0.0, 1.0))
    for j in range(cells_y):
        b_edges.append((vid(0, j), vid(0, j + 1)))
        b_normals.append((-1.0, 0.0))
        b_edges.append((vid(cells_x, j), vid(cells_x, j + 1)))
        b_normals.append((1.0, 0.0))

    mesh = SpatialMesh(
        vertices=vertices,
        triangles=tris,
        areas=areas,
        centroids=centroids,
        boundary_edges=np.asarray(b_edges, dtype=np.int64),
        boundary_normals=np.asarray(b_normals),
        grid=(cells_x, cells_y, float(length_x), float(length_y)),
    )
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# angular mesh
# ---------------------------------------------------------------------------

@dataclass
class AngularMesh:
    """Partition of S^1 or S^2 closed under the antipodal map.

    ``pairing`` maps each element to its antipodal partner (a fixed-point-free
    involution).  ``pair_reps`` lists one representative element per antipodal
    pair; ``pair_index`` gives the pair an element belongs to.  The stored
    quadrature (``quad_points`` etc.) is a fine rule used for all single
    integrals; scattering-kernel double integrals build their own node sets.

    Sphere elements are radial projections of planar triangles whose vertices
    lie on the sphere; circle elements are arcs stored by their angle range.
    """

    kind: str                     # "circle" | "sphere"
    pairing: np.ndarray           # (ne,) int involution
    measures: np.ndarray          # (ne,)
    centers: np.ndarray           # (ne, dim) unit vectors
    diameters: np.ndarray         # (ne,) angular diameters
    quad_points: np.ndarray       # (nq, dim) unit vectors
    quad_weights: np.ndarray      # (nq,)
    quad_elem: np.ndarray         # (nq,) owning element
    quad_bary: np.ndarray = None  # (nq, 2|3) local coords within the element
    # sphere only:
    vertices: np.ndarray | None = None   # (nv, 3)
    elements: np.ndarray | None = None   # (ne, 3) int
    # circle only:
    arcs: np.ndarray | None = None       # (ne, 2) angles
    level: int | None = None
    pair_reps: np.ndarray = field(default=None, repr=False)  # type: ignore
    pair_index: np.ndarray = field(default=None, repr=False)  # type: ignore

    def __post_init__(self):
        n = len(self.pairing)
        if self.pair_reps is None:
            self.pair_reps = np.array(
                [e for e in range(n) if e < self.pairing[e]], dtype=np.int64)
        if self.pair_index is None:
            idx = np.empty(n, dtype=np.int64)
            for p, e in enumerate(self.pair_reps):
                idx[e] = p
                idx[self.pairing[e]] = p
            self.pair_index = idx

    @property
    def dim(self) -> int:
        """Ambient dimension of direction vectors (2 for circle, 3 sphere)."""
        return 2 if self.kind == "circle" else 3

    @property
    def n_elements(self) -> int:
        return len(self.pairing)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_reps)

    @property
    def sphere_measure(self) -> float:
        return 2.0 * np.pi if self.kind == "circle" else 4.0 * np.pi

    def validate(self) -> None:
        p = self.pairing
        n = len(p)
        if np.any(p[p] != np.arange(n)) or np.any(p == np.arange(n)):
            raise ValueError("pairing is not a fixed-point-free involution")
        if abs(self.measures.sum() - self.sphere_measure) > 1e-11:
            raise ValueError("element measures do not sum to the sphere area")
        rep_meas = self.measures[self.pair_reps]
        par_meas = self.measures[self.pairing[self.pair_reps]]
        if np.max(np.abs(rep_meas - par_meas)) > 1e-11 * rep_meas.max():
            raise ValueError("antipodal partners differ in measure")


def build_circle_mesh(n_pairs: int, fine_order: int = 24) -> AngularMesh:
    """2*n_pairs equal arcs on S^1; arc i and arc i+n_pairs are antipodal."""
    if n_pairs < 1:
        raise ValueError("need at least one antipodal pair")
    ne = 2 * n_pairs
    delta = 2.0 * np.pi / ne
    starts = delta * np.arange(ne)
    arcs = np.column_stack([starts, starts + delta])
    pairing = (np.arange(ne) + n_pairs) % ne
    return _finish_circle(arcs, pairing, fine_order)


def _vertex_key(v: np.ndarray) -> tuple:
    return tuple(np.round(v, 12) + 0.0)


def sphere_element_frame(verts: np.ndarray):
    """Plane data of the flat triangle under a spherical element.

    Returns (origin v0, edge vectors e1 e2, planar area, distance of the
    plane from the origin).  The spherical patch is the radial projection of
    this flat triangle; integrals over the patch use the exact Jacobian
    2*area*h/|x|^3 at planar points x.
    """
    v0, v1, v2 = verts
    e1 = v1 - v0
    e2 = v2 - v0
    cross = np.cross(e1, e2)
    nrm = np.linalg.norm(cross)
    area = 0.5 * nrm
    h = abs(np.dot(cross / nrm, v0))
    return v0, e1, e2, area, h


def sphere_patch_quadrature(verts: np.ndarray, xi: np.ndarray, w_ref: np.ndarray):
    """Map a reference-triangle rule onto a spherical patch.

    ``xi`` are (n, 2) reference coordinates, ``w_ref`` weights summing to the
    reference area 1/2.  Returns unit direction nodes and weights integrating
    over the patch.
    """
    v0, e1, e2, area, h = sphere_element_frame(verts)
    x = v0[None, :] + xi[:, :1] * e1[None, :] + xi[:, 1:2] * e2[None, :]
    r = np.linalg.norm(x, axis=1)
    s = x / r[:, None]
    w = w_ref * (2.0 * area) * h / r ** 3
    return s, w


def build_octahedral_sphere_mesh(level: int, fine_order: int = 20) -> AngularMesh:
    """Octahedron refined ``level`` times, faces projected to the sphere.

    Produces 8 * 4**level spherical triangles with exact antipodal pairing.
    """
    if level < 0:
        raise ValueError("refinement level must be >= 0")
    verts = [np.array(v, dtype=float) for v in
             [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]]
    vmap = {_vertex_key(v): i for i, v in enumerate(verts)}
    faces = []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                tri = [vmap[_vertex_key(np.array([sx, 0, 0], float))],
                       vmap[_vertex_key(np.array([0, sy, 0], float))],
                       vmap[_vertex_key(np.array([0, 0, sz], float))]]
                faces.append(tri)

    def midpoint(i, j):
        m = verts[i] + verts[j]
        m /= np.linalg.norm(m)
        key = _vertex_key(m)
        if key not in vmap:
            vmap[key] = len(verts)
            verts.append(m)
        return vmap[key]

    for _ in range(level):
        new_faces = []
        for (a, b, c) in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        faces = new_faces

    vertices = np.asarray(verts)
    elements = np.asarray(faces, dtype=np.int64)
    ne = len(elements)

    # Antipodal pairing via negated vertex keys.
    face_map = {}
    for e, tri in enumerate(elements):
        key = tuple(sorted(_vertex_key(vertices[v]) for v in tri))
        face_map[key] = e
    pairing = np.empty(ne, dtype=np.int64)
    for e, tri in enumerate(elements):
        key = tuple(sorted(_vertex_key(-vertices[v]) for v in tri))
        pairing[e] = face_map[key]

    mesh = _finish_sphere(vertices, elements, pairing, fine_order)
    mesh.level = level
    return mesh


# ---------------------------------------------------------------------------
# plain-text dump / load
# ---------------------------------------------------------------------------

def dump_mesh(mesh) -> str:
    """Serialize a mesh to the plain-text format described in the module doc."""
    out = []
    if isinstance(mesh, SpatialMesh):
        out.append("rtaccel-mesh 1 spatial")
        if mesh.grid is not None:
            cx, cy, lx, ly = mesh.grid
            out.append(f"grid {cx} {cy} {float(lx)!r} {float(ly)!r}")
        out.append(f"vertices {mesh.n_vertices}")
        out += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
        out.append(f"triangles {mesh.n_elements}")
        out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    elif isinstance(mesh, AngularMesh) and mesh.kind == "sphere":
        out.append("rtaccel-mesh 1 sphere")
        out.append(f"vertices {len(mesh.vertices)}")
        out += [f"{float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
        out.append(f"elements {mesh.n_elements}")
        out += [f"{a} {b} {c}" for a, b, c in mesh.elements]
        out.append("pairing")
        out.append(" ".join(str(p) for p in mesh.pairing))
    elif isinstance(mesh, AngularMesh) and mesh.kind == "circle":
        out.append("rtaccel-mesh 1 circle")
        out.append(f"arcs {mesh.n_elements}")
        out += [f"{float(a)!r} {float(b)!r}" for a, b in mesh.arcs]
        out.append("pairing")
        out.append(" ".join(str(p) for p in mesh.pairing))
    else:
        raise TypeError(f"cannot dump object of type {type(mesh)!r}")
    return "\n".join(out) + "\n"


def load_mesh(text: str):
    """Parse a mesh dump.  Derived data (quadrature, areas) is rebuilt."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    if len(header) != 3 or header[0] != "rtaccel-mesh" or header[1] != "1":
        raise ValueError("not an rtaccel mesh dump (version 1)")
    kind = header[2]
    pos = 1

    def expect(word):
        nonlocal pos
        parts = lines[pos].split()
        if parts[0] != word:
            raise ValueError(f"expected {word!r} section, got {lines[pos]!r}")
        pos += 1
        return parts[1:]

    if kind == "spatial":
        grid = None
        if lines[pos].startswith("grid"):
            g = lines[pos].split()[1:]
            grid = (int(g[0]), int(g[1]), float(g[2]), float(g[3]))
            pos += 1
        (n,) = expect("vertices")
        nv = int(n)
        vertices = np.array([[float(v) for v in lines[pos + i].split()]
                             for i in range(nv)])
        pos += nv
        (n,) = expect("triangles")
        nt = int(n)
        tris = np.array([[int(v) for v in lines[pos + i].split()]
                         for i in range(nt)], dtype=np.int64)
        pos += nt
        p = vertices[tris]
        areas = 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        centroids = p.mean(axis=1)
        b_edges, b_normals = _recover_boundary(vertices, tris)
        mesh = SpatialMesh(vertices=vertices, triangles=tris, areas=areas,
                           centroids=centroids, boundary_edges=b_edges,
                           boundary_normals=b_normals, grid=grid)
        mesh.validate()
        return mesh

    if kind == "sphere":
        (n,) = expect("vertices")
        nv = int(n)
        vertices = np.array([[float(v) for v in lines[pos + i].split()]
                             for i in range(nv)])
        pos += nv
        (n,) = expect("elements")
        ne = int(n)
        elements = np.array([[int(v) for v in lines[pos + i].split()]
                             for i in range(ne)], dtype=np.int64)
        pos += ne
        expect("pairing")
        pairing = np.array([int(v) for v in lines[pos].split()], dtype=np.int64)
        return _finish_sphere(vertices, elements, pairing)

    if kind == "circle":
        (n,) = expect("arcs")
        ne = int(n)
        arcs = np.array([[float(v) for v in lines[pos + i].split()]
                         for i in range(ne)])
        pos += ne
        expect("pairing")
        pairing = np.array([int(v) for v in lines[pos].split()], dtype=np.int64)
        return _finish_circle(arcs, pairing)

    raise ValueError(f"unknown mesh kind {kind!r}")


def _recover_boundary(vertices, tris):
    edges: dict[tuple[int, int], int] = {}
    for tri in tris:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    b_edges = np.array([k for k, c in edges.items() if c == 1], dtype=np.int64)
    xmin, ymin = vertices.min(axis=0)
    xmax, ymax = vertices.max(axis=0)
    normals = np.zeros((len(b_edges), 2))
    for i, (a, b) in enumerate(b_edges):
        mid = 0.5 * (vertices[a] + vertices[b])
        if abs(mid[1] - ymin) < 1e-12 * max(1.0, ymax):
            normals[i] = (0.0, -1.0)
        elif abs(mid[1] - ymax) < 1e-12 * max(1.0, ymax):
            normals[i] = (0.0, 1.0)
        elif abs(mid[0] - xmin) < 1e-12 * max(1.0, xmax):
            normals[i] = (-1.0, 0.0)
        elif abs(mid[0] - xmax) < 1e-12 * max(1.0, xmax):
            normals[i] = (1.0, 0.0)
        else:
            raise ValueError("boundary edge not on the rectangle boundary")
    return b_edges, normals


def _finish_circle(arcs, pairing, fine_order: int = 24) -> AngularMesh:
    ne = len(arcs)
    lengths = arcs[:, 1] - arcs[:, 0]
    t, w = gauss01(fine_order)
    phis = (arcs[:, :1] + lengths[:, None] * t[None, :]).ravel()
    weights = (lengths[:, None] * w[None, :]).ravel()
    points = np.column_stack([np.cos(phis), np.sin(phis)])
    ts = np.tile(t, ne)
    mids = arcs.mean(axis=1)
    mesh = AngularMesh(
        kind="circle", pairing=pairing, measures=lengths,
        centers=np.column_stack([np.cos(mids), np.sin(mids)]),
        diameters=lengths,
        quad_points=points, quad_weights=weights,
        quad_elem=np.repeat(np.arange(ne), fine_order),
        quad_bary=np.column_stack([1.0 - ts, ts]),
        arcs=arcs,
    )
    mesh.validate()
    return mesh


def _finish_sphere(vertices, elements, pairing, fine_order: int = 20) -> AngularMesh:
    ne = len(elements)
    xi, w_ref = duffy_rule(fine_order)
    bary = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])
    pts = np.empty((ne * len(w_ref), 3))
    wts = np.empty(ne * len(w_ref))
    measures = np.empty(ne)
    centers = np.empty((ne, 3))
    diameters = np.empty(ne)
    for e, tri in enumerate(elements):
        tv = vertices[tri]
        s, w = sphere_patch_quadrature(tv, xi, w_ref)
        sl = slice(e * len(w_ref), (e + 1) * len(w_ref))
        pts[sl] = s
        wts[sl] = w
        measures[e] = w.sum()
        c = tv.mean(axis=0)
        centers[e] = c / np.linalg.norm(c)
        chords = [np.linalg.norm(tv[a] - tv[b]) for a, b in ((0, 1), (1, 2), (2, 0))]
        diameters[e] = 2.0 * np.arcsin(min(1.0, max(chords) / 2.0))
    mesh = AngularMesh(
        kind="sphere", pairing=pairing, measures=measures, centers=centers,
        diameters=diameters, quad_points=pts, quad_weights=wts,
        quad_elem=np.repeat(np.arange(ne), len(w_ref)),
        quad_bary=np.tile(bary, (ne, 1)),
        vertices=vertices, elements=elements,
    )
    mesh.validate()
    return mesh
