"""Closed-manifold backends: triangle meshes and closed-form analytic manifolds.

Meshes carry a cotangent Laplace-Beltrami discretization with lumped
(barycentric) masses.  Analytic backends (circle, round sphere, flat torus)
expose exact geodesic distance, volume, and eigenpairs in closed form.
"""

import warnings

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.csgraph as csgraph
import scipy.special


class MeshError(ValueError):
    """Raised for structurally invalid meshes (non-closed, degenerate, ...)."""


# ---------------------------------------------------------------------------
# Triangle meshes
# ---------------------------------------------------------------------------

class TriMesh:
    """A closed, oriented triangle mesh.

    Parameters
    ----------
    vertices : (V, 3) float array
        Vertex positions.
    faces : (F, 3) int array
        Triangle corner indices, consistently oriented (counter-clockwise
        seen from outside).
    period : length-3 sequence or None
        Optional coordinate periods for flat periodic meshes (0 disables
        wrapping on that axis).  Displacements are then taken with the
        minimal-image convention, so triangles straddling the seam keep
        their intrinsic shape.
    reference : analytic manifold or None
        Closed-form geometry this mesh discretizes, when known.  Enables
        exact geodesic distances in experiments on test manifolds.

    Raises
    ------
    MeshError
        If the mesh is not closed/oriented or contains a degenerate
        (near zero area) triangle.
    """

    def __init__(self, vertices, faces, period=None, reference=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.faces = np.asarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be a (V, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("faces must be a (F, 3) array")
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise MeshError("face references vertex index out of range")
        self.period = None if period is None else np.asarray(period, dtype=float)
        self.reference = reference
        self.dim = 2
        self._graph = None
        self._frames = None
        self._edges = None
        self._corner_vectors = None

        self._check_closed_oriented()

        bbox = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        if self.period is not None:
            bbox = np.maximum(bbox, self.period)
        diag2 = float(bbox @ bbox)
        self.face_areas = self._face_areas()
        bad = np.nonzero(self.face_areas < 1e-12 * diag2)[0]
        if bad.size:
            raise MeshError(f"degenerate (zero-area) triangle at face {bad[0]}")

        # barycentric lumped mass: a third of each incident triangle area
        masses = np.zeros(len(self.vertices))
        np.add.at(masses, self.faces.ravel(),
                  np.repeat(self.face_areas / 3.0, 3))
        self.masses = masses
        self.volume = float(self.face_areas.sum())

    # -- geometry helpers ---------------------------------------------------

    def wrap(self, disp):
        """Minimal-image displacement for periodic meshes (identity otherwise)."""
        disp = np.asarray(disp, dtype=float)
        if self.period is None:
            return disp
        out = disp.copy()
        for ax, per in enumerate(self.period):
            if per > 0:
                out[..., ax] -= per * np.round(out[..., ax] / per)
        return out

    def corner_vectors(self):
        """Edge vectors (x1-x0, x2-x0) per face, period-aware."""
        if self._corner_vectors is None:
            x0 = self.vertices[self.faces[:, 0]]
            e1 = self.wrap(self.vertices[self.faces[:, 1]] - x0)
            e2 = self.wrap(self.vertices[self.faces[:, 2]] - x0)
            self._corner_vectors = (e1, e2)
        return self._corner_vectors

    def _face_areas(self):
        e1, e2 = self.corner_vectors()
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def face_normals(self):
        e1, e2 = self.corner_vectors()
        nrm = np.cross(e1, e2)
        return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

    def _check_closed_oriented(self):
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        v = len(self.vertices)
        key = directed[:, 0] * v + directed[:, 1]
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts > 1):
            i = int(uniq[counts > 1][0])
            raise MeshError(
                f"non-closed mesh: directed edge ({i // v},{i % v}) repeated "
                "(inconsistent orientation or non-manifold edge)")
        rkey = directed[:, 1] * v + directed[:, 0]
        missing = np.setdiff1d(key, rkey, assume_unique=False)
        if missing.size:
            i = int(missing[0])
            raise MeshError(
                f"non-closed mesh: boundary edge ({i // v},{i % v})")

    def edges(self):
        """Undirected edges as an (E, 2) array with i < j."""
        if self._edges is None:
            f = self.faces
            e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
            e.sort(axis=1)
            self._edges = np.unique(e, axis=0)
        return self._edges

    def mean_edge_length(self):
        e = self.edges()
        d = self.wrap(self.vertices[e[:, 1]] - self.vertices[e[:, 0]])
        return float(np.linalg.norm(d, axis=1).mean())

    # -- tangent frames -----------------------------------------------------

    def vertex_normals(self):
        nrm = np.zeros_like(self.vertices)
        fn = self.face_normals() * self.face_areas[:, None]
        for c in range(3):
            np.add.at(nrm, self.faces[:, c], fn)
        return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

    def tangent_frames(self):
        """Per-vertex orthonormal tangent pairs from the one-ring LSQ plane.

        Returns an (V, 2, 3) array; rows span the least-squares tangent
        plane of the one-ring neighborhood.
        """
        if self._frames is not None:
            return self._frames
        v = len(self.vertices)
        if self.period is not None and np.ptp(self.vertices[:, 2]) == 0.0:
            # flat periodic mesh in the plane: the frame is the plane itself
            frames = np.broadcast_to(
                np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), (v, 2, 3)).copy()
            self._frames = frames
            return frames
        e = self.edges()
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        disp = self.wrap(self.vertices[cols] - self.vertices[rows])
        # covariance of one-ring displacements, 3x3 per vertex
        cov = np.zeros((v, 3, 3))
        np.add.at(cov, rows, disp[:, :, None] * disp[:, None, :])
        vertex_normals = self.vertex_normals()
        frames = np.empty((v, 2, 3))
        eigvals, eigvecs = np.linalg.eigh(cov)
        # smallest-eigenvalue direction is the LSQ plane normal
        normals = eigvecs[:, :, 0]
        flip = np.sum(normals * vertex_normals, axis=1) < 0
        normals[flip] *= -1.0
        e1 = eigvecs[:, :, 2]
        e1 -= np.sum(e1 * normals, axis=1, keepdims=True) * normals
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        frames[:, 0] = e1
        frames[:, 1] = np.cross(normals, e1)
        self._frames = frames
        return frames

    # -- geodesic distance --------------------------------------------------

    def _distance_graph(self):
        """Edge graph plus one-ring unfolding shortcuts, as a sparse matrix.

        Shortcut edges connect the two vertices opposite a shared edge at
        their unfolded planar distance, added only when the straight
        unfolded segment crosses the shared edge (so every graph path maps
        to an on-surface path of the same length).
        """
        if self._graph is not None:
            return self._graph
        nv = len(self.vertices)
        e = self.edges()
        w = np.linalg.norm(self.wrap(self.vertices[e[:, 1]]
                                     - self.vertices[e[:, 0]]), axis=1)

        # opposite vertices across each undirected edge, via sorted edge keys
        f = self.faces
        tri_e = np.concatenate([f[:, [1, 2]], f[:, [2, 0]], f[:, [0, 1]]])
        tri_o = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
        tri_e.sort(axis=1)
        tri_key = tri_e[:, 0] * nv + tri_e[:, 1]
        order = np.argsort(tri_key, kind="stable")
        opp = tri_o[order].reshape(-1, 2)  # closed mesh: exactly 2 per edge
        e_sorted_key = e[:, 0] * nv + e[:, 1]
        assert np.array_equal(np.sort(tri_key), np.repeat(e_sorted_key, 2))

        a, b = e[:, 0], e[:, 1]
        c, d = opp[:, 0], opp[:, 1]
        xa = self.vertices[a]
        ab = self.wrap(self.vertices[b] - xa)
        ac = self.wrap(self.vertices[c] - xa)
        ad = self.wrap(self.vertices[d] - xa)
        lab = np.linalg.norm(ab, axis=1)
        u = ab / lab[:, None]
        cu = np.sum(ac * u, axis=1)
        cv = np.linalg.norm(ac - cu[:, None] * u, axis=1)
        du = np.sum(ad * u, axis=1)
        dv = -np.linalg.norm(ad - du[:, None] * u, axis=1)  # unfold to far side
        span = cv - dv
        s = np.where(span > 0, cv / np.where(span > 0, span, 1.0), 0.0)
        xcross = cu + s * (du - cu)
        ok = (span > 0) & (xcross >= 0.0) & (xcross <= lab)
        short_w = np.hypot(cu - du, cv - dv)

        rows = np.concatenate([a, c[ok]])
        cols = np.concatenate([b, d[ok]])
        data = np.concatenate([w, short_w[ok]])
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        key = lo * nv + hi
        # keep the shortest parallel connection per vertex pair
        order = np.lexsort((data, key))
        key, lo, hi, data = key[order], lo[order], hi[order], data[order]
        first = np.ones(len(key), dtype=bool)
        first[1:] = key[1:] != key[:-1]
        g = sparse.csr_matrix((data[first], (lo[first], hi[first])),
                              shape=(nv, nv))
        self._graph = g + g.T
        return g + g.T

    def graph_distance_from(self, source):
        """Dijkstra distance field from a vertex over the shortcut graph."""
        g = self._distance_graph()
        return csgraph.dijkstra(g, directed=False, indices=int(source))

    def exact_distance_from(self, source):
        """Distance field from the reference geometry, when available."""
        if self.reference is None:
            raise ValueError("mesh has no reference geometry for exact distances")
        return self.reference.distance_between(
            self.reference.mesh_points(self)[int(source)][None, :],
            self.reference.mesh_points(self)).ravel()

    def distance_from(self, source, method="graph"):
        if method == "graph":
            return self.graph_distance_from(source)
        if method == "exact":
            return self.exact_distance_from(source)
        raise ValueError(f"unknown distance method {method!r}")

    def sample_points(self):
        return np.arange(len(self.vertices))

    def diameter_estimate(self):
        field = self.graph_distance_from(0)
        far = int(np.argmax(field))
        return float(self.graph_distance_from(far).max())


# ---------------------------------------------------------------------------
# OFF files
# ---------------------------------------------------------------------------

def load_mesh(path):
    """Read an ASCII OFF file into a TriMesh.

    Only triangular faces are accepted.  Parse failures, non-closed
    connectivity and degenerate triangles raise :class:`MeshError` with the
    offending location.
    """
    with open(path) as fh:
        lines = fh.readlines()

    def content(idx):
        return lines[idx].split("#", 1)[0].strip()

    pos = 0
    while pos < len(lines) and not content(pos):
        pos += 1
    if pos >= len(lines) or content(pos) != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    pos += 1
    while pos < len(lines) and not content(pos):
        pos += 1
    try:
        nv, nf, _ = (int(x) for x in content(pos).split())
    except Exception as exc:
        raise MeshError(f"{path}:{pos + 1}: bad counts line") from exc
    pos += 1

    vertices = np.empty((nv, 3))
    faces = np.empty((nf, 3), dtype=np.int64)
    got = 0
    while got < nv:
        if pos >= len(lines):
            raise MeshError(f"{path}: truncated vertex list")
        text = content(pos)
        pos += 1
        if not text:
            continue
        parts = text.split()
        if len(parts) < 3:
            raise MeshError(f"{path}:{pos}: bad vertex line")
        vertices[got] = [float(x) for x in parts[:3]]
        got += 1
    got = 0
    while got < nf:
        if pos >= len(lines):
            raise MeshError(f"{path}: truncated face list")
        text = content(pos)
        pos += 1
        if not text:
            continue
        parts = text.split()
        if int(parts[0]) != 3:
            raise MeshError(f"{path}:{pos}: only triangular faces supported")
        idx = [int(x) for x in parts[1:4]]
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshError(f"{path}:{pos}: face references vertex index out of range")
        faces[got] = idx
        got += 1

    return TriMesh(vertices, faces)


def save_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


# ---------------------------------------------------------------------------
# Mesh generators
# ---------------------------------------------------------------------------

_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=float)
_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def make_sphere(radius, subdivisions):
    """Icosphere: subdivided icosahedron with vertices projected to `radius`."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    if radius <= 0:
        raise ValueError("radius must be positive")
    verts = [v for v in _ICO_VERTS / np.linalg.norm(_ICO_VERTS[0])]
    faces = _ICO_FACES
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m = m / np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.array(new_faces, dtype=np.int64)
    vertices = np.array(verts)
    vertices *= radius / np.linalg.norm(vertices, axis=1, keepdims=True)
    return TriMesh(vertices, faces, reference=Sphere(radius))


def make_torus_mesh(periods, divisions):
    """Flat torus as a periodic regular grid in the plane.

    Each grid cell is split along one diagonal; the cotangent Laplacian of
    the resulting mesh is the classical 5-point stencil.
    """
    (a1, a2), (n1, n2) = periods, divisions
    if a1 <= 0 or a2 <= 0:
        raise ValueError("periods must be positive")
    ii, jj = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    vertices = np.column_stack([
        (ii.ravel() * a1) / n1, (jj.ravel() * a2) / n2, np.zeros(n1 * n2)])

    i, j = ii.ravel(), jj.ravel()
    v00 = i * n2 + j
    v10 = ((i + 1) % n1) * n2 + j
    v01 = i * n2 + (j + 1) % n2
    v11 = ((i + 1) % n1) * n2 + (j + 1) % n2
    faces = np.concatenate([np.column_stack([v00, v10, v11]),
                            np.column_stack([v00, v11, v01])])
    return TriMesh(vertices, faces.astype(np.int64),
                   period=(a1, a2, 0.0), reference=FlatTorus((a1, a2)))


# ---------------------------------------------------------------------------
# Analytic manifolds
# ---------------------------------------------------------------------------

class AnalyticManifold:
    """Base for closed-form backends; subclasses fix kind and geometry."""

    kind = None

    def distance_between(self, P, Q):
        """Pairwise geodesic distances, (len(P), len(Q))."""
        raise NotImplementedError

    def distance(self, P, Q):
        """Elementwise geodesic distance between matched point arrays."""
        P, Q = np.atleast_2d(P), np.atleast_2d(Q)
        out = np.empty(len(P))
        for i in range(len(P)):
            out[i] = self.distance_between(P[i:i + 1], Q[i:i + 1])[0, 0]
        return out

    def distance_from(self, p, P=None):
        if P is None:
            P = self.sample_points()
        return self.distance_between(np.atleast_2d(p), P).ravel()

    def sample_weights(self, P):
        """Quadrature weights of a canonical sample (uniform by default)."""
        return np.full(len(P), self.volume / len(P))


class Circle(AnalyticManifold):
    """Circle of circumference L; points are arclength coordinates (m, 1)."""

    kind = "circle"

    def __init__(self, length, samples=2048):
        if length <= 0:
            raise ValueError("circumference must be positive")
        self.length = float(length)
        self.dim = 1
        self.volume = self.length
        self.samples = samples

    def diameter(self):
        return self.length / 2.0

    def sample_points(self, m=None):
        m = m or self.samples
        return (np.arange(m) * (self.length / m))[:, None]

    def distance_between(self, P, Q):
        d = np.abs(np.atleast_2d(P)[:, None, 0] - np.atleast_2d(Q)[None, :, 0])
        d %= self.length
        return np.minimum(d, self.length - d)

    def tangent_frame(self, p):
        return np.array([[1.0]])

    def exp(self, p, v):
        return (np.atleast_2d(p) + np.atleast_2d(v)) % self.length

    def eigen_count_below(self, lam_max):
        j = int(np.floor(np.sqrt(lam_max) * self.length / (2 * np.pi)))
        return 1 + 2 * j

    def eigenbasis(self, count):
        lams, labels = [0.0], [(0, "const")]
        j = 1
        while len(lams) < count:
            lam = (2 * np.pi * j / self.length) ** 2
            lams += [lam, lam]
            labels += [(j, "cos"), (j, "sin")]
            j += 1
        return _CircleBasis(self, np.array(lams[:count]), labels[:count])


class _CircleBasis:
    def __init__(self, circle, lams, labels):
        self.manifold = circle
        self.eigenvalues = lams
        self.labels = labels

    def values(self, P):
        x = np.atleast_2d(P)[:, 0]
        L = self.manifold.length
        out = np.empty((len(x), len(self.labels)))
        for k, (j, trig) in enumerate(self.labels):
            if trig == "const":
                out[:, k] = 1.0 / np.sqrt(L)
            else:
                f = np.cos if trig == "cos" else np.sin
                out[:, k] = np.sqrt(2.0 / L) * f(2 * np.pi * j * x / L)
        return out

    def gradients(self, P):
        x = np.atleast_2d(P)[:, 0]
        L = self.manifold.length
        out = np.zeros((len(x), len(self.labels), 1))
        for k, (j, trig) in enumerate(self.labels):
            if trig == "const":
                continue
            w = 2 * np.pi * j / L
            if trig == "cos":
                out[:, k, 0] = -np.sqrt(2.0 / L) * w * np.sin(w * x)
            else:
                out[:, k, 0] = np.sqrt(2.0 / L) * w * np.cos(w * x)
        return out

    def sup_norms(self):
        L = self.manifold.length
        return np.array([1.0 / np.sqrt(L) if trig == "const"
                         else np.sqrt(2.0 / L) for _, trig in self.labels])

    def grad_sup_norms(self):
        L = self.manifold.length
        return np.array([0.0 if trig == "const"
                         else np.sqrt(2.0 / L) * 2 * np.pi * j / L
                         for j, trig in self.labels])


class FlatTorus(AnalyticManifold):
    """Flat torus with the given periods; points are (m, n) coordinates."""

    kind = "torus"

    def __init__(self, periods, samples=4096):
        self.periods = np.asarray(periods, dtype=float)
        if np.any(self.periods <= 0):
            raise ValueError("periods must be positive")
        self.dim = len(self.periods)
        self.volume = float(np.prod(self.periods))
        self.samples = samples

    def diameter(self):
        return float(np.linalg.norm(self.periods / 2.0))

    def sample_points(self, m=None):
        m = m or self.samples
        # grid with per-axis resolution proportional to the period
        c = (m / self.volume) ** (1.0 / self.dim)
        counts = np.maximum(2, np.round(c * self.periods)).astype(int)
        axes = [np.arange(k) * (p / k) for k, p in zip(counts, self.periods)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([g.ravel() for g in grids])

    def wrap(self, disp):
        return disp - self.periods * np.round(disp / self.periods)

    def distance_between(self, P, Q):
        disp = np.atleast_2d(P)[:, None, :] - np.atleast_2d(Q)[None, :, :]
        return np.linalg.norm(self.wrap(disp), axis=-1)

    def tangent_frame(self, p):
        return np.eye(self.dim)

    def exp(self, p, v):
        return (np.atleast_2d(p) + np.atleast_2d(v)) % self.periods

    def mesh_points(self, mesh):
        return mesh.vertices[:, :self.dim]

    def lattice_modes(self, lam_max):
        """Lattice vectors (one per +/- pair) with eigenvalue <= lam_max."""
        bounds = np.floor(np.sqrt(lam_max) * self.periods / (2 * np.pi)).astype(int)
        axes = [np.arange(-b, b + 1) for b in bounds]
        grids = np.meshgrid(*axes, indexing="ij")
        mm = np.column_stack([g.ravel() for g in grids])
        lam = np.sum((2 * np.pi * mm / self.periods) ** 2, axis=1)
        keep = lam <= lam_max + 1e-12
        mm, lam = mm[keep], lam[keep]
        # canonical representative: first nonzero component positive
        canon = np.ones(len(mm), dtype=bool)
        for i, m in enumerate(mm):
            nz = m[m != 0]
            canon[i] = (len(nz) == 0) or (nz[0] > 0)
        mm, lam = mm[canon], lam[canon]
        order = np.lexsort(tuple(mm[:, ax] for ax in range(self.dim - 1, -1, -1))
                           + (lam,))
        return mm[order], lam[order]

    def eigenbasis(self, count):
        lam_max = 4.0
        while True:
            mm, lam = self.lattice_modes(lam_max)
            total = 1 + 2 * (len(mm) - 1)
            if total >= count:
                break
            lam_max *= 2.0
        lams, labels = [], []
        for m, l in zip(mm, lam):
            if np.all(m == 0):
                lams.append(0.0)
                labels.append((m, "const"))
            else:
                lams += [l, l]
                labels += [(m, "cos"), (m, "sin")]
        order = np.argsort(np.array(lams), kind="stable")[:count]
        return _TorusBasis(self, np.array(lams)[order],
                           [labels[i] for i in order])


class _TorusBasis:
    def __init__(self, torus, lams, labels):
        self.manifold = torus
        self.eigenvalues = lams
        self.labels = labels

    def _phase(self, P):
        X = np.atleast_2d(P)
        freq = np.array([2 * np.pi * m / self.manifold.periods
                         for m, _ in self.labels])
        return X @ freq.T, freq

    def values(self, P):
        theta, _ = self._phase(P)
        amp = np.sqrt(2.0 / self.manifold.volume)
        out = np.empty_like(theta)
        for k, (_, trig) in enumerate(self.labels):
            if trig == "const":
                out[:, k] = 1.0 / np.sqrt(self.manifold.volume)
            else:
                f = np.cos if trig == "cos" else np.sin
                out[:, k] = amp * f(theta[:, k])
        return out

    def gradients(self, P):
        theta, freq = self._phase(P)
        amp = np.sqrt(2.0 / self.manifold.volume)
        out = np.zeros((theta.shape[0], theta.shape[1], self.manifold.dim))
        for k, (_, trig) in enumerate(self.labels):
            if trig == "const":
                continue
            d = (-np.sin(theta[:, k]) if trig == "cos" else np.cos(theta[:, k]))
            out[:, k, :] = amp * d[:, None] * freq[k][None, :]
        return out

    def sup_norms(self):
        V = self.manifold.volume
        return np.array([1.0 / np.sqrt(V) if trig == "const"
                         else np.sqrt(2.0 / V) for _, trig in self.labels])

    def grad_sup_norms(self):
        V = self.manifold.volume
        out = []
        for m, trig in self.labels:
            if trig == "const":
                out.append(0.0)
            else:
                out.append(np.sqrt(2.0 / V) * np.linalg.norm(
                    2 * np.pi * np.asarray(m, float) / self.manifold.periods))
        return np.array(out)


class Sphere(AnalyticManifold):
    """Round sphere of radius R in R^3; points are ambient (m, 3) vectors."""

    kind = "sphere"

    def __init__(self, radius, samples=2000):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.dim = 2
        self.volume = 4 * np.pi * radius ** 2
        self.samples = samples

    def diameter(self):
        return np.pi * self.radius

    def sample_points(self, m=None):
        m = m or self.samples
        # Fibonacci sphere, deterministic and nearly uniform
        i = np.arange(m) + 0.5
        phi = np.pi * (1 + np.sqrt(5.0)) * i
        z = 1 - 2 * i / m
        r = np.sqrt(1 - z ** 2)
        return self.radius * np.column_stack([r * np.cos(phi),
                                              r * np.sin(phi), z])

    def distance_between(self, P, Q):
        P, Q = np.atleast_2d(P), np.atleast_2d(Q)
        cosang = (P @ Q.T) / self.radius ** 2
        return self.radius * np.arccos(np.clip(cosang, -1.0, 1.0))

    def tangent_frame(self, p):
        p = np.asarray(p, dtype=float).ravel()
        n = p / np.linalg.norm(p)
        h = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(h, n)
        e1 /= np.linalg.norm(e1)
        return np.vstack([e1, np.cross(n, e1)])

    def exp(self, p, v):
        P, V = np.atleast_2d(p).astype(float), np.atleast_2d(v).astype(float)
        out = np.empty_like(P)
        for i in range(len(P)):
            n = P[i] / np.linalg.norm(P[i])
            vt = V[i] - n * (n @ V[i])  # project to the true tangent plane
            nv = np.linalg.norm(vt)
            if nv == 0:
                out[i] = P[i]
                continue
            ang = nv / self.radius
            out[i] = np.cos(ang) * P[i] + np.sin(ang) * self.radius * vt / nv
        return out

    def mesh_points(self, mesh):
        v = mesh.vertices
        return self.radius * v / np.linalg.norm(v, axis=1, keepdims=True)

    def eigenbasis(self, count):
        lams, labels = [], []
        ell = 0
        while len(lams) < count:
            lam = ell * (ell + 1) / self.radius ** 2
            for m in range(-ell, ell + 1):
                lams.append(lam)
                labels.append((ell, m))
            ell += 1
        return _SphereBasis(self, np.array(lams[:count]), labels[:count])


class _SphereBasis:
    """Real spherical harmonics, unit L2 norm on the radius-R sphere."""

    def __init__(self, sphere, lams, labels):
        self.manifold = sphere
        self.eigenvalues = lams
        self.labels = labels

    def _angles(self, P):
        X = np.atleast_2d(P) / self.manifold.radius
        theta = np.arccos(np.clip(X[:, 2], -1.0, 1.0))
        phi = np.arctan2(X[:, 1], X[:, 0])
        return theta, phi

    @staticmethod
    def _real_parts(ell, m, theta, phi, diff=False):
        out = scipy.special.sph_harm_y(ell, abs(m), theta, phi,
                                       diff_n=1 if diff else 0)
        if diff:
            y, dy = out[0], out[1]
            dth, dph = dy[..., 0], dy[..., 1]
        else:
            y = out
            dth = dph = None
        s = np.sqrt(2.0) * (-1.0) ** abs(m)
        if m == 0:
            pick = np.real
            s = 1.0
        elif m > 0:
            pick = np.real
        else:
            pick = np.imag
        if diff:
            return s * pick(y), s * pick(dth), s * pick(dph)
        return s * pick(y)

    def values(self, P):
        theta, phi = self._angles(P)
        R = self.manifold.radius
        out = np.empty((len(theta), len(self.labels)))
        for k, (ell, m) in enumerate(self.labels):
            out[:, k] = self._real_parts(ell, m, theta, phi) / R
        return out

    def gradients(self, P):
        theta, phi = self._angles(P)
        R = self.manifold.radius
        sin_t = np.maximum(np.sin(theta), 1e-12)
        theta_hat = np.column_stack([np.cos(theta) * np.cos(phi),
                                     np.cos(theta) * np.sin(phi),
                                     -np.sin(theta)])
        phi_hat = np.column_stack([-np.sin(phi), np.cos(phi),
                                   np.zeros_like(phi)])
        out = np.zeros((len(theta), len(self.labels), 3))
        for k, (ell, m) in enumerate(self.labels):
            if ell == 0:
                continue
            _, dth, dph = self._real_parts(ell, m, theta, phi, diff=True)
            out[:, k, :] = (dth[:, None] * theta_hat
                            + (dph / sin_t)[:, None] * phi_hat) / R ** 2
        return out

    def sup_norms(self):
        vals = self.values(self.manifold.sample_points())
        return np.abs(vals).max(axis=0)

    def grad_sup_norms(self):
        grads = self.gradients(self.manifold.sample_points())
        return np.linalg.norm(grads, axis=2).max(axis=0)


def make_analytic(kind, **params):
    """Closed-form backend by name: circle(length), sphere(radius), torus(periods)."""
    if kind == "circle":
        return Circle(params["length"])
    if kind == "sphere":
        return Sphere(params["radius"])
    if kind == "torus":
        return FlatTorus(params["periods"])
    raise ValueError(f"unknown analytic manifold kind {kind!r}")


def geodesic_distance(manifold, source, method="graph"):
    """Distance field from a source point.

    For meshes the field is over all vertices (Dijkstra on the shortcut
    graph, or exact reference geometry with ``method='exact'``).  Analytic
    backends return exact distances over their canonical sample.
    """
    if isinstance(manifold, TriMesh):
        return manifold.distance_from(source, method=method)
    return manifold.distance_from(source)


def export_distance_field(field, path):
    with open(path, "w") as fh:
        fh.write("vertex,distance\n")
        for i, d in enumerate(field):
            fh.write(f"{i},{float(d)!r}\n")


# ---------------------------------------------------------------------------
# Laplace-Beltrami assembly
# ---------------------------------------------------------------------------

class OperatorPair:
    """Stiffness/mass pair discretizing the (negative) Laplace-Beltrami operator.

    stiffness is symmetric positive semidefinite with zero row sums
    (constants are harmonic); mass is diagonal with the lumped vertex areas.
    """

    def __init__(self, stiffness, mass):
        self.stiffness = stiffness.tocsr()
        self.mass = mass.tocsr()


def assemble_laplacian(mesh, aspect_warn=1e4):
    """Cotangent stiffness + lumped barycentric mass for a TriMesh."""
    e1, e2 = mesh.corner_vectors()
    corners = np.stack([np.zeros_like(e1), e1, e2], axis=1)  # (F, 3, 3)
    areas = mesh.face_areas

    edge_len = np.stack([
        np.linalg.norm(corners[:, 2] - corners[:, 1], axis=1),
        np.linalg.norm(corners[:, 2] - corners[:, 0], axis=1),
        np.linalg.norm(corners[:, 1] - corners[:, 0], axis=1)], axis=1)
    aspect = edge_len.max(axis=1) ** 2 / (2 * areas)
    for idx in np.nonzero(aspect > aspect_warn)[0]:
        warnings.warn(f"triangle {idx} is numerically degenerate "
                      f"(aspect {aspect[idx]:.2e})", RuntimeWarning)

    nv = len(mesh.vertices)
    rows, cols, vals = [], [], []
    for c in range(3):
        i = mesh.faces[:, (c + 1) % 3]
        j = mesh.faces[:, (c + 2) % 3]
        u = corners[:, (c + 1) % 3] - corners[:, c]
        v = corners[:, (c + 2) % 3] - corners[:, c]
        # cot of the angle at corner c, opposite edge (i, j)
        cot = np.sum(u * v, axis=1) / (2 * areas)
        w = 0.5 * cot
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    stiffness = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv))
    mass = sparse.diags(mesh.masses).tocsr()
    return OperatorPair(stiffness, mass)
