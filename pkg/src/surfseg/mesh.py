"""Triangulated surface meshes with per-face images and point queries.

The mesh is static throughout a run: curves move over it, the mesh
itself never changes. Construction validates manifoldness and
orientation once, builds face adjacency, and precomputes the quantities
every later query needs (normals, areas, centers, bounding box).

Point queries come in two flavors:

* :meth:`SurfaceMesh.locate_point` finds the face whose plane-projection
  of a near-surface point lies inside it.
* :meth:`SurfaceMesh.project_to_surface` returns the closest point on
  the surface, clamping to edges and vertices where needed.

Both accept a hint face and then search breadth-first over face
neighbors, which keeps the cost constant for the solver's node-tracking
use where points move a small distance per step. Batch variants
(:meth:`locate_points` / :meth:`project_points`) process a whole curve
of hinted queries in a few vectorized passes and fall back to the
scalar walk for the rare nodes that moved beyond the cached
neighborhood.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MeshFormatError, MeshTopologyError, PointNotFoundError

__all__ = ["SurfaceMesh", "MeshLocation", "FaceImage", "load_mesh", "save_mesh"]

# Barycentric slack for "inside a face": slightly negative coordinates
# are accepted so points on shared edges belong to both faces.
_BARY_EPS = 1e-10

# Hinted walks give up after visiting this many faces.
_WALK_LIMIT = 10000


@dataclass
class MeshLocation:
    """A point expressed on a specific face.

    Attributes
    ----------
    face : int
        Face index.
    barycentric : ndarray, shape (3,)
        Nonnegative coordinates summing to 1 in the order of the face's
        vertex triple.
    point : ndarray, shape (3,)
        World coordinates of the located point.
    """

    face: int
    barycentric: np.ndarray
    point: np.ndarray


class SurfaceMesh:
    """An oriented triangulated surface.

    Parameters
    ----------
    vertices : array_like, shape (nv, 3)
    faces : array_like, shape (nf, 3)
        Vertex index triples, consistently oriented.
    allow_open : bool
        Accept boundary edges. Only flat test meshes should set this;
        closed surfaces are the normal case and are validated as such.

    Raises
    ------
    MeshTopologyError
        On non-manifold edges, inconsistent orientation, degenerate
        faces, or boundary edges when ``allow_open`` is false.
    """

    def __init__(self, vertices, faces, allow_open: bool = False):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshFormatError("vertices must be an (nv, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshFormatError("faces must be an (nf, 3) array")
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise MeshFormatError("face vertex index out of range")
        self.allow_open = bool(allow_open)

        self.bbox_min = self.vertices.min(axis=0)
        self.bbox_max = self.vertices.max(axis=0)
        self.bbox_diag = float(np.linalg.norm(self.bbox_max - self.bbox_min))

        self._build_geometry()
        self._build_adjacency()
        self._rings = {}

    # ------------------------------------------------------------------
    # construction

    def _build_geometry(self):
        v = self.vertices
        f = self.faces
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        cross = np.cross(b - a, c - a)
        norms = np.linalg.norm(cross, axis=1)
        area_floor = 1e-14 * max(self.bbox_diag, 1.0) ** 2
        bad = np.nonzero(norms / 2.0 <= area_floor)[0]
        if bad.size:
            raise MeshTopologyError(
                f"degenerate face(s) with vanishing area: indices {bad[:8].tolist()}")
        self.face_normals = cross / norms[:, None]
        self.face_areas = norms / 2.0
        self.face_centers = (a + b + c) / 3.0
        # circumradius = product of edge lengths / (4 * area)
        la = np.linalg.norm(b - c, axis=1)
        lb = np.linalg.norm(c - a, axis=1)
        lc = np.linalg.norm(a - b, axis=1)
        self.face_circumradii = la * lb * lc / (4.0 * self.face_areas)

    def _build_adjacency(self):
        nf = len(self.faces)
        edge_map = {}
        for fi in range(nf):
            tri = self.faces[fi]
            if tri[0] == tri[1] or tri[1] == tri[2] or tri[0] == tri[2]:
                raise MeshTopologyError(f"face {fi} repeats a vertex")
            for k in range(3):
                u, w = int(tri[k]), int(tri[(k + 1) % 3])
                edge_map.setdefault((min(u, w), max(u, w)), []).append((fi, k, u < w))

        self.face_neighbors = np.full((nf, 3), -1, dtype=np.int64)
        boundary = 0
        for edge, uses in edge_map.items():
            if len(uses) > 2:
                raise MeshTopologyError(
                    f"non-manifold edge {edge} shared by {len(uses)} faces")
            if len(uses) == 1:
                boundary += 1
                continue
            (f1, k1, d1), (f2, k2, d2) = uses
            if d1 == d2:
                raise MeshTopologyError(
                    f"inconsistent orientation across edge {edge} "
                    f"(faces {f1} and {f2})")
            self.face_neighbors[f1, k1] = f2
            self.face_neighbors[f2, k2] = f1
        if boundary and not self.allow_open:
            raise MeshTopologyError(
                f"mesh has {boundary} boundary edge(s); pass allow_open=True "
                "only for flat test meshes")
        self.is_closed = boundary == 0

        vertex_faces = [[] for _ in range(len(self.vertices))]
        for fi, tri in enumerate(self.faces):
            for vi in tri:
                vertex_faces[vi].append(fi)
        self.vertex_faces = vertex_faces

        # average incident edge length per vertex; used for default
        # detection scales of the topology grid
        acc = np.zeros(len(self.vertices))
        cnt = np.zeros(len(self.vertices))
        for (u, w) in edge_map:
            l = np.linalg.norm(self.vertices[u] - self.vertices[w])
            acc[u] += l
            acc[w] += l
            cnt[u] += 1
            cnt[w] += 1
        with np.errstate(invalid="ignore"):
            self.vertex_avg_edge = np.where(cnt > 0, acc / np.maximum(cnt, 1), 0.0)
        self.mean_edge_length = float(acc.sum() / max(cnt.sum(), 1))

    # ------------------------------------------------------------------
    # basic accessors

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_normal(self, face: int) -> np.ndarray:
        """Unit outward normal of one face."""
        return self.face_normals[face]

    def euler_characteristic(self) -> int:
        edges = 3 * len(self.faces)
        if self.is_closed:
            edges //= 2
        else:
            interior = int((self.face_neighbors >= 0).sum()) // 2
            edges = interior + (3 * len(self.faces) - 2 * interior)
        return len(self.vertices) - edges + len(self.faces)

    def default_band(self) -> float:
        """Default distance band for point queries."""
        return 0.05 * self.bbox_diag

    # ------------------------------------------------------------------
    # per-face triangle math, vectorized over aligned (point, face) rows

    def _plane_projection(self, points, face_idx):
        """Project each point onto its face's plane.

        ``points`` is (k, 3) aligned with ``face_idx`` (k,), or a
        single point tested against every listed face. Returns
        (unsigned plane distances, barycentric (k, 3) of projections).
        """
        points = np.asarray(points, dtype=np.float64)
        f = self.faces[face_idx]
        a = self.vertices[f[:, 0]]
        b = self.vertices[f[:, 1]]
        c = self.vertices[f[:, 2]]
        n = self.face_normals[face_idx]
        p = points if points.ndim == 2 else points[None, :]
        off = np.einsum("ij,ij->i", p - a, n)
        proj = p - off[:, None] * n
        v0 = b - a
        v1 = c - a
        v2 = proj - a
        d00 = np.einsum("ij,ij->i", v0, v0)
        d01 = np.einsum("ij,ij->i", v0, v1)
        d11 = np.einsum("ij,ij->i", v1, v1)
        d20 = np.einsum("ij,ij->i", v2, v0)
        d21 = np.einsum("ij,ij->i", v2, v1)
        denom = d00 * d11 - d01 * d01
        beta = (d11 * d20 - d01 * d21) / denom
        gamma = (d00 * d21 - d01 * d20) / denom
        alpha = 1.0 - beta - gamma
        return np.abs(off), np.stack([alpha, beta, gamma], axis=1)

    def _closest_on_faces(self, points, face_idx):
        """Closest point on each face (edge/vertex clamped).

        ``points`` as in :meth:`_plane_projection`. Returns
        (distances, closest points (k, 3)).
        """
        points = np.asarray(points, dtype=np.float64)
        f = self.faces[face_idx]
        a = self.vertices[f[:, 0]]
        b = self.vertices[f[:, 1]]
        c = self.vertices[f[:, 2]]
        p = points if points.ndim == 2 else points[None, :]
        ab = b - a
        ac = c - a
        ap = p - a
        d1 = np.einsum("ij,ij->i", ab, ap)
        d2 = np.einsum("ij,ij->i", ac, ap)
        bp = p - b
        d3 = np.einsum("ij,ij->i", ab, bp)
        d4 = np.einsum("ij,ij->i", ac, bp)
        cp = p - c
        d5 = np.einsum("ij,ij->i", ab, cp)
        d6 = np.einsum("ij,ij->i", ac, cp)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2

        out = np.empty_like(a)
        done = np.zeros(len(a), dtype=bool)

        def settle(mask, pts):
            todo = mask & ~done
            if todo.any():
                out[todo] = pts[todo]
                done[todo] = True

        def safe(x):
            return np.where(x == 0.0, 1.0, x)

        settle((d1 <= 0) & (d2 <= 0), a)
        settle((d3 >= 0) & (d4 <= d3), b)
        settle((d6 >= 0) & (d5 <= d6), c)
        t_ab = d1 / safe(d1 - d3)
        settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[:, None] * ab)
        t_ac = d2 / safe(d2 - d6)
        settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t_ac[:, None] * ac)
        t_bc = (d4 - d3) / safe((d4 - d3) + (d5 - d6))
        settle((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
               b + t_bc[:, None] * (c - b))
        denom = safe(va + vb + vc)
        settle(np.ones(len(a), dtype=bool),
               a + (vb / denom)[:, None] * ab + (vc / denom)[:, None] * ac)
        dist = np.linalg.norm(p - out, axis=1)
        return dist, out

    def _barycentric_of_point(self, face: int, point):
        """Barycentric coordinates of a point known to lie on a face."""
        fa, fb, fc = self.faces[face]
        a = self.vertices[fa]
        v0 = self.vertices[fb] - a
        v1 = self.vertices[fc] - a
        v2 = point - a
        d00 = v0 @ v0
        d01 = v0 @ v1
        d11 = v1 @ v1
        denom = d00 * d11 - d01 * d01
        beta = (d11 * (v2 @ v0) - d01 * (v2 @ v1)) / denom
        gamma = (d00 * (v2 @ v1) - d01 * (v2 @ v0)) / denom
        bary = np.array([1.0 - beta - gamma, beta, gamma])
        bary = np.maximum(bary, 0.0)
        return bary / bary.sum()

    # ------------------------------------------------------------------
    # breadth-first face walks

    def _bfs_rings(self, hint: int):
        """Yield sorted face-index arrays ring by ring, starting at hint."""
        visited = {int(hint)}
        ring = [int(hint)]
        count = 0
        while ring and count < _WALK_LIMIT:
            ring = sorted(ring)
            count += len(ring)
            yield np.asarray(ring, dtype=np.int64)
            nxt = set()
            for fi in ring:
                for nb in self.face_neighbors[fi]:
                    if nb >= 0 and nb not in visited:
                        visited.add(int(nb))
                        nxt.add(int(nb))
            ring = list(nxt)

    def _ring_neighborhood(self, face: int):
        """Cached faces within two neighbor levels of a face.

        Returns (faces array ordered ring by ring, start of ring 1,
        start of ring 2).
        """
        entry = self._rings.get(face)
        if entry is None:
            nb = self.face_neighbors
            r1 = sorted({int(x) for x in nb[face] if x >= 0})
            seen = set(r1)
            seen.add(face)
            r2 = sorted({int(y) for f1 in r1 for y in nb[f1]
                         if y >= 0 and int(y) not in seen})
            arr = np.array([face] + r1 + r2, dtype=np.int64)
            entry = (arr, 1, 1 + len(r1))
            self._rings[face] = entry
        return entry

    # ------------------------------------------------------------------
    # point queries

    def locate_point(self, p, hint=None, band=None) -> MeshLocation:
        """Find the face whose plane-projection of ``p`` lies inside it.

        Parameters
        ----------
        p : array_like, shape (3,)
            Point within ``band`` of the surface.
        hint : int, optional
            Face to start a breadth-first walk from. Without a hint all
            faces are scanned.
        band : float, optional
            Maximum plane distance accepted; defaults to 5 percent of
            the bounding-box diagonal.

        Returns
        -------
        MeshLocation

        Raises
        ------
        PointNotFoundError
            If no face within the band contains the projection, or the
            walk breadth limit is exhausted.

        Notes
        -----
        The walk inspects faces ring by ring; the first ring with a hit
        decides, smallest plane distance first, exact ties (a point on
        a shared edge) resolving to the lowest face index.
        """
        p = np.asarray(p, dtype=np.float64)
        if band is None:
            band = self.default_band()

        if hint is None:
            all_idx = np.arange(len(self.faces))
            dist, bary = self._plane_projection(p, all_idx)
            inside = np.all(bary >= -_BARY_EPS, axis=1) & (dist <= band)
            if not inside.any():
                raise PointNotFoundError(
                    f"point {p.tolist()} is not over any face within band {band:.4g}")
            cand = np.nonzero(inside)[0]
            best = cand[np.argmin(dist[cand])]
            return self._finish_locate(int(best), p)

        faces, b1, b2 = self._ring_neighborhood(int(hint))
        dist, bary = self._plane_projection(p, faces)
        inside = np.all(bary >= -_BARY_EPS, axis=1) & (dist <= band)
        for lo, hi in ((0, b1), (b1, b2), (b2, len(faces))):
            seg = inside[lo:hi]
            if seg.any():
                cand = np.nonzero(seg)[0] + lo
                best = faces[cand[np.argmin(dist[cand])]]
                return self._finish_locate(int(best), p)

        for ridx, ring in enumerate(self._bfs_rings(int(hint))):
            if ridx < 3:
                continue
            dist, bary = self._plane_projection(p, ring)
            ok = np.all(bary >= -_BARY_EPS, axis=1) & (dist <= band)
            if ok.any():
                cand = np.nonzero(ok)[0]
                best = ring[cand[np.argmin(dist[cand])]]
                return self._finish_locate(int(best), p)
        raise PointNotFoundError(
            f"hinted walk from face {hint} found no face containing "
            f"{p.tolist()} within {_WALK_LIMIT} faces")

    def _finish_locate(self, face: int, p):
        n = self.face_normals[face]
        a = self.vertices[self.faces[face][0]]
        proj = p - ((p - a) @ n) * n
        bary = self._barycentric_of_point(face, proj)
        return MeshLocation(face=face, barycentric=bary, point=proj)

    def locate_points(self, points, hints, band=None):
        """Batched :meth:`locate_point` with per-point hints.

        Returns (faces (m,), projected points (m, 3)). Points whose
        containing face is not within two rings of the hint fall back
        to the scalar walk.
        """
        points = np.asarray(points, dtype=np.float64)
        hints = np.asarray(hints, dtype=np.int64)
        if band is None:
            band = self.default_band()
        m = len(points)
        faces_out = np.full(m, -1, dtype=np.int64)
        pts_out = np.empty((m, 3))

        cand_faces = []
        offsets = np.zeros(m + 1, dtype=np.int64)
        bounds = []
        for i in range(m):
            arr, b1, b2 = self._ring_neighborhood(int(hints[i]))
            cand_faces.append(arr)
            bounds.append((b1, b2))
            offsets[i + 1] = offsets[i] + len(arr)
        flat_faces = np.concatenate(cand_faces)
        flat_points = np.repeat(points, np.diff(offsets), axis=0)
        dist, bary = self._plane_projection(flat_points, flat_faces)
        inside = np.all(bary >= -_BARY_EPS, axis=1) & (dist <= band)

        for i in range(m):
            lo, hi = offsets[i], offsets[i + 1]
            b1, b2 = bounds[i]
            found = -1
            for s0, s1 in ((lo, lo + b1), (lo + b1, lo + b2), (lo + b2, hi)):
                seg = inside[s0:s1]
                if seg.any():
                    cand = np.nonzero(seg)[0] + s0
                    found = int(flat_faces[cand[np.argmin(dist[cand])]])
                    break
            if found >= 0:
                faces_out[i] = found
                n = self.face_normals[found]
                a = self.vertices[self.faces[found][0]]
                pts_out[i] = points[i] - ((points[i] - a) @ n) * n
            else:
                loc = self.locate_point(points[i], hint=int(hints[i]), band=band)
                faces_out[i] = loc.face
                pts_out[i] = loc.point
        return faces_out, pts_out

    @staticmethod
    def _argmin_face(dist, faces):
        """Index of the smallest distance; exact ties resolve to the
        lowest face index so hinted, global and batched searches agree."""
        return int(np.lexsort((faces, dist))[0])

    def project_to_surface(self, p, hint=None, band=None) -> MeshLocation:
        """Closest point on the surface, clamped to edges and vertices.

        With a hint the search covers the cached two-ring neighborhood
        and keeps expanding breadth-first while the best candidate sits
        on the search frontier, which is robust for points that moved a
        small fraction of the mesh size. Without a hint every face is
        scanned. Exact distance ties (a closest point on a shared edge
        or vertex) resolve to the lowest face index among the faces the
        search examined.

        Raises
        ------
        PointNotFoundError
            If the closest point found is farther than ``band``.
        """
        p = np.asarray(p, dtype=np.float64)
        if band is None:
            band = self.default_band()

        if hint is None:
            all_idx = np.arange(len(self.faces))
            dist, pts = self._closest_on_faces(p, all_idx)
            best = self._argmin_face(dist, all_idx)
            best_d, best_pt = float(dist[best]), pts[best]
        else:
            faces, b1, b2 = self._ring_neighborhood(int(hint))
            dist, pts = self._closest_on_faces(p, faces)
            k = self._argmin_face(dist, faces)
            best, best_d, best_pt = int(faces[k]), float(dist[k]), pts[k]
            if k >= b1:
                best_ring = 1 if k < b2 else 2
                best, best_d, best_pt = self._project_walk(
                    p, int(hint), best, best_d, best_pt, best_ring)

        if best_d > band:
            raise PointNotFoundError(
                f"closest surface point is {best_d:.4g} away, beyond band {band:.4g}")
        bary = self._barycentric_of_point(best, best_pt)
        return MeshLocation(face=best, barycentric=bary, point=np.asarray(best_pt))

    def _project_walk(self, p, hint: int, best: int, best_d: float,
                      best_pt, best_ring: int):
        """Continue the expanding search past the cached neighborhood.

        The cached two-ring phase already covered rings 0 to 2; the
        walk keeps scanning while the best face lies within two rings
        of the search frontier, which reproduces a plain ring-by-ring
        search with strict-improvement updates.
        """
        for ridx, ring in enumerate(self._bfs_rings(hint)):
            if ridx < 3:
                continue
            if ridx > best_ring + 2:
                break
            dist, pts = self._closest_on_faces(p, ring)
            k = self._argmin_face(dist, ring)
            if dist[k] < best_d or (dist[k] == best_d and int(ring[k]) < best):
                best = int(ring[k])
                best_d = float(dist[k])
                best_pt = pts[k]
                best_ring = ridx
        return best, best_d, best_pt

    def project_points(self, points, hints, band=None):
        """Batched :meth:`project_to_surface` with per-point hints.

        Returns (faces (m,), surface points (m, 3)). A point whose
        best candidate lies on the rim of the cached neighborhood is
        re-run through the expanding scalar walk.
        """
        points = np.asarray(points, dtype=np.float64)
        hints = np.asarray(hints, dtype=np.int64)
        if band is None:
            band = self.default_band()
        m = len(points)
        faces_out = np.empty(m, dtype=np.int64)
        pts_out = np.empty((m, 3))

        cand_faces = []
        offsets = np.zeros(m + 1, dtype=np.int64)
        bounds = []
        for i in range(m):
            arr, b1, b2 = self._ring_neighborhood(int(hints[i]))
            cand_faces.append(arr)
            bounds.append((b1, b2))
            offsets[i + 1] = offsets[i] + len(arr)
        flat_faces = np.concatenate(cand_faces)
        flat_points = np.repeat(points, np.diff(offsets), axis=0)
        dist, pts = self._closest_on_faces(flat_points, flat_faces)

        for i in range(m):
            lo, hi = offsets[i], offsets[i + 1]
            k = lo + self._argmin_face(dist[lo:hi], flat_faces[lo:hi])
            best, best_d, best_pt = int(flat_faces[k]), float(dist[k]), pts[k]
            b1, b2 = bounds[i]
            if k - lo >= b1:
                ring = 1 if k - lo < b2 else 2
                best, best_d, best_pt = self._project_walk(
                    points[i], int(hints[i]), best, best_d, best_pt, ring)
            if best_d > band:
                raise PointNotFoundError(
                    f"closest surface point is {best_d:.4g} away, "
                    f"beyond band {band:.4g}")
            faces_out[i] = best
            pts_out[i] = best_pt
        return faces_out, pts_out

    # ------------------------------------------------------------------
    # output

    def save(self, path, image=None):
        save_mesh(path, self, image)


class FaceImage:
    """Piecewise-constant image on mesh faces.

    Values are stored as an (nf, channels) float array with channels 1
    (gray) or 3 (RGB), each entry in [0, 1]. On construction values are
    snapped to a dyadic grid of spacing 2**-24. The snap is visually
    lossless (error below 6e-8) and makes every region sum exact in
    double precision, so incrementally maintained statistics match a
    batch rescan bit for bit.
    """

    QUANT = float(2 ** 24)

    def __init__(self, values, quantize: bool = True):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[1] not in (1, 3):
            raise ValueError("image must have 1 or 3 channels")
        if arr.size and (arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9):
            raise ValueError("image values must lie in [0, 1]")
        arr = np.clip(arr, 0.0, 1.0)
        if quantize:
            arr = np.round(arr * self.QUANT) / self.QUANT
        self.values = arr
        self._brightness = None
        self._chroma = None
        self._vertex_vals = None
        self._vertex_mesh = None

    @property
    def num_faces(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def value(self, face: int) -> np.ndarray:
        return self.values[face]

    def brightness(self) -> np.ndarray:
        """Per-face Euclidean norm of the color vector, dyadically snapped."""
        if self._brightness is None:
            b = np.linalg.norm(self.values, axis=1)
            self._brightness = np.round(b * self.QUANT) / self.QUANT
        return self._brightness

    def chroma(self) -> np.ndarray:
        """Per-face normalized color; zero where brightness vanishes."""
        if self._chroma is None:
            b = np.linalg.norm(self.values, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                v = np.where(b[:, None] > 0,
                             self.values / np.maximum(b, 1e-300)[:, None], 0.0)
            self._chroma = np.round(v * self.QUANT) / self.QUANT
        return self._chroma

    def vertex_values(self, mesh) -> np.ndarray:
        """Per-vertex area-weighted averages of the incident face values.

        This is the continuous piecewise-linear representative of the
        face image, used wherever the image must be evaluated at a
        point rather than integrated over faces.
        """
        if self._vertex_vals is None or self._vertex_mesh is not mesh:
            w = mesh.face_areas
            acc = np.zeros((len(mesh.vertices), self.channels))
            wsum = np.zeros(len(mesh.vertices))
            for k in range(3):
                np.add.at(acc, mesh.faces[:, k], self.values * w[:, None])
                np.add.at(wsum, mesh.faces[:, k], w)
            self._vertex_vals = acc / np.maximum(wsum, 1e-300)[:, None]
            self._vertex_mesh = mesh
        return self._vertex_vals

    def sample(self, mesh, faces, points) -> np.ndarray:
        """Pointwise image values at surface points.

        Evaluates the piecewise-linear vertex-averaged field by
        barycentric interpolation within each point's containing face.
        A face-constant lookup is discontinuous across edges, which
        turns any position feedback built on it into a bang-bang
        oscillator around a data jump; the interpolated field crosses
        the jump continuously.
        """
        vv = self.vertex_values(mesh)
        tri = mesh.faces[np.asarray(faces, dtype=np.int64)]
        pa = mesh.vertices[tri[:, 0]]
        v0 = mesh.vertices[tri[:, 1]] - pa
        v1 = mesh.vertices[tri[:, 2]] - pa
        v2 = np.asarray(points, dtype=np.float64) - pa
        d00 = np.einsum("ij,ij->i", v0, v0)
        d01 = np.einsum("ij,ij->i", v0, v1)
        d11 = np.einsum("ij,ij->i", v1, v1)
        d20 = np.einsum("ij,ij->i", v2, v0)
        d21 = np.einsum("ij,ij->i", v2, v1)
        denom = np.maximum(d00 * d11 - d01 * d01, 1e-300)
        b1 = (d11 * d20 - d01 * d21) / denom
        b2 = (d00 * d21 - d01 * d20) / denom
        bary = np.stack([1.0 - b1 - b2, b1, b2], axis=1)
        bary = np.clip(bary, 0.0, 1.0)
        bary /= np.maximum(bary.sum(axis=1), 1e-300)[:, None]
        return np.einsum("nk,nkc->nc", bary, vv[tri])


# ----------------------------------------------------------------------
# file formats: ASCII OFF and ASCII PLY


def load_mesh(path, allow_open: bool = False, default_channels=None):
    """Load a mesh (and per-face image, if present) from OFF or PLY.

    The format is chosen by file extension (.off / .ply). OFF face rows
    may carry 1, 3 or 4 trailing color values; all-integer colors are
    interpreted on the 0-255 scale, values with decimal points as
    floats in [0, 1]. PLY colors are uchar 0-255, per face or per
    vertex (per-vertex colors are averaged onto faces).

    Returns
    -------
    (SurfaceMesh, FaceImage or None)

    Raises
    ------
    MeshFormatError
        On parse failure. When the file carries no colors the image is
        ``None`` unless ``default_channels`` is given, in which case a
        constant 0.5 image with that many channels is returned.
    """
    path = str(path)
    if path.lower().endswith(".off"):
        verts, faces, colors = _parse_off(path)
    elif path.lower().endswith(".ply"):
        verts, faces, colors = _parse_ply(path)
    else:
        raise MeshFormatError(f"unknown mesh extension: {path}")
    mesh = SurfaceMesh(verts, faces, allow_open=allow_open)
    if colors is not None:
        image = FaceImage(colors)
    elif default_channels is not None:
        image = FaceImage(np.full((len(faces), int(default_channels)), 0.5))
    else:
        image = None
    return mesh, image


def _parse_off(path):
    with open(path, "r") as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.append(line.split())
    if not tokens or tokens[0][0] != "OFF":
        raise MeshFormatError(f"{path}: missing OFF header")
    rows = tokens[1:] if tokens[0] == ["OFF"] else [tokens[0][1:]] + tokens[1:]
    if not rows:
        raise MeshFormatError(f"{path}: truncated OFF file")
    try:
        nv, nf = int(rows[0][0]), int(rows[0][1])
    except (ValueError, IndexError) as exc:
        raise MeshFormatError(f"{path}: bad OFF count line") from exc
    if len(rows) < 1 + nv + nf:
        raise MeshFormatError(f"{path}: OFF file shorter than declared counts")
    try:
        verts = np.array([[float(x) for x in rows[1 + i][:3]] for i in range(nv)])
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad vertex row") from exc

    faces = np.empty((nf, 3), dtype=np.int64)
    color_rows = []
    for i in range(nf):
        row = rows[1 + nv + i]
        try:
            k = int(row[0])
            if k != 3:
                raise MeshFormatError(
                    f"{path}: face {i} has {k} vertices; only triangles are supported")
            faces[i] = [int(row[1]), int(row[2]), int(row[3])]
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"{path}: bad face row {i}") from exc
        color_rows.append(row[4:])

    lens = {len(c) for c in color_rows}
    if lens == {0}:
        return verts, faces, None
    if len(lens) != 1 or lens.pop() not in (1, 3, 4):
        raise MeshFormatError(
            f"{path}: face colors must be uniformly absent or 1/3/4 values per face")
    width = len(color_rows[0])
    use = min(width, 3)
    all_int = all("." not in tok and "e" not in tok.lower()
                  for c in color_rows for tok in c[:use])
    try:
        colors = np.array([[float(tok) for tok in c[:use]] for c in color_rows])
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad color value") from exc
    if all_int:
        colors = colors / 255.0
    return verts, faces, colors


def _parse_ply(path):
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError(f"{path}: missing ply header")

    elements = []  # (name, count, [(type, name) or ('list', counttype, type, name)])
    i = 1
    fmt_seen = False
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshFormatError(f"{path}: only ascii PLY is supported")
            fmt_seen = True
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append((parts[1], parts[2]))
        elif parts[0] == "end_header":
            break
    else:
        raise MeshFormatError(f"{path}: unterminated header")
    if not fmt_seen:
        raise MeshFormatError(f"{path}: missing format line")

    body = [ln.split() for ln in lines[i:] if ln.strip()]
    cursor = 0
    verts = None
    vert_colors = None
    faces = None
    face_colors = None
    for name, count, props in elements:
        rows = body[cursor:cursor + count]
        if len(rows) < count:
            raise MeshFormatError(f"{path}: element {name} truncated")
        cursor += count
        if name == "vertex":
            names = [p[-1] for p in props]
            try:
                xi, yi, zi = names.index("x"), names.index("y"), names.index("z")
                verts = np.array([[float(r[xi]), float(r[yi]), float(r[zi])]
                                  for r in rows])
            except (ValueError, IndexError) as exc:
                raise MeshFormatError(f"{path}: vertex element lacks x/y/z") from exc
            if {"red", "green", "blue"} <= set(names):
                ri, gi, bi = (names.index(n) for n in ("red", "green", "blue"))
                vert_colors = np.array(
                    [[float(r[ri]), float(r[gi]), float(r[bi])] for r in rows]) / 255.0
        elif name == "face":
            faces = np.empty((count, 3), dtype=np.int64)
            face_color_list = []
            scalar_names = [p[-1] for p in props if p[0] != "list"]
            has_face_color = {"red", "green", "blue"} <= set(scalar_names)
            for r_i, row in enumerate(rows):
                pos = 0
                color = []
                for p in props:
                    if p[0] == "list":
                        k = int(row[pos])
                        if p[3] in ("vertex_indices", "vertex_index"):
                            if k != 3:
                                raise MeshFormatError(
                                    f"{path}: face {r_i} has {k} vertices; "
                                    "only triangles are supported")
                            faces[r_i] = [int(row[pos + 1]), int(row[pos + 2]),
                                          int(row[pos + 3])]
                        pos += 1 + k
                    else:
                        if p[1] in ("red", "green", "blue"):
                            color.append(float(row[pos]))
                        pos += 1
                if has_face_color:
                    face_color_list.append(color)
            if has_face_color:
                face_colors = np.array(face_color_list) / 255.0
    if verts is None or faces is None:
        raise MeshFormatError(f"{path}: PLY must contain vertex and face elements")

    colors = face_colors
    if colors is None and vert_colors is not None:
        colors = vert_colors[faces].mean(axis=1)
    return verts, faces, colors


def save_mesh(path, mesh: SurfaceMesh, image: FaceImage = None):
    """Write a mesh to OFF or PLY (by extension), with optional image.

    OFF colors are written as floats in [0, 1] and round-trip exactly;
    PLY colors are 8-bit. Gray images are written as a single value per
    face in OFF and replicated to r=g=b in PLY.
    """
    path = str(path)
    if image is not None and image.num_faces != mesh.num_faces:
        raise ValueError("image face count does not match mesh")
    if path.lower().endswith(".off"):
        _write_off(path, mesh, image)
    elif path.lower().endswith(".ply"):
        _write_ply(path, mesh, image)
    else:
        raise MeshFormatError(f"unknown mesh extension: {path}")


def _write_off(path, mesh, image):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.num_vertices} {mesh.num_faces} 0\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for fi, f in enumerate(mesh.faces):
            fh.write(f"3 {f[0]} {f[1]} {f[2]}")
            if image is not None:
                for val in image.values[fi]:
                    fh.write(f" {float(val)!r}")
            fh.write("\n")


def _write_ply(path, mesh, image):
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.num_vertices}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {mesh.num_faces}\n")
        fh.write("property list uchar int vertex_indices\n")
        if image is not None:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        if image is not None:
            rgb = image.values if image.channels == 3 else np.repeat(image.values, 3, axis=1)
            bytes_ = np.clip(np.round(rgb * 255.0), 0, 255).astype(int)
            for f, col in zip(mesh.faces, bytes_):
                fh.write(f"3 {f[0]} {f[1]} {f[2]} {col[0]} {col[1]} {col[2]}\n")
        else:
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
