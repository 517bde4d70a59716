"""Face partition induced by the curve network, with running statistics.

Every face of the mesh carries a region label. Labels are assigned
geometrically: faces near a curve take the side indicated by the
curve's conormal (which points toward ``region_plus``), and at startup
the remaining faces inherit labels by flood fill. After the first
assignment only a band of faces within ``n0`` neighbor levels of the
curve nodes is ever re-tested, and the per-region statistics (face
count, color sum, area) are updated only for the faces that actually
change side.

Image values are snapped to a dyadic grid when the image is built, so
all the running sums here are exact in double precision: an incremental
update and a from-scratch rescan produce bitwise identical statistics.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import RegionConsistencyError, RegionDriftError

__all__ = ["RegionMap", "Coefficients", "initialize_regions",
           "update_regions", "compute_coefficients"]


class RegionMap:
    """Region label per face plus exact per-region statistics."""

    def __init__(self, num_faces: int):
        self.labels = np.full(num_faces, -1, dtype=np.int64)
        self.counts = {}
        self.color_sums = {}
        self.areas = {}
        self.chroma_sums = {}
        self.brightness_sums = {}

    def region_ids(self):
        return sorted(self.counts)

    def recompute_stats(self, mesh, image):
        """Rebuild all statistics from the label array (batch rescan)."""
        self.counts = {}
        self.color_sums = {}
        self.areas = {}
        self.chroma_sums = {}
        self.brightness_sums = {}
        labels = self.labels
        ids = np.unique(labels)
        chroma = image.chroma() if image.channels == 3 else None
        brightness = image.brightness() if image.channels == 3 else None
        for k in ids:
            if k < 0:
                continue
            mask = labels == k
            self.counts[int(k)] = int(mask.sum())
            self.color_sums[int(k)] = image.values[mask].sum(axis=0)
            self.areas[int(k)] = float(mesh.face_areas[mask].sum())
            if chroma is not None:
                self.chroma_sums[int(k)] = chroma[mask].sum(axis=0)
                self.brightness_sums[int(k)] = float(brightness[mask].sum())

    def move_face(self, face: int, new_label: int, mesh, image):
        """Relabel one face, shifting its contribution between regions."""
        old = int(self.labels[face])
        if old == new_label:
            return
        val = image.values[face]
        area = float(mesh.face_areas[face])
        if old >= 0:
            self.counts[old] -= 1
            self.color_sums[old] = self.color_sums[old] - val
            self.areas[old] -= area
        if new_label not in self.counts:
            self.counts[new_label] = 0
            self.color_sums[new_label] = np.zeros(image.channels)
            self.areas[new_label] = 0.0
            if image.channels == 3:
                self.chroma_sums[new_label] = np.zeros(3)
                self.brightness_sums[new_label] = 0.0
        self.counts[new_label] += 1
        self.color_sums[new_label] = self.color_sums[new_label] + val
        self.areas[new_label] += area
        if image.channels == 3:
            ch = image.chroma()[face]
            br = float(image.brightness()[face])
            if old >= 0:
                self.chroma_sums[old] = self.chroma_sums[old] - ch
                self.brightness_sums[old] -= br
            self.chroma_sums[new_label] = self.chroma_sums[new_label] + ch
            self.brightness_sums[new_label] += br
        self.labels[face] = new_label

    def drop_empty(self, label: int):
        if self.counts.get(label) != 0:
            raise RegionConsistencyError(
                f"region {label} still has {self.counts.get(label)} faces")
        for d in (self.counts, self.color_sums, self.areas,
                  self.chroma_sums, self.brightness_sums):
            d.pop(label, None)

    def merge_region(self, dead: int, survivor: int, mesh, image):
        """Relabel all faces of ``dead`` as ``survivor`` and fold the
        statistics over. The transfer is exact (sums move wholesale)."""
        if dead == survivor:
            return
        self.labels[self.labels == dead] = survivor
        if dead in self.counts:
            self.counts[survivor] = self.counts.get(survivor, 0) + self.counts[dead]
            base = self.color_sums.get(survivor, np.zeros(image.channels))
            self.color_sums[survivor] = base + self.color_sums[dead]
            self.areas[survivor] = self.areas.get(survivor, 0.0) + self.areas[dead]
            if image.channels == 3:
                cbase = self.chroma_sums.get(survivor, np.zeros(3))
                self.chroma_sums[survivor] = cbase + self.chroma_sums[dead]
                self.brightness_sums[survivor] = (
                    self.brightness_sums.get(survivor, 0.0) + self.brightness_sums[dead])
            for d in (self.counts, self.color_sums, self.areas,
                      self.chroma_sums, self.brightness_sums):
                d.pop(dead, None)

    def copy(self) -> "RegionMap":
        out = RegionMap(len(self.labels))
        out.labels = self.labels.copy()
        out.counts = dict(self.counts)
        out.color_sums = {k: v.copy() for k, v in self.color_sums.items()}
        out.areas = dict(self.areas)
        out.chroma_sums = {k: v.copy() for k, v in self.chroma_sums.items()}
        out.brightness_sums = dict(self.brightness_sums)
        return out


@dataclass
class Coefficients:
    """Per-region fitted values.

    ``means`` holds, per region, the mean color over its faces. In
    chromaticity-brightness mode ``chroma`` holds the normalized mean
    of per-face normalized colors and ``brightness`` the mean per-face
    color norm.
    """

    means: dict = field(default_factory=dict)
    chroma: dict = field(default_factory=dict)
    brightness: dict = field(default_factory=dict)


def _normalized(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 1e-300, n, 1.0)


def _sample_side_lookup(mesh, network, frames: dict):
    """Side test against the exact nearest point of the curve polylines.

    Dense samples along the segments feed a KD-tree that shortlists
    candidate segments per query; the winner is the segment whose exact
    point-segment distance is smallest. The side then comes from the
    nearest feature's normal: the segment's own conormal when the foot
    falls in the segment interior, and the bisector of the two adjacent
    segment conormals when it falls on a node. A single half-plane test
    against the nearest node mislabels part of the sector around sharp
    corners, where the node conormal is unreliable; the bisector rule
    classifies that sector correctly.

    Returns a callable mapping query points to region labels.
    """
    step = 0.45 * float(mesh.mean_edge_length)
    pts, owner = [], []
    seg_a, seg_b, seg_con, pn_start, pn_end = [], [], [], [], []
    plus, minus = [], []
    base = 0
    for c in network.curves:
        fr = frames[c.id]
        n = c.num_nodes
        m = c.num_segments
        a = c.nodes[np.arange(m)]
        b = c.nodes[(np.arange(m) + 1) % n]
        nrm = _normalized(fr.surface_normal[np.arange(m)]
                          + fr.surface_normal[(np.arange(m) + 1) % n])
        con = _normalized(np.cross(b - a, nrm))
        # node pseudonormal: bisector of the adjacent segment conormals
        if c.closed:
            start = _normalized(con[np.arange(m) - 1] + con)
            end = _normalized(con + con[(np.arange(m) + 1) % m])
        else:
            prev = np.vstack([con[:1], con[:-1]])
            nxt = np.vstack([con[1:], con[-1:]])
            start = _normalized(prev + con)
            end = _normalized(con + nxt)
        seg_a.append(a)
        seg_b.append(b)
        seg_con.append(con)
        pn_start.append(start)
        pn_end.append(end)
        plus.extend([c.region_plus] * m)
        minus.extend([c.region_minus] * m)
        for i in range(m):
            k = max(1, int(np.ceil(float(np.linalg.norm(b[i] - a[i])) / step)))
            t = np.arange(k)[:, None] / k
            pts.append(a[i] + (b[i] - a[i]) * t)
            owner.extend([base + i] * k)
        base += m
    pts = np.concatenate(pts, axis=0)
    owner = np.asarray(owner, dtype=np.int64)
    seg_a = np.concatenate(seg_a, axis=0)
    seg_b = np.concatenate(seg_b, axis=0)
    seg_con = np.concatenate(seg_con, axis=0)
    pn_start = np.concatenate(pn_start, axis=0)
    pn_end = np.concatenate(pn_end, axis=0)
    plus = np.asarray(plus, dtype=np.int64)
    minus = np.asarray(minus, dtype=np.int64)
    tree = cKDTree(pts)
    kq = min(8, len(pts))

    def label_points(points):
        points = np.atleast_2d(points)
        _, idx = tree.query(points, k=kq)
        idx = idx.reshape(len(points), kq)
        segs = owner[idx]
        a = seg_a[segs]
        ab = seg_b[segs] - a
        rel = points[:, None, :] - a
        denom = np.maximum((ab * ab).sum(axis=2), 1e-300)
        t = np.clip((rel * ab).sum(axis=2) / denom, 0.0, 1.0)
        foot = a + t[:, :, None] * ab
        d2 = ((points[:, None, :] - foot) ** 2).sum(axis=2)
        j = np.argmin(d2, axis=1)
        rows = np.arange(len(points))
        best = segs[rows, j]
        tb = t[rows, j]
        fb = foot[rows, j]
        normal = seg_con[best].copy()
        at0 = tb <= 1e-12
        at1 = tb >= 1.0 - 1e-12
        normal[at0] = pn_start[best[at0]]
        normal[at1] = pn_end[best[at1]]
        side = np.einsum("ij,ij->i", points - fb, normal)
        return np.where(side >= 0.0, plus[best], minus[best])

    return label_points


def _band_faces(mesh, seed_faces, n0: int):
    """Faces within n0 neighbor levels of the seed faces (inclusive)."""
    band = set(int(f) for f in seed_faces)
    frontier = set(band)
    for _ in range(n0):
        nxt = set()
        for f in frontier:
            for nb in mesh.face_neighbors[f]:
                if nb >= 0 and int(nb) not in band:
                    nxt.add(int(nb))
        band |= nxt
        frontier = nxt
        if not frontier:
            break
    return band


def _stitch(mesh, f1, f2, faces, max_hops=4):
    """Add the faces of a shortest adjacency path from f1 to f2."""
    if f1 == f2 or f2 in mesh.face_neighbors[f1]:
        return
    seen = {f1: -1}
    frontier = [f1]
    for _ in range(max_hops):
        nxt = []
        for f in frontier:
            for nb in mesh.face_neighbors[f]:
                nb = int(nb)
                if nb >= 0 and nb not in seen:
                    seen[nb] = f
                    if nb == f2:
                        back = seen[f2]
                        while back != f1:
                            faces.add(back)
                            back = seen[back]
                        return
                    nxt.append(nb)
        frontier = nxt


def _swept_faces(mesh, network):
    """Every face the curve polylines pass through, edge-connected.

    Node spacing routinely exceeds the face size, so the faces between
    consecutive node faces must be claimed too; otherwise the band has
    holes along the curve and flood fronts leak through them. Segments
    are sampled at sub-face resolution with hint-chained projections
    and consecutive faces are stitched into an adjacency path, making
    the swept tube a closed impermeable wall per closed curve.
    """
    faces = set()
    step = 0.45 * float(mesh.mean_edge_length)
    for c in network.curves:
        n = c.num_nodes
        for i in range(c.num_segments):
            a, b = c.nodes[i], c.nodes[(i + 1) % n]
            hint = int(c.hints[i])
            faces.add(hint)
            prev = hint
            k = int(np.ceil(float(np.linalg.norm(b - a)) / step))
            for t in range(1, k + 1):
                if t == k:
                    cur = int(c.hints[(i + 1) % n])
                else:
                    loc = mesh.project_to_surface(a + (b - a) * (t / k),
                                                  hint=prev)
                    cur = int(loc.face)
                faces.add(cur)
                _stitch(mesh, prev, cur, faces)
                prev = cur
    return faces


def initialize_regions(mesh, image, network, frames: dict, n0: int = 4) -> RegionMap:
    """Assign a region label to every face from scratch.

    Sweeps: the faces containing or crossed by the curves, and ``n0``
    levels of neighbors around them, take the side of the nearest curve
    point; everything else inherits by flood fill from the assigned
    front.

    Raises
    ------
    RegionConsistencyError
        If flood fronts carrying different labels collide (the band did
        not separate the regions) or unassigned faces remain.
    """
    rm = RegionMap(mesh.num_faces)
    labels = rm.labels
    positions, curve_idx, node_idx = network.all_nodes()
    if len(positions) == 0:
        raise RegionConsistencyError("cannot build regions without curves")

    claim = set()
    for k in range(len(positions)):
        c = network.curves[curve_idx[k]]
        f = int(c.hints[node_idx[k]])
        if f < 0:
            raise RegionConsistencyError(
                f"curve {c.id} node {node_idx[k]} has no face hint; "
                "compute frames before regions")
        claim.add(f)
    side_of = _sample_side_lookup(mesh, network, frames)

    # the tube of faces straddling the curve: labeled for the
    # statistics, but too noisy to propagate from
    tube = _swept_faces(mesh, network) | claim
    front = sorted(tube)
    labels[front] = side_of(mesh.face_centers[front])

    # n0 levels of neighbors around the curve faces
    frontier = front
    for _ in range(n0):
        fresh = []
        for f in frontier:
            for nb in mesh.face_neighbors[f]:
                nb = int(nb)
                if nb >= 0 and labels[nb] < 0:
                    labels[nb] = -2  # reserved, resolved just below
                    fresh.append(nb)
        if not fresh:
            break
        labels[fresh] = side_of(mesh.face_centers[fresh])
        frontier = fresh

    # flood fill the rest, watching for contradictory fronts; the tube
    # is an impermeable wall and never seeds, so a leak through it is
    # impossible and any front collision marks a genuine violation
    from collections import deque
    queue = deque()
    banded = labels >= 0
    for f in np.nonzero(banded)[0]:
        if int(f) in tube:
            continue
        for nb in mesh.face_neighbors[f]:
            nb = int(nb)
            if nb >= 0 and labels[nb] < 0:
                queue.append((nb, int(labels[f])))
    inherited = np.zeros(mesh.num_faces, dtype=bool)
    while queue:
        f, lab = queue.popleft()
        if labels[f] >= 0:
            if inherited[f] and labels[f] != lab:
                raise RegionConsistencyError(
                    f"flood fronts with labels {labels[f]} and {lab} collided at "
                    f"face {f}; the curve band does not separate these regions")
            continue
        labels[f] = lab
        inherited[f] = True
        for nb in mesh.face_neighbors[f]:
            nb = int(nb)
            if nb >= 0 and labels[nb] < 0:
                queue.append((nb, lab))

    missing = int((labels < 0).sum())
    if missing:
        raise RegionConsistencyError(
            f"{missing} faces were never assigned a region (disconnected "
            "surface component without curves?)")

    rm.recompute_stats(mesh, image)
    return rm


def update_regions(rm: RegionMap, mesh, image, network, frames: dict,
                   n0: int = 4, max_displacement: float = None):
    """Re-test only the faces near the curves and update statistics.

    Faces within ``n0`` neighbor levels of the faces the curves pass
    through are re-labeled by the nearest-curve-point side test; each
    change moves the face's contribution between the region statistics
    exactly.

    Raises
    ------
    RegionDriftError
        If ``max_displacement`` (the largest node motion of the step
        being absorbed) exceeds ``(n0 - 1)`` times the smallest face
        circumradius: faces beyond the re-tested band may then have
        changed side, so a full re-initialization is required.
    """
    if max_displacement is not None:
        limit = (n0 - 1) * float(np.min(mesh.face_circumradii))
        if max_displacement > limit:
            raise RegionDriftError(
                f"node displacement {max_displacement:.4g} exceeds the "
                f"incremental-update guarantee {limit:.4g}")

    positions, curve_idx, node_idx = network.all_nodes()
    for k in range(len(positions)):
        c = network.curves[curve_idx[k]]
        if int(c.hints[node_idx[k]]) < 0:
            raise RegionConsistencyError("node without face hint in update")
    band = sorted(_band_faces(mesh, _swept_faces(mesh, network), n0))
    if not band:
        return
    side_of = _sample_side_lookup(mesh, network, frames)
    fresh = side_of(mesh.face_centers[band])
    for f, lab in zip(band, fresh):
        rm.move_face(int(f), int(lab), mesh, image)
    for k in [k for k, v in rm.counts.items() if v == 0]:
        rm.drop_empty(k)


def compute_coefficients(rm: RegionMap, image, color_space: str = "gray",
                         area_weighted: bool = False, mesh=None) -> Coefficients:
    """Mean fitted value per region.

    The default follows face counts: the mean of per-face values. With
    ``area_weighted`` the face areas weight the averages instead (needs
    the mesh). In ``cb`` mode the chromaticity (normalized mean of
    per-face unit colors) and mean brightness are also produced.

    Raises
    ------
    RegionConsistencyError
        If a region has no faces.
    """
    coeffs = Coefficients()
    for k in sorted(rm.counts):
        n = rm.counts[k]
        if n == 0:
            raise RegionConsistencyError(f"region {k} has no faces")
        if area_weighted:
            if mesh is None:
                raise ValueError("area weighting requires the mesh")
            mask = rm.labels == k
            wsum = float(mesh.face_areas[mask].sum())
            coeffs.means[k] = (mesh.face_areas[mask, None]
                               * image.values[mask]).sum(axis=0) / wsum
        else:
            coeffs.means[k] = rm.color_sums[k] / n
        if color_space == "cb":
            if image.channels != 3:
                raise ValueError("chromaticity-brightness needs a 3-channel image")
            vsum = rm.chroma_sums[k]
            norm = float(np.linalg.norm(vsum))
            coeffs.chroma[k] = vsum / norm if norm > 0 else np.zeros(3)
            coeffs.brightness[k] = rm.brightness_sums[k] / n
    return coeffs
