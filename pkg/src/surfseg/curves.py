"""Polygonal curve networks living on a triangulated surface.

A network is a set of curves, each a polyline of nodes on the mesh,
plus triple-junction records tying three curve endpoints to one shared
point. Closed curves store each node once (the last node connects back
to the first); open curves run between two junctions and include both
endpoint nodes.

Every curve carries the labels of the two regions it separates; its
conormal (the surface tangent perpendicular to the curve) points from
``region_minus`` toward ``region_plus``, and the scheme moves nodes
along that conormal.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, CurveFormatError

__all__ = ["Curve", "TripleJunction", "CurveNetwork", "NodeFrames",
           "compute_frames", "refine_coarsen", "validate_assumptions"]

# Relative singular-value threshold for frame-span rank tests.
_RANK_TOL = 1e-10


@dataclass
class Curve:
    """One polygonal curve.

    Attributes
    ----------
    id : int
        Stable identifier; never reused after surgery retires a curve.
    nodes : ndarray, shape (n, 3)
        Node coordinates on the mesh surface.
    closed : bool
        Closed loop (nodes stored once, wrap-around implied) or open
        chain between two junctions.
    region_plus, region_minus : int
        Labels of the regions on either side; the conormal points
        toward ``region_plus``.
    hints : ndarray, shape (n,), dtype int
        Last known containing face per node, -1 when unknown. Purely an
        acceleration cache for mesh queries.
    """

    id: int
    nodes: np.ndarray
    closed: bool
    region_plus: int
    region_minus: int
    hints: np.ndarray = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 3).copy()
        if self.hints is None:
            self.hints = np.full(len(self.nodes), -1, dtype=np.int64)
        else:
            self.hints = np.asarray(self.hints, dtype=np.int64).copy()
        if len(self.hints) != len(self.nodes):
            raise ValueError("hints length must match node count")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_segments(self) -> int:
        return len(self.nodes) if self.closed else len(self.nodes) - 1

    def segment_lengths(self) -> np.ndarray:
        if self.closed:
            diff = np.roll(self.nodes, -1, axis=0) - self.nodes
        else:
            diff = self.nodes[1:] - self.nodes[:-1]
        return np.linalg.norm(diff, axis=1)

    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def endpoint_index(self, end: int) -> int:
        """Node index of endpoint 0 (start) or 1 (end)."""
        if self.closed:
            raise ValueError("closed curves have no endpoints")
        return 0 if end == 0 else len(self.nodes) - 1

    def copy(self) -> "Curve":
        return Curve(self.id, self.nodes.copy(), self.closed,
                     self.region_plus, self.region_minus, self.hints.copy())


@dataclass
class TripleJunction:
    """Three curve endpoints pinned to one point.

    ``curve_ids[k]`` meets the junction at its ``ends[k]`` endpoint
    (0 = first node, 1 = last node). The three endpoint nodes are kept
    bitwise identical by the solver and by endpoint synchronization
    after every node update.
    """

    curve_ids: list
    ends: list

    def __post_init__(self):
        self.curve_ids = [int(c) for c in self.curve_ids]
        self.ends = [int(e) for e in self.ends]
        if len(self.curve_ids) != 3 or len(self.ends) != 3:
            raise CurveFormatError("a junction joins exactly three curve endpoints")
        if len(set(self.curve_ids)) != 3:
            raise CurveFormatError("junction curves must be three distinct curves")
        if any(e not in (0, 1) for e in self.ends):
            raise CurveFormatError("junction ends must be 0 or 1")


class CurveNetwork:
    """Mutable collection of curves and their junctions."""

    def __init__(self, curves=None, junctions=None):
        self.curves: list = list(curves or [])
        self.junctions: list = list(junctions or [])
        self._next_id = 1 + max((c.id for c in self.curves), default=0)
        self._check_junctions()

    def _check_junctions(self):
        ids = {c.id for c in self.curves}
        if len(ids) != len(self.curves):
            raise CurveFormatError("duplicate curve ids")
        for j in self.junctions:
            for cid, end in zip(j.curve_ids, j.ends):
                if cid not in ids:
                    raise CurveFormatError(f"junction references missing curve {cid}")
                if self.curve(cid).closed:
                    raise CurveFormatError(
                        f"junction references closed curve {cid}")

    def curve(self, cid: int) -> Curve:
        for c in self.curves:
            if c.id == cid:
                return c
        raise KeyError(f"no curve with id {cid}")

    def new_id(self) -> int:
        cid = self._next_id
        self._next_id += 1
        return cid

    def add_curve(self, nodes, closed, region_plus, region_minus, hints=None) -> Curve:
        c = Curve(self.new_id(), nodes, closed, region_plus, region_minus, hints)
        self.curves.append(c)
        return c

    def remove_curve(self, cid: int):
        self.curves = [c for c in self.curves if c.id != cid]

    def junctions_of(self, cid: int):
        return [j for j in self.junctions if cid in j.curve_ids]

    def region_labels(self):
        labels = set()
        for c in self.curves:
            labels.add(c.region_plus)
            labels.add(c.region_minus)
        return sorted(labels)

    def total_length(self) -> float:
        return float(sum(c.length() for c in self.curves))

    def all_nodes(self):
        """Stacked (positions, curve_index, node_index) over the network.

        ``curve_index`` is the position in ``self.curves``, not the id.
        """
        if not self.curves:
            return (np.zeros((0, 3)), np.zeros(0, dtype=np.int64),
                    np.zeros(0, dtype=np.int64))
        pos = np.concatenate([c.nodes for c in self.curves], axis=0)
        ci = np.concatenate([np.full(c.num_nodes, k, dtype=np.int64)
                             for k, c in enumerate(self.curves)])
        ni = np.concatenate([np.arange(c.num_nodes, dtype=np.int64)
                             for c in self.curves])
        return pos, ci, ni

    def sync_junction_endpoints(self, mesh=None):
        """Force the three endpoint nodes of every junction to be
        bitwise identical (position and face hint), taking the first
        participant as the reference."""
        for j in self.junctions:
            ref = self.curve(j.curve_ids[0])
            ridx = ref.endpoint_index(j.ends[0])
            pos = ref.nodes[ridx].copy()
            hint = ref.hints[ridx]
            for cid, end in zip(j.curve_ids, j.ends):
                c = self.curve(cid)
                idx = c.endpoint_index(end)
                c.nodes[idx] = pos
                c.hints[idx] = hint

    def copy(self) -> "CurveNetwork":
        net = CurveNetwork([c.copy() for c in self.curves],
                           [TripleJunction(list(j.curve_ids), list(j.ends))
                            for j in self.junctions])
        net._next_id = self._next_id
        return net

    # ------------------------------------------------------------------
    # JSON serialization

    def to_json_dict(self) -> dict:
        return {
            "curves": [
                {
                    "id": c.id,
                    "closed": bool(c.closed),
                    "region_plus": int(c.region_plus),
                    "region_minus": int(c.region_minus),
                    "nodes": [[float(x) for x in row] for row in c.nodes],
                }
                for c in self.curves
            ],
            "junctions": [
                {"curve_ids": list(j.curve_ids), "endpoints": list(j.ends)}
                for j in self.junctions
            ],
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, data: dict) -> "CurveNetwork":
        try:
            curves = [
                Curve(int(c["id"]), np.asarray(c["nodes"], dtype=np.float64),
                      bool(c["closed"]), int(c["region_plus"]),
                      int(c["region_minus"]))
                for c in data["curves"]
            ]
            junctions = [
                TripleJunction(j["curve_ids"], j["endpoints"])
                for j in data.get("junctions", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise CurveFormatError(f"bad curve network data: {exc}") from exc
        for c in curves:
            if c.num_nodes < (3 if c.closed else 2):
                raise CurveFormatError(
                    f"curve {c.id} has too few nodes ({c.num_nodes})")
        return cls(curves, junctions)

    @classmethod
    def load_json(cls, path, mesh=None) -> "CurveNetwork":
        """Load a network; with a mesh given, snap every node onto it.

        Snapping uses closest-point projection and records the face
        hints. The maximum snap distance is stored on the returned
        network as ``max_snap_distance``.
        """
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CurveFormatError(f"{path}: invalid JSON: {exc}") from exc
        net = cls.from_json_dict(data)
        net.max_snap_distance = 0.0
        if mesh is not None:
            snap = 0.0
            for c in net.curves:
                for i in range(c.num_nodes):
                    loc = mesh.project_to_surface(c.nodes[i])
                    snap = max(snap, float(np.linalg.norm(loc.point - c.nodes[i])))
                    c.nodes[i] = loc.point
                    c.hints[i] = loc.face
            net.sync_junction_endpoints()
            net.max_snap_distance = snap
        return net


@dataclass
class NodeFrames:
    """Discrete orthonormal frame at every node of one curve.

    Attributes
    ----------
    surface_normal : ndarray, shape (n, 3)
        Normal of the face containing each node.
    tangent : ndarray, shape (n, 3)
        Normalized central difference of neighbor nodes (one-sided at
        open-curve endpoints).
    conormal : ndarray, shape (n, 3)
        Unit vector tangent to the surface and perpendicular to the
        curve: normalized cross product of tangent and surface normal.
        Orthogonal to the surface normal by construction.
    """

    surface_normal: np.ndarray
    tangent: np.ndarray
    conormal: np.ndarray


def compute_frames(curve: Curve, mesh) -> NodeFrames:
    """Build the discrete frames for one curve; refreshes face hints.

    Raises
    ------
    AssumptionError
        If consecutive nodes coincide, if the two neighbors of a node
        coincide (zero chord), or if the tangent is parallel to the
        surface normal so no conormal exists.
    """
    n = curve.num_nodes
    min_nodes = 3 if curve.closed else 2
    if n < min_nodes:
        raise AssumptionError(f"curve {curve.id} has only {n} nodes")

    if np.all(curve.hints >= 0):
        faces, _ = mesh.locate_points(curve.nodes, curve.hints)
        curve.hints = faces
    else:
        for i in range(n):
            hint = int(curve.hints[i]) if curve.hints[i] >= 0 else None
            loc = mesh.locate_point(curve.nodes[i], hint=hint)
            curve.hints[i] = loc.face
    normals = mesh.face_normals[curve.hints]

    x = curve.nodes
    seg = curve.segment_lengths()
    if np.any(seg <= 0.0):
        j = int(np.argmin(seg))
        raise AssumptionError(
            f"curve {curve.id}: consecutive nodes {j} and {j + 1} coincide")

    if curve.closed:
        chord = np.roll(x, -1, axis=0) - np.roll(x, 1, axis=0)
    else:
        chord = np.empty_like(x)
        chord[1:-1] = x[2:] - x[:-2]
        chord[0] = x[1] - x[0]
        chord[-1] = x[-1] - x[-2]
    clen = np.linalg.norm(chord, axis=1)
    if np.any(clen <= 0.0):
        j = int(np.argmin(clen))
        raise AssumptionError(
            f"curve {curve.id}: neighbors of node {j} coincide (zero chord)")
    tangent = chord / clen[:, None]

    co = np.cross(tangent, normals)
    colen = np.linalg.norm(co, axis=1)
    if np.any(colen < 1e-12):
        j = int(np.argmin(colen))
        raise AssumptionError(
            f"curve {curve.id}: tangent parallel to surface normal at node {j}")
    conormal = co / colen[:, None]
    return NodeFrames(surface_normal=normals, tangent=tangent, conormal=conormal)


def lumped_weights(curve: Curve) -> np.ndarray:
    """Mass-lumped node weight: half the sum of the adjacent segment
    lengths (a single half-segment at open endpoints)."""
    seg = curve.segment_lengths()
    n = curve.num_nodes
    w = np.empty(n)
    if curve.closed:
        w = 0.5 * (seg + np.roll(seg, 1))
    else:
        w[0] = 0.5 * seg[0]
        w[-1] = 0.5 * seg[-1]
        if n > 2:
            w[1:-1] = 0.5 * (seg[:-1] + seg[1:])
    return w


def refine_coarsen(curve: Curve, mesh, l_min: float, l_max: float) -> str:
    """One refinement or coarsening pass on a curve, in place.

    If the average spacing exceeds ``l_max``, a surface-projected
    midpoint is inserted in every segment. If it falls below ``l_min``,
    every second non-endpoint node is removed. At most one of the two
    happens per call.

    Returns ``"refined"``, ``"coarsened"`` or ``"unchanged"``.
    """
    n = curve.num_nodes
    avg = curve.length() / curve.num_segments
    if avg > l_max:
        nxt = np.roll(curve.nodes, -1, axis=0) if curve.closed else curve.nodes[1:]
        base = curve.nodes if curve.closed else curve.nodes[:-1]
        mids = 0.5 * (base + nxt)
        if np.all(curve.hints >= 0):
            mid_hints, mid_pts = mesh.project_points(
                mids, curve.hints[:len(mids)])
        else:
            mid_hints = np.empty(len(mids), dtype=np.int64)
            mid_pts = np.empty_like(mids)
            for j in range(len(mids)):
                loc = mesh.project_to_surface(mids[j])
                mid_hints[j], mid_pts[j] = loc.face, loc.point
        new_nodes = np.empty((len(base) + len(mids) + (0 if curve.closed else 1), 3))
        new_hints = np.empty(len(new_nodes), dtype=np.int64)
        new_nodes[0:2 * len(base):2] = base
        new_nodes[1:2 * len(base) + 1:2] = mid_pts
        new_hints[0:2 * len(base):2] = curve.hints[:len(base)]
        new_hints[1:2 * len(base) + 1:2] = mid_hints
        if not curve.closed:
            new_nodes[-1] = curve.nodes[-1]
            new_hints[-1] = curve.hints[-1]
        curve.nodes = new_nodes
        curve.hints = new_hints
        return "refined"

    if avg < l_min:
        if curve.closed:
            keep = np.arange(n) % 2 == 0
        else:
            keep = np.zeros(n, dtype=bool)
            keep[0] = keep[-1] = True
            keep[2:-1:2] = True
        min_nodes = 3 if curve.closed else 2
        if int(keep.sum()) < min_nodes:
            return "unchanged"
        curve.nodes = curve.nodes[keep]
        curve.hints = curve.hints[keep]
        return "coarsened"

    return "unchanged"


@dataclass
class AssumptionReport:
    """Outcome of the solvability checks for a network."""

    ok: bool
    failures: list = field(default_factory=list)
    junction_balance: list = field(default_factory=list)

    def raise_if_failed(self):
        if not self.ok:
            raise AssumptionError("; ".join(self.failures))


def validate_assumptions(network: CurveNetwork, frames: dict) -> AssumptionReport:
    """Check the discrete solvability conditions of a network.

    ``frames`` maps curve id to its :class:`NodeFrames` (so the node
    spacing conditions were already enforced when frames were built).
    Verified here:

    * every closed curve's conormals and surface normals together span
      all of 3-space (otherwise a rigid translation direction slips
      through every constraint and the step matrix is singular);
    * the same span condition per junction, over the interior nodes of
      its three curves.

    The report also carries, per junction, the norm of the signed sum
    of one-sided unit tangents; at a steady triple junction this force
    balance tends to zero. It is recorded as a diagnostic only and
    never enforced.
    """
    failures = []
    balance = []

    def span_rank(vectors) -> int:
        mat = np.asarray(vectors)
        if len(mat) == 0:
            return 0
        s = np.linalg.svd(mat, compute_uv=False)
        return int(np.sum(s > _RANK_TOL * s[0]))

    for c in network.curves:
        if not c.closed:
            continue
        fr = frames[c.id]
        vecs = np.concatenate([fr.conormal, fr.surface_normal], axis=0)
        if span_rank(vecs) < 3:
            failures.append(
                f"curve {c.id}: frame vectors span a plane only; the step "
                "system is singular for this configuration")

    for jidx, j in enumerate(network.junctions):
        vecs = []
        signed_tangents = np.zeros(3)
        for cid, end in zip(j.curve_ids, j.ends):
            c = network.curve(cid)
            fr = frames[cid]
            if c.num_nodes > 2:
                vecs.append(fr.conormal[1:-1])
                vecs.append(fr.surface_normal[1:-1])
            x = c.nodes
            if end == 0:
                t = x[1] - x[0]
            else:
                t = x[-1] - x[-2]
            norm = np.linalg.norm(t)
            if norm > 0:
                signed_tangents += (1.0 if end == 0 else -1.0) * t / norm
        stacked = np.concatenate(vecs, axis=0) if vecs else np.zeros((0, 3))
        if span_rank(stacked) < 3:
            failures.append(
                f"junction {jidx}: interior frame vectors of its curves span "
                "a plane only; the step system is singular")
        balance.append(float(np.linalg.norm(signed_tangents)))

    return AssumptionReport(ok=not failures, failures=failures,
                            junction_balance=balance)
