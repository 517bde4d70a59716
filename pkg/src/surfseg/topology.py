"""Topology-change detection and surgery for curve networks.

Curves evolving on a surface can collide with themselves, with each
other, or shrink away. Detection works on a uniform 3D background grid
whose cell size ``a`` satisfies ``a * sqrt(3) < delta0``, where
``delta0`` is the surface's tubular-neighborhood radius: two points in
one cell are then closer than ``delta0``, so their proximity in space
implies proximity on the surface and never spans separate sheets.

Each detection pass rebuilds the grid from scratch and registers sample
points along every segment (the nodes plus intermediate samples at most
one cell apart); a cell collision between validly separated samples
becomes a candidate, refined to the locally closest node pair. Sampling
the segments rather than the nodes alone keeps detection sound when the
local node spacing exceeds the cell size — two strands can cross
between nodes without any node pair ever coming close. Classification
by the participants:

* same curve: ``split``
* different curves carrying the same region pair (same or swapped
  orientation): ``merge``
* different region pairs: ``create_junctions`` (a short new curve plus
  two triple junctions)

Curve deletion (total length under a tolerance) is detected separately
and needs no grid.

Surgeries mutate the network in place and return an
:class:`ExecutionRecord` describing removed and created curves plus any
region merge the caller should apply to its region map. The executor
never touches region statistics itself; the pipeline owns those.
"""

from dataclasses import dataclass, field

import numpy as np

from .curves import TripleJunction
from .errors import ConfigError, TopologyEventError

__all__ = ["BackgroundGrid", "TopologyEvent", "ExecutionRecord",
           "detect_events", "find_deletions", "execute_event"]

# nodes this close (index distance along their own curve) never collide
_NEIGHBOR_EXCLUSION = 2

# half-width of the local search refining a cell collision to the
# closest nearby node pair
_REFINE_WINDOW = 5

# node count of the connecting curve created with two triple junctions
_CONNECTOR_NODES = 3


@dataclass
class TopologyEvent:
    """One detected topology change.

    ``kind`` is ``"delete"``, ``"split"``, ``"merge"`` or
    ``"create_junctions"``. For pair events the participants are
    (curve_a, node_a) and (curve_b, node_b) with their Euclidean
    distance and midpoint; deletions carry only ``curve_a``. ``step``
    and ``substep`` are stamped by the pipeline when the event fires.
    """

    kind: str
    curve_a: int
    node_a: int = -1
    curve_b: int = -1
    node_b: int = -1
    distance: float = 0.0
    position: np.ndarray = None
    step: int = -1
    substep: int = -1

    def to_json_dict(self) -> dict:
        pos = None if self.position is None else [float(v) for v in self.position]
        ids = [self.curve_a] + ([self.curve_b] if self.curve_b >= 0 else [])
        return {"step": self.step, "substep": self.substep, "kind": self.kind,
                "curve_ids": ids, "position": pos}


@dataclass
class ExecutionRecord:
    """What a surgery did to the network.

    ``region_merges`` lists (dead region, surviving region) pairs the
    caller must apply to its region map; a dead region of -1 with two
    candidates in ``notes`` marks an ambiguous delete the caller
    resolves by area. ``modified_curves`` lists curves that kept their
    id but had nodes rewritten. ``skipped`` is set when the surgery
    could not run (for example a curve too short to cut) and the
    network is unchanged.
    """

    kind: str
    removed_curves: list = field(default_factory=list)
    created_curves: list = field(default_factory=list)
    modified_curves: list = field(default_factory=list)
    region_merges: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    skipped: bool = False


class BackgroundGrid:
    """Uniform hash grid over 3-space with first-occupant cells.

    ``ops`` counts hash operations (inserts and lookups) so the linear
    scaling of a detection pass in the node count can be measured.
    """

    def __init__(self, cell_size: float, origin):
        if cell_size <= 0:
            raise ConfigError("grid cell size must be positive")
        self.cell_size = float(cell_size)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.cells = {}
        self.ops = 0

    def cell_of(self, point) -> tuple:
        c = np.floor((np.asarray(point) - self.origin) / self.cell_size)
        return (int(c[0]), int(c[1]), int(c[2]))

    def insert(self, point, payload):
        """Register a node; the cell keeps its first occupant."""
        key = self.cell_of(point)
        self.ops += 1
        if key not in self.cells:
            self.cells[key] = payload

    def occupants_near(self, point) -> list:
        """First occupants of the 27 cells around a point.

        Checking the neighborhood instead of the single containing cell
        catches close pairs that straddle a cell boundary; candidates
        are still distance-gated afterwards, so nothing farther than
        the configured tubular radius survives.
        """
        cx, cy, cz = self.cell_of(point)
        found = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    self.ops += 1
                    occ = self.cells.get((cx + dx, cy + dy, cz + dz))
                    if occ is not None:
                        found.append(occ)
        return found


def _guarded_nodes(network, curve) -> set:
    """Node indices of a curve too close to a junction-attached end to
    participate in collisions."""
    guard = set()
    for j in network.junctions:
        for cid, end in zip(j.curve_ids, j.ends):
            if cid != curve.id:
                continue
            anchor = curve.endpoint_index(end)
            for d in range(_NEIGHBOR_EXCLUSION + 1):
                idx = anchor - d if end == 1 else anchor + d
                if 0 <= idx < curve.num_nodes:
                    guard.add(idx)
    return guard


def _index_distance(curve, i: int, j: int) -> int:
    d = abs(i - j)
    if curve.closed:
        d = min(d, curve.num_nodes - d)
    return d


def _valid_pair(c1, i, c2, j, guards) -> bool:
    if c1.id == c2.id and _index_distance(c1, i, j) <= _NEIGHBOR_EXCLUSION:
        return False
    if i in guards[c1.id] or j in guards[c2.id]:
        return False
    return True


def _window_indices(curve, center: int):
    n = curve.num_nodes
    if curve.closed:
        return [(center + d) % n for d in range(-_REFINE_WINDOW, _REFINE_WINDOW + 1)]
    lo = max(0, center - _REFINE_WINDOW)
    hi = min(n - 1, center + _REFINE_WINDOW)
    return list(range(lo, hi + 1))


def _refine_pair(c1, i, c2, j, guards):
    """Locally closest valid node pair near a cell collision.

    Scans a +-5 node window on each participant and returns
    (i', j', distance), ties broken by the smaller index pair. Returns
    None if every pair in the window is excluded.
    """
    best = None
    for ii in _window_indices(c1, i):
        p1 = c1.nodes[ii]
        for jj in _window_indices(c2, j):
            if not _valid_pair(c1, ii, c2, jj, guards):
                continue
            d = float(np.linalg.norm(p1 - c2.nodes[jj]))
            key = (d, ii, jj)
            if best is None or key < best:
                best = key
    if best is None:
        return None
    return best[1], best[2], best[0]


def _segment_samples(curve, grid_a: float):
    """Sample points along each segment, at most ``grid_a`` apart.

    Returns ``(positions, owners)`` where ``owners[s]`` is the
    parameter-nearest node index of sample ``s``. The nodes themselves
    are the ``t = 0`` samples of their segments (plus the final node of
    an open curve), so the samples are a superset of the nodes.
    """
    nodes = curve.nodes
    n = curve.num_nodes
    m = n if curve.closed else n - 1
    heads = nodes[:m]
    tails = nodes[(np.arange(m) + 1) % n]
    lens = np.linalg.norm(tails - heads, axis=1)
    pos_chunks = []
    own_chunks = []
    for i in range(m):
        k = max(1, int(np.ceil(lens[i] / grid_a)))
        t = np.arange(k, dtype=np.float64) / k
        pos_chunks.append(heads[i] + t[:, None] * (tails[i] - heads[i]))
        own_chunks.append(np.where(t < 0.5, i, (i + 1) % n))
    if not curve.closed:
        pos_chunks.append(nodes[-1:])
        own_chunks.append(np.array([n - 1]))
    return np.vstack(pos_chunks), np.concatenate(own_chunks).astype(int)


def detect_events(network, grid_a: float, delta0: float, bbox_min=None):
    """One detection pass over sample points of all curve segments.

    Parameters
    ----------
    network : CurveNetwork
    grid_a : float
        Background grid cell size; must satisfy ``grid_a*sqrt(3) < delta0``.
    delta0 : float
        Tubular-neighborhood radius of the surface.
    bbox_min : array_like, optional
        Grid origin anchor; defaults to the minimum sample coordinate.

    Returns
    -------
    (events, ops)
        Pair events sorted by triggering sample separation (closest
        first, ties by curve and node ids), each reporting the locally
        closest valid node pair, and the number of grid hash operations
        performed. Deletions are not detected here; see
        :func:`find_deletions`.
    """
    if grid_a * np.sqrt(3.0) >= delta0:
        raise ConfigError(
            f"grid cell {grid_a:.4g} too coarse: requires a*sqrt(3) < "
            f"delta0 = {delta0:.4g}")

    curves = network.curves
    pos_chunks = []
    row_chunks = []
    own_chunks = []
    for row, c in enumerate(curves):
        pos, own = _segment_samples(c, grid_a)
        pos_chunks.append(pos)
        row_chunks.append(np.full(len(own), row, dtype=int))
        own_chunks.append(own)
    if not pos_chunks:
        return [], 0
    sample_pos = np.vstack(pos_chunks)
    sample_row = np.concatenate(row_chunks)
    sample_own = np.concatenate(own_chunks)
    if len(sample_pos) == 0:
        return [], 0
    if bbox_min is None:
        bbox_min = sample_pos.min(axis=0)
    origin = np.asarray(bbox_min, dtype=np.float64) - 2.0 * grid_a
    grid = BackgroundGrid(grid_a, origin)

    guards = {c.id: _guarded_nodes(network, c) for c in network.curves}

    best = {}
    gate = grid_a * np.sqrt(3.0)
    for k in range(len(sample_pos)):
        c2 = curves[sample_row[k]]
        j = int(sample_own[k])
        pk = sample_pos[k]
        occupants = grid.occupants_near(pk)
        grid.insert(pk, (int(sample_row[k]), j, pk))
        for occupant in occupants:
            c1 = curves[occupant[0]]
            i = occupant[1]
            # fire at the same-cell collision scale; a*sqrt(3) < delta0
            # keeps every firing pair on one surface sheet
            d_samp = float(np.linalg.norm(pk - occupant[2]))
            if d_samp > gate:
                continue
            if not _valid_pair(c1, i, c2, j, guards):
                continue
            refined = _refine_pair(c1, i, c2, j, guards)
            if refined is None:
                continue
            ri, rj, _ = refined
            a_key = (c1.id, ri)
            b_key = (c2.id, rj)
            if b_key < a_key:
                a_key, b_key = b_key, a_key
            prev = best.get((a_key, b_key))
            if prev is not None and prev.distance <= d_samp:
                continue

            ca = network.curve(a_key[0])
            cb = network.curve(b_key[0])
            if ca.id == cb.id:
                kind = "split"
            elif (ca.region_plus == cb.region_plus
                  and ca.region_minus == cb.region_minus):
                kind = "merge"
            elif (ca.region_plus == cb.region_minus
                  and ca.region_minus == cb.region_plus):
                kind = "merge"
            else:
                kind = "create_junctions"
            mid = 0.5 * (ca.nodes[a_key[1]] + cb.nodes[b_key[1]])
            best[(a_key, b_key)] = TopologyEvent(
                kind=kind, curve_a=a_key[0], node_a=a_key[1],
                curve_b=b_key[0], node_b=b_key[1], distance=d_samp,
                position=mid)

    events = list(best.values())
    events.sort(key=lambda e: (e.distance, e.curve_a, e.node_a,
                               e.curve_b, e.node_b))
    return events, grid.ops


def find_deletions(network, delete_tol: float):
    """Curves whose total length fell below the deletion tolerance."""
    events = []
    attached = {cid for j in network.junctions for cid in j.curve_ids}
    for c in network.curves:
        if c.length() < delete_tol and c.id not in attached:
            events.append(TopologyEvent(
                kind="delete", curve_a=c.id,
                position=c.nodes.mean(axis=0).copy()))
    return events


# ----------------------------------------------------------------------
# surgery


def execute_event(network, mesh, event: TopologyEvent) -> ExecutionRecord:
    """Apply one event to the network in place.

    Node indices in the event must refer to the current network state.
    All nodes created or moved by a surgery are projected onto the
    surface and junction endpoints are re-synchronized. Returns the
    :class:`ExecutionRecord`; on impossible surgeries (pieces below the
    minimum node count that cannot be salvaged) the record reports what
    was dropped.
    """
    if event.kind == "delete":
        return _execute_delete(network, event)
    if event.kind == "split":
        return _execute_split(network, mesh, event)
    if event.kind == "merge":
        return _execute_merge(network, mesh, event)
    if event.kind == "create_junctions":
        return _execute_create_junctions(network, mesh, event)
    raise TopologyEventError(f"unknown event kind: {event.kind}")


def _note_region_merge(network, region_plus, region_minus, rec):
    """Record the region merge a curve removal implies.

    Called after the curve has left the network: a region no other
    curve borders must be merged into the one across the dead curve.
    """
    used = {r for o in network.curves for r in (o.region_plus, o.region_minus)}
    plus_excl = region_plus not in used
    minus_excl = region_minus not in used
    if plus_excl and not minus_excl:
        rec.region_merges.append((region_plus, region_minus))
    elif minus_excl and not plus_excl:
        rec.region_merges.append((region_minus, region_plus))
    elif plus_excl and minus_excl:
        # both regions end with this curve; the caller resolves by area
        rec.region_merges.append((-1, -1))
        rec.notes.append(f"ambiguous merge {region_plus}|{region_minus}")


def _execute_delete(network, event) -> ExecutionRecord:
    c = network.curve(event.curve_a)
    rec = ExecutionRecord(kind="delete", removed_curves=[c.id])
    network.remove_curve(c.id)
    _note_region_merge(network, c.region_plus, c.region_minus, rec)
    return rec


def _rotate(arr, k):
    return np.concatenate([arr[k:], arr[:k]], axis=0)


def _execute_split(network, mesh, event) -> ExecutionRecord:
    c = network.curve(event.curve_a)
    i, j = sorted((event.node_a, event.node_b))
    rec = ExecutionRecord(kind="split")

    # the colliding pair is dropped and the strand neighbors reconnect
    # across the pinch; keeping the pair would leave the two pieces
    # sharing bit-equal nodes, which the next detection pass would read
    # as a merge and undo the surgery
    if c.closed:
        part1_n = c.nodes[i + 1:j].copy()
        part1_h = c.hints[i + 1:j].copy()
        part2_n = np.concatenate([c.nodes[j + 1:], c.nodes[:i]], axis=0)
        part2_h = np.concatenate([c.hints[j + 1:], c.hints[:i]])
        network.remove_curve(c.id)
        rec.removed_curves.append(c.id)
        for nodes, hints in ((part1_n, part1_h), (part2_n, part2_h)):
            if len(nodes) < 3:
                rec.notes.append(f"dropped split piece with {len(nodes)} nodes")
                continue
            nc = network.add_curve(nodes, True, c.region_plus, c.region_minus,
                                   hints=hints)
            rec.created_curves.append(nc.id)
        if not rec.created_curves:
            _note_region_merge(network, c.region_plus, c.region_minus, rec)
        return rec

    # open curve: the middle section pinches off into a closed loop and
    # the remainder keeps the curve's identity (its junction ends stay)
    loop_n = c.nodes[i + 1:j].copy()
    loop_h = c.hints[i + 1:j].copy()
    rest_n = np.concatenate([c.nodes[:i], c.nodes[j + 1:]], axis=0)
    rest_h = np.concatenate([c.hints[:i], c.hints[j + 1:]])
    if len(rest_n) < 2:
        rec.skipped = True
        rec.notes.append("open split would leave no carrier curve")
        return rec
    c.nodes = rest_n
    c.hints = rest_h
    rec.modified_curves.append(c.id)
    if len(loop_n) >= 3:
        nc = network.add_curve(loop_n, True, c.region_plus, c.region_minus,
                               hints=loop_h)
        rec.created_curves.append(nc.id)
    else:
        rec.notes.append(f"dropped pinched loop with {len(loop_n)} nodes")
    network.sync_junction_endpoints()
    return rec


def _oriented_copy(curve, node, want_plus, want_minus):
    """Curve nodes oriented so its region pair equals (want_plus,
    want_minus), with the collision node index mapped accordingly."""
    if curve.region_plus == want_plus and curve.region_minus == want_minus:
        return curve.nodes.copy(), curve.hints.copy(), node
    return (curve.nodes[::-1].copy(), curve.hints[::-1].copy(),
            curve.num_nodes - 1 - node)


def _remap_junctions(network, old_id, end_map):
    """Point junction records at the curves that now carry the ends.

    ``end_map[end] = (new_curve_id, new_end)``.
    """
    for j in network.junctions:
        for k, (cid, end) in enumerate(zip(j.curve_ids, j.ends)):
            if cid == old_id:
                new_cid, new_end = end_map[end]
                j.curve_ids[k] = new_cid
                j.ends[k] = new_end


def _execute_merge(network, mesh, event) -> ExecutionRecord:
    c1 = network.curve(event.curve_a)
    c2 = network.curve(event.curve_b)
    i, j = event.node_a, event.node_b
    rec = ExecutionRecord(kind="merge")

    if c1.closed and c2.closed:
        # cross-connect at the collision: traverse c1 up to the node
        # before i, jump over to c2 just past node j, and close up; the
        # colliding pair itself is dropped so the merged curve does not
        # double back through the near-touching points
        n2, h2, j2 = _oriented_copy(c2, j, c1.region_plus, c1.region_minus)
        merged_n = np.concatenate(
            [_rotate(c1.nodes, (i + 1) % c1.num_nodes)[:-1],
             _rotate(n2, (j2 + 1) % len(n2))[:-1]], axis=0)
        merged_h = np.concatenate(
            [_rotate(c1.hints, (i + 1) % c1.num_nodes)[:-1],
             _rotate(h2, (j2 + 1) % len(h2))[:-1]])
        network.remove_curve(c1.id)
        network.remove_curve(c2.id)
        rec.removed_curves += [c1.id, c2.id]
        nc = network.add_curve(merged_n, True, c1.region_plus,
                               c1.region_minus, hints=merged_h)
        rec.created_curves.append(nc.id)
        return rec

    if c1.closed != c2.closed:
        # absorb the closed loop into the open curve, which keeps its
        # identity, region pair and junction attachments; the colliding
        # node of each participant is dropped
        host, loop = (c2, c1) if c1.closed else (c1, c2)
        hi, li = (j, i) if c1.closed else (i, j)
        ln, lh, li = _oriented_copy(loop, li, host.region_plus,
                                    host.region_minus)
        host.nodes = np.concatenate(
            [host.nodes[:hi], _rotate(ln, (li + 1) % len(ln))[:-1],
             host.nodes[hi + 1:]], axis=0)
        host.hints = np.concatenate(
            [host.hints[:hi], _rotate(lh, (li + 1) % len(lh))[:-1],
             host.hints[hi + 1:]])
        network.remove_curve(loop.id)
        rec.removed_curves.append(loop.id)
        rec.modified_curves.append(host.id)
        rec.notes.append(f"curve {host.id} absorbed {loop.id}")
        network.sync_junction_endpoints()
        return rec

    # open + open: exchange tails at the collision, producing two open
    # curves with the colliding pair dropped; junction attachments at
    # the four far ends are remapped
    flipped = not (c2.region_plus == c1.region_plus
                   and c2.region_minus == c1.region_minus)
    n2, h2, j2 = _oriented_copy(c2, j, c1.region_plus, c1.region_minus)
    a_n = np.concatenate([c1.nodes[:i], n2[j2 + 1:]], axis=0)
    a_h = np.concatenate([c1.hints[:i], h2[j2 + 1:]])
    b_n = np.concatenate([n2[:j2], c1.nodes[i + 1:]], axis=0)
    b_h = np.concatenate([h2[:j2], c1.hints[i + 1:]])
    if len(a_n) < 2 or len(b_n) < 2:
        rec.skipped = True
        rec.notes.append("open merge would create a degenerate piece")
        return rec
    ca = network.add_curve(a_n, False, c1.region_plus, c1.region_minus,
                           hints=a_h)
    cb = network.add_curve(b_n, False, c1.region_plus, c1.region_minus,
                           hints=b_h)
    _remap_junctions(network, c1.id, {0: (ca.id, 0), 1: (cb.id, 1)})
    if flipped:
        # reversal makes c2's original end 0 the tail of piece A
        _remap_junctions(network, c2.id, {0: (ca.id, 1), 1: (cb.id, 0)})
    else:
        _remap_junctions(network, c2.id, {1: (ca.id, 1), 0: (cb.id, 0)})
    network.remove_curve(c1.id)
    network.remove_curve(c2.id)
    rec.removed_curves += [c1.id, c2.id]
    rec.created_curves += [ca.id, cb.id]
    network.sync_junction_endpoints()
    return rec


def _can_cut(curve, idx) -> bool:
    """Whether a curve survives being opened at a node (see _cut_curve)."""
    n = curve.num_nodes
    if n < 5:
        return False
    return curve.closed or 2 <= idx <= n - 3


def _cut_curve(network, mesh, curve, idx, rec):
    """Open a curve at a node, removing it.

    Returns ((curve_id, end), (curve_id, end)) for the two loose ends
    created, or None if the curve is too short to cut.
    """
    n = curve.num_nodes
    if curve.closed:
        if n < 5:
            return None
        nodes = np.concatenate([curve.nodes[idx + 1:], curve.nodes[:idx]], axis=0)
        hints = np.concatenate([curve.hints[idx + 1:], curve.hints[:idx]])
        curve.nodes = nodes
        curve.hints = hints
        curve.closed = False
        rec.modified_curves.append(curve.id)
        return (curve.id, 0), (curve.id, 1)

    if idx < 2 or idx > n - 3 or n < 5:
        return None
    p1 = network.add_curve(curve.nodes[:idx].copy(), False,
                           curve.region_plus, curve.region_minus,
                           hints=curve.hints[:idx].copy())
    p2 = network.add_curve(curve.nodes[idx + 1:].copy(), False,
                           curve.region_plus, curve.region_minus,
                           hints=curve.hints[idx + 1:].copy())
    _remap_junctions(network, curve.id, {0: (p1.id, 0), 1: (p2.id, 1)})
    network.remove_curve(curve.id)
    rec.removed_curves.append(curve.id)
    rec.created_curves += [p1.id, p2.id]
    return (p1.id, 1), (p2.id, 0)


def _tangent_at(curve, idx):
    """Central-difference tangent of a curve at one node (unnormalized,
    one-sided at open ends)."""
    n = curve.num_nodes
    if curve.closed:
        return curve.nodes[(idx + 1) % n] - curve.nodes[idx - 1]
    if idx == 0:
        return curve.nodes[1] - curve.nodes[0]
    if idx == n - 1:
        return curve.nodes[-1] - curve.nodes[-2]
    return curve.nodes[idx + 1] - curve.nodes[idx - 1]


def _execute_create_junctions(network, mesh, event) -> ExecutionRecord:
    c1 = network.curve(event.curve_a)
    c2 = network.curve(event.curve_b)
    i, j = event.node_a, event.node_b
    rec = ExecutionRecord(kind="create_junctions")

    # regions that will face each other across the new connector: for
    # each colliding curve, the region on its far side from the other
    d = c2.nodes[j] - c1.nodes[i]
    far = []
    for curve, idx, direction in ((c1, i, d), (c2, j, -d)):
        t = _tangent_at(curve, idx)
        hint = int(curve.hints[idx])
        normal = mesh.face_normals[hint] if hint >= 0 else np.array([0.0, 0.0, 1.0])
        conormal = np.cross(t, normal)
        if conormal @ direction < 0:
            far.append(curve.region_plus)
        else:
            far.append(curve.region_minus)
    s1, s2 = far

    # both cuts must be checked before either mutates the network, so a
    # skipped record really means an untouched network
    if not _can_cut(c1, i) or not _can_cut(c2, j):
        rec.skipped = True
        rec.notes.append("a participating curve is too short to cut")
        return rec
    snap1 = c1.nodes[i].copy()
    ends1 = _cut_curve(network, mesh, c1, i, rec)
    snap2 = c2.nodes[j].copy()
    ends2 = _cut_curve(network, mesh, c2, j, rec)

    def end_position(cid_end):
        cid, end = cid_end
        c = network.curve(cid)
        return c.nodes[c.endpoint_index(end)]

    # pair each loose end of the first curve with the nearer loose end
    # of the second
    p1a, p1b = end_position(ends1[0]), end_position(ends1[1])
    p2a, p2b = end_position(ends2[0]), end_position(ends2[1])
    straight = np.linalg.norm(p1a - p2a) + np.linalg.norm(p1b - p2b)
    crossed = np.linalg.norm(p1a - p2b) + np.linalg.norm(p1b - p2a)
    if crossed < straight:
        ends2 = (ends2[1], ends2[0])
        p2a, p2b = p2b, p2a

    j1_loc = mesh.project_to_surface(
        0.5 * (p1a + p2a), hint=int(network.curve(ends1[0][0]).hints[
            network.curve(ends1[0][0]).endpoint_index(ends1[0][1])]))
    j2_loc = mesh.project_to_surface(
        0.5 * (p1b + p2b), hint=int(network.curve(ends1[1][0]).hints[
            network.curve(ends1[1][0]).endpoint_index(ends1[1][1])]))
    mid_loc = mesh.project_to_surface(0.5 * (j1_loc.point + j2_loc.point),
                                      hint=j1_loc.face)

    conn_nodes = np.stack([j1_loc.point, mid_loc.point, j2_loc.point])
    conn_hints = np.array([j1_loc.face, mid_loc.face, j2_loc.face],
                          dtype=np.int64)
    # orient so the conormal (tangent x normal) points into s1-territory
    tangent = j2_loc.point - j1_loc.point
    w = np.cross(tangent, mesh.face_normals[mid_loc.face])
    q1 = _nearest_interior_point(network, ends1, snap1)
    q2 = _nearest_interior_point(network, ends2, snap2)
    h1 = float((q1 - mid_loc.point) @ w)
    h2 = float((q2 - mid_loc.point) @ w)
    if h1 >= h2:
        plus, minus = s1, s2
    else:
        plus, minus = s2, s1
    conn = network.add_curve(conn_nodes, False, plus, minus,
                             hints=conn_hints)
    rec.created_curves.append(conn.id)

    # anchor the three endpoints of each junction at the same point
    for cid_end, loc in (((ends1[0]), j1_loc), ((ends2[0]), j1_loc),
                         ((ends1[1]), j2_loc), ((ends2[1]), j2_loc)):
        c = network.curve(cid_end[0])
        k = c.endpoint_index(cid_end[1])
        c.nodes[k] = loc.point
        c.hints[k] = loc.face
    network.junctions.append(TripleJunction(
        curve_ids=[ends1[0][0], ends2[0][0], conn.id],
        ends=[ends1[0][1], ends2[0][1], 0]))
    network.junctions.append(TripleJunction(
        curve_ids=[ends1[1][0], ends2[1][0], conn.id],
        ends=[ends1[1][1], ends2[1][1], 1]))
    network.sync_junction_endpoints()
    rec.notes.append(f"connector {conn.id} separates regions {plus}|{minus}")
    return rec


def _nearest_interior_point(network, ends, fallback):
    """A point on the cut curve a couple of nodes away from its loose
    ends, used to decide which side of the connector the curve is on."""
    cid, end = ends[0]
    c = network.curve(cid)
    if c.num_nodes >= 3:
        k = c.endpoint_index(end)
        step = 2 if k == 0 else -2
        idx = min(max(k + step, 0), c.num_nodes - 1)
        return c.nodes[idx]
    return fallback
