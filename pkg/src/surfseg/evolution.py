"""Semi-implicit step of the constrained curve evolution.

Each step moves every curve node along the surface by solving one
coupled linear system for the whole network. The unknowns are the node
displacements and the nodal curvature values; displacements are
constrained to the tangent planes of the faces the nodes sit on, and
the three endpoints meeting at a triple junction share a single
displacement unknown. Eliminating the curvature through the lumped
mass matrix leaves one sparse symmetric system in the displacements
(a Schur complement), which is solved directly by default.

The weak form behind the matrices: with mass-lumped inner products on
the polygonal curves, find the displacement dX and curvature kappa with

    <dX / tau, chi * conormal>  - sigma <kappa, chi>   = <F, chi>
    <kappa * conormal, eta>     + <dX_s, eta_s>        = -<X_s, eta_s>

for all scalar tests chi and all tangent-plane vector tests eta, where
F is the image-driven forcing along the conormal. Node positions then
update by dX and are projected back onto the mesh.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .curves import lumped_weights, validate_assumptions
from .errors import SingularSystemError
from .linalg import TripletMatrix, solve_spd

__all__ = ["DofMap", "EvolutionSystem", "assemble_system", "forcing_values",
           "evolve_step", "advance", "compute_energy", "StepResult"]


class DofMap:
    """Index layout for the network's unknowns.

    Scalar unknowns (curvature, mass weights): one per node per curve,
    numbered consecutively curve by curve. Vector unknowns
    (displacements): one 3-vector per node, except that the three
    endpoint nodes of a triple junction share one unknown.
    """

    def __init__(self, network):
        self.network = network
        self.scalar_offsets = []
        ns = 0
        for c in network.curves:
            self.scalar_offsets.append(ns)
            ns += c.num_nodes
        self.num_scalar = ns

        merged = {}
        for jidx, j in enumerate(network.junctions):
            for cid, end in zip(j.curve_ids, j.ends):
                ci = self._curve_pos(cid)
                c = network.curves[ci]
                sd = self.scalar_offsets[ci] + c.endpoint_index(end)
                if sd in merged:
                    raise SingularSystemError(
                        f"endpoint of curve {cid} belongs to two junctions")
                merged[sd] = jidx

        self.vec_of_scalar = np.empty(ns, dtype=np.int64)
        nxt = 0
        junction_vec = {}
        for sd in range(ns):
            if sd in merged:
                jidx = merged[sd]
                if jidx not in junction_vec:
                    junction_vec[jidx] = nxt
                    nxt += 1
                self.vec_of_scalar[sd] = junction_vec[jidx]
            else:
                self.vec_of_scalar[sd] = nxt
                nxt += 1
        self.num_vec = nxt

    def _curve_pos(self, cid: int) -> int:
        for k, c in enumerate(self.network.curves):
            if c.id == cid:
                return k
        raise KeyError(f"no curve with id {cid}")

    def scalar_dofs(self, ci: int) -> np.ndarray:
        c = self.network.curves[ci]
        off = self.scalar_offsets[ci]
        return np.arange(off, off + c.num_nodes)

    def positions_vector(self) -> np.ndarray:
        """Stacked node positions in vector-unknown layout (3 * num_vec).

        Junction participants share a position, so repeated writes are
        identical by the endpoint-synchronization invariant.
        """
        x = np.zeros(3 * self.num_vec)
        for ci, c in enumerate(self.network.curves):
            vds = self.vec_of_scalar[self.scalar_dofs(ci)]
            for axis in range(3):
                x[3 * vds + axis] = c.nodes[:, axis]
        return x

    def per_curve(self, vec_field: np.ndarray):
        """Split a (3 * num_vec) vector into per-curve (n, 3) arrays
        keyed by curve id."""
        out = {}
        for ci, c in enumerate(self.network.curves):
            vds = self.vec_of_scalar[self.scalar_dofs(ci)]
            arr = np.empty((c.num_nodes, 3))
            for axis in range(3):
                arr[:, axis] = vec_field[3 * vds + axis]
            out[c.id] = arr
        return out

    def per_curve_scalar(self, field: np.ndarray):
        return {c.id: field[self.scalar_dofs(ci)].copy()
                for ci, c in enumerate(self.network.curves)}


@dataclass
class EvolutionSystem:
    """Assembled matrices of one step.

    Attributes
    ----------
    dofmap : DofMap
    mass : ndarray, (num_scalar,)
        Lumped node weights.
    conormal_map : csr_matrix, (3 * num_vec, num_scalar)
        Maps nodal scalars to conormal-directed vectors, weighted by
        the lumped mass.
    stiffness : csr_matrix, (3 * num_vec, 3 * num_vec)
        Piecewise-linear stiffness of the polygonal curves, one copy
        per coordinate.
    projector : csr_matrix, (3 * num_vec, 3 * num_vec)
        Block-diagonal orthogonal projector onto the face tangent
        planes (at junctions: onto the intersection of the participant
        planes).
    complement : csr_matrix
        Identity minus projector.
    """

    dofmap: DofMap
    mass: np.ndarray
    conormal_map: sp.csr_matrix
    stiffness: sp.csr_matrix
    projector: sp.csr_matrix
    complement: sp.csr_matrix


def assemble_system(network, frames: dict) -> EvolutionSystem:
    """Build mass, conormal map, stiffness and tangent-plane projector."""
    dof = DofMap(network)
    ns, nv = dof.num_scalar, dof.num_vec

    mass = np.zeros(ns)
    n_rows, n_cols, n_vals = [], [], []
    a_rows, a_cols, a_vals = [], [], []
    constraint_normals = [[] for _ in range(nv)]

    for ci, c in enumerate(network.curves):
        fr = frames[c.id]
        sds = dof.scalar_dofs(ci)
        vds = dof.vec_of_scalar[sds]
        w = lumped_weights(c)
        mass[sds] = w

        wconormal = w[:, None] * fr.conormal
        for axis in range(3):
            n_rows.extend(3 * vds + axis)
            n_cols.extend(sds)
            n_vals.extend(wconormal[:, axis])

        seg = c.segment_lengths()
        n = c.num_nodes
        pairs = [(j, (j + 1) % n) for j in range(n)] if c.closed \
            else [(j, j + 1) for j in range(n - 1)]
        for (j, jn), h in zip(pairs, seg):
            inv = 1.0 / h
            va, vb = vds[j], vds[jn]
            for axis in range(3):
                ra, rb = 3 * va + axis, 3 * vb + axis
                a_rows.extend((ra, rb, ra, rb))
                a_cols.extend((ra, rb, rb, ra))
                a_vals.extend((inv, inv, -inv, -inv))

        for j, sd in enumerate(sds):
            constraint_normals[vds[j]].append(fr.surface_normal[j])

    conormal_map = sp.coo_matrix(
        (n_vals, (n_rows, n_cols)), shape=(3 * nv, ns)).tocsr()
    stiffness = sp.coo_matrix(
        (a_vals, (a_rows, a_cols)), shape=(3 * nv, 3 * nv)).tocsr()

    p_rows, p_cols, p_vals = [], [], []
    c_rows, c_cols, c_vals = [], [], []
    eye = np.eye(3)
    for vd in range(nv):
        basis = _orthonormalize(constraint_normals[vd])
        qqt = basis.T @ basis if len(basis) else np.zeros((3, 3))
        block = eye - qqt
        for a in range(3):
            for b in range(3):
                if block[a, b] != 0.0:
                    p_rows.append(3 * vd + a)
                    p_cols.append(3 * vd + b)
                    p_vals.append(block[a, b])
                if qqt[a, b] != 0.0:
                    c_rows.append(3 * vd + a)
                    c_cols.append(3 * vd + b)
                    c_vals.append(qqt[a, b])
    projector = sp.coo_matrix(
        (p_vals, (p_rows, p_cols)), shape=(3 * nv, 3 * nv)).tocsr()
    complement = sp.coo_matrix(
        (c_vals, (c_rows, c_cols)), shape=(3 * nv, 3 * nv)).tocsr()

    return EvolutionSystem(dofmap=dof, mass=mass, conormal_map=conormal_map,
                           stiffness=stiffness, projector=projector,
                           complement=complement)


def _orthonormalize(vectors, tol: float = 1e-8):
    """Gram-Schmidt returning the significant directions as rows."""
    basis = []
    for v in vectors:
        u = np.array(v, dtype=np.float64)
        for q in basis:
            u -= (u @ q) * q
        norm = np.linalg.norm(u)
        if norm > tol:
            basis.append(u / norm)
    return np.asarray(basis).reshape(-1, 3)


def forcing_values(network, image, coeffs, lambdas, mu: float = 0.0,
                   color_space: str = "gray", mesh=None):
    """Per-node normal forcing from the image and region fit.

    For each node the image value at the node is compared against the
    fitted values of the two regions the curve separates; positive
    forcing pushes the node toward ``region_plus``. With ``mesh`` given
    the image is evaluated pointwise at the node (piecewise-linear
    interpolation), so the forcing crosses zero continuously at a data
    jump and a curve can settle on it; without a mesh the containing
    face's value is used directly.

    Returns a dict of per-curve (n,) arrays keyed by curve id.
    """
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    out = {}
    for c in network.curves:
        if c.hints.min() < 0:
            raise ValueError(f"curve {c.id} has unlocated nodes; "
                             "compute frames before forcing")
        if mesh is not None:
            vals = image.sample(mesh, c.hints, c.nodes)
        else:
            vals = image.values[c.hints]
        if color_space in ("gray", "rgb"):
            lam = np.broadcast_to(lambdas, (image.channels,))
            cp = coeffs.means[c.region_plus]
            cm = coeffs.means[c.region_minus]
            f = mu + ((vals - cp) ** 2 @ lam) - ((vals - cm) ** 2 @ lam)
        elif color_space == "cb":
            if image.channels != 3:
                raise ValueError("chromaticity-brightness needs 3 channels")
            if len(lambdas) != 2:
                raise ValueError("cb mode takes two weights (chroma, brightness)")
            lam_c, lam_b = float(lambdas[0]), float(lambdas[1])
            if mesh is not None:
                b0 = np.linalg.norm(vals, axis=1)
                v0 = np.where(b0[:, None] > 0,
                              vals / np.maximum(b0, 1e-300)[:, None], 0.0)
            else:
                v0 = image.chroma()[c.hints]
                b0 = image.brightness()[c.hints]
            vp, vm = coeffs.chroma[c.region_plus], coeffs.chroma[c.region_minus]
            bp, bm = coeffs.brightness[c.region_plus], coeffs.brightness[c.region_minus]
            f = mu \
                + lam_c * (((v0 - vp) ** 2).sum(axis=1)
                           - ((v0 - vm) ** 2).sum(axis=1)) \
                + lam_b * ((b0 - bp) ** 2 - (b0 - bm) ** 2)
        else:
            raise ValueError(f"unknown color space {color_space!r}")
        out[c.id] = f
    return out


@dataclass
class StepResult:
    """Outcome of one linear evolution step (before node projection)."""

    deltas: dict          # curve id -> (n, 3) displacement
    curvatures: dict      # curve id -> (n,) nodal curvature
    residual: float       # relative residual of the coupled system
    max_delta: float      # largest displacement norm


def evolve_step(network, frames: dict, tau: float, sigma: float,
                forcing: dict = None, solver: str = "direct",
                tol: float = 1e-10, validate: bool = True) -> StepResult:
    """Solve one semi-implicit step for the whole network.

    Parameters
    ----------
    network : CurveNetwork
    frames : dict
        Curve id -> NodeFrames, freshly computed on the current nodes.
    tau : float
        Time-step length.
    sigma : float
        Length-penalty weight (must be positive; it scales the
        curvature elimination).
    forcing : dict, optional
        Curve id -> per-node forcing; omitted entries mean zero.
    solver : {"direct", "cg"}
    tol : float
        Relative residual bound enforced on the coupled system.
    validate : bool
        Run the frame-span solvability checks first and fail with a
        structured error instead of attempting a singular solve.

    Raises
    ------
    AssumptionError
        If validation is on and the configuration is singular.
    SingularSystemError
        If the linear solve fails or the residual bound is not met.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if validate:
        validate_assumptions(network, frames).raise_if_failed()

    system = assemble_system(network, frames)
    dof = system.dofmap
    ns, nv = dof.num_scalar, dof.num_vec

    bvec = np.zeros(ns)
    if forcing:
        for ci, c in enumerate(network.curves):
            f = forcing.get(c.id)
            if f is not None:
                bvec[dof.scalar_dofs(ci)] = system.mass[dof.scalar_dofs(ci)] * f

    proj = system.projector
    stiff = system.stiffness
    nmap = system.conormal_map
    c_factor = 1.0 / (sigma * tau)

    # Schur complement in the displacements: the curvature block is
    # diagonal (lumped), so N M^-1 N^T collapses to 3x3 node blocks.
    inv_mass = 1.0 / system.mass
    bmat = (nmap @ sp.diags(inv_mass) @ nmap.T).tocsr()
    core = (proj @ (stiff + c_factor * bmat) @ proj).tocsr()
    alpha = core.diagonal().mean()
    if alpha <= 0:
        raise SingularSystemError("assembled system has non-positive scale")
    smat = (core + alpha * system.complement).tocsr()

    x = dof.positions_vector()
    rhs = (1.0 / sigma) * (proj @ (nmap @ (bvec * inv_mass))) - proj @ (stiff @ x)

    y = solve_spd(smat, rhs, tol=tol, method=solver)
    delta = proj @ y
    kappa = c_factor * inv_mass * (nmap.T @ delta - tau * bvec)

    r1 = -sigma * tau * system.mass * kappa + nmap.T @ delta - tau * bvec
    r2 = proj @ (nmap @ kappa) + proj @ (stiff @ delta) + proj @ (stiff @ x)
    scale = max(float(np.linalg.norm(tau * bvec)),
                float(np.linalg.norm(proj @ (stiff @ x))), 1e-300)
    residual = float(np.sqrt(np.linalg.norm(r1) ** 2
                             + np.linalg.norm(r2) ** 2)) / scale
    if residual > tol:
        raise SingularSystemError(
            f"coupled-system residual {residual:.3e} exceeds {tol:.1e}")

    deltas = dof.per_curve(delta)
    curvatures = dof.per_curve_scalar(kappa)
    max_delta = max((float(np.linalg.norm(d, axis=1).max())
                     for d in deltas.values() if len(d)), default=0.0)
    return StepResult(deltas=deltas, curvatures=curvatures,
                      residual=residual, max_delta=max_delta)


def advance(network, mesh, deltas: dict) -> float:
    """Apply displacements and project nodes back to the surface.

    Junction endpoints are synchronized afterwards so the three
    participant nodes stay bitwise identical. Returns the largest total
    node movement (displacement plus projection shift), which feeds the
    incremental region update's drift guard.
    """
    moved = 0.0
    for c in network.curves:
        d = deltas.get(c.id)
        if d is None:
            continue
        targets = c.nodes + d
        if np.all(c.hints >= 0):
            faces, pts = mesh.project_points(targets, c.hints)
        else:
            faces = np.empty(c.num_nodes, dtype=np.int64)
            pts = np.empty_like(targets)
            for i in range(c.num_nodes):
                hint = int(c.hints[i]) if c.hints[i] >= 0 else None
                loc = mesh.project_to_surface(targets[i], hint=hint)
                faces[i], pts[i] = loc.face, loc.point
        moved = max(moved, float(np.linalg.norm(pts - c.nodes, axis=1).max()))
        c.nodes = pts
        c.hints = faces
    network.sync_junction_endpoints()
    return moved


def compute_energy(mesh, image, region_map, coeffs, network, sigma: float,
                   lambdas, mu: float = 0.0, color_space: str = "gray") -> float:
    """Discrete segmentation energy of the current state.

    Curve length weighted by sigma, plus the area of region 1 weighted
    by mu, plus the per-region data misfit integrated over faces.
    """
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    energy = sigma * network.total_length()
    energy += mu * region_map.areas.get(1, 0.0)

    labels = region_map.labels
    areas = mesh.face_areas
    if color_space in ("gray", "rgb"):
        lam = np.broadcast_to(lambdas, (image.channels,))
        for k in sorted(region_map.counts):
            mask = labels == k
            diff = image.values[mask] - coeffs.means[k]
            energy += float((areas[mask] @ (diff ** 2)) @ lam)
    elif color_space == "cb":
        lam_c, lam_b = float(lambdas[0]), float(lambdas[1])
        chroma = image.chroma()
        bright = image.brightness()
        for k in sorted(region_map.counts):
            mask = labels == k
            dv = chroma[mask] - coeffs.chroma[k]
            db = bright[mask] - coeffs.brightness[k]
            energy += lam_c * float(areas[mask] @ (dv ** 2).sum(axis=1))
            energy += lam_b * float(areas[mask] @ (db ** 2))
    else:
        raise ValueError(f"unknown color space {color_space!r}")
    return float(energy)
