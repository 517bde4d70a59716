"""Synthetic surfaces and painted test images.

These feed the test suite and the ``make-surface`` / ``paint`` CLI
subcommands: unit icospheres, tori, flat grids, and simple piecewise
images (discs, stripes, hemispheres) with optional Gaussian noise.
"""

import numpy as np

from .mesh import FaceImage, SurfaceMesh

__all__ = ["icosphere", "torus", "plane_grid", "paint_image"]


def icosphere(subdivisions: int = 3) -> SurfaceMesh:
    """Unit sphere obtained by subdividing an icosahedron.

    Each subdivision splits every face in four and reprojects new
    vertices onto the unit sphere, so the face count is 20 * 4**n.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]

    for _ in range(subdivisions):
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for (a, b, c) in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return SurfaceMesh(np.array(verts), np.array(faces, dtype=np.int64))


def torus(major_radius: float = 1.0, minor_radius: float = 0.4,
          n_major: int = 64, n_minor: int = 32) -> SurfaceMesh:
    """Torus of revolution around the z axis, outward oriented."""
    if n_major < 3 or n_minor < 3:
        raise ValueError("torus needs at least 3 segments in each direction")
    theta = 2.0 * np.pi * np.arange(n_major) / n_major
    phi = 2.0 * np.pi * np.arange(n_minor) / n_minor
    verts = np.empty((n_major * n_minor, 3))
    for i, th in enumerate(theta):
        ring = major_radius + minor_radius * np.cos(phi)
        verts[i * n_minor:(i + 1) * n_minor, 0] = ring * np.cos(th)
        verts[i * n_minor:(i + 1) * n_minor, 1] = ring * np.sin(th)
        verts[i * n_minor:(i + 1) * n_minor, 2] = minor_radius * np.sin(phi)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces.append((a, b, c))
            faces.append((a, c, d))
    return SurfaceMesh(verts, np.array(faces, dtype=np.int64))


def plane_grid(nx: int = 32, ny: int = 32, extent: float = 1.0) -> SurfaceMesh:
    """Flat grid on [-extent, extent]^2 at z = 0, normals along +z.

    The mesh is open along its boundary; it exists for flat-geometry
    tests and must be constructed/loaded with ``allow_open``.
    """
    xs = np.linspace(-extent, extent, nx + 1)
    ys = np.linspace(-extent, extent, ny + 1)
    verts = np.array([[x, y, 0.0] for y in ys for x in xs])
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = a + nx + 2
            d = a + nx + 1
            faces.append((a, b, c))
            faces.append((a, c, d))
    return SurfaceMesh(verts, np.array(faces, dtype=np.int64), allow_open=True)


def _sphere_like(mesh) -> bool:
    r = np.linalg.norm(mesh.vertices, axis=1)
    return bool(np.all(np.abs(r - r.mean()) < 1e-6 * max(r.mean(), 1.0)))


def paint_image(mesh: SurfaceMesh, pattern: str, inside: float = 0.1,
                outside: float = 0.9, centers=None, radius: float = 0.4,
                count: int = 4, channels: int = 1, noise: float = 0.0,
                seed: int = 0) -> FaceImage:
    """Paint a synthetic per-face image onto a mesh.

    Patterns
    --------
    ``discs``
        Faces whose centers lie within ``radius`` of any of the given
        centers get the inside value. On a sphere the radius is the
        great-circle angle in radians (arc length on the unit sphere);
        otherwise it is the Euclidean distance.
    ``stripes``
        ``count`` alternating bands of the inside/outside values by
        azimuthal angle around the z axis.
    ``hemispheres``
        Inside value where the face center has z > 0.
    ``constant`` / ``noise``
        Everything at the inside value; ``noise`` is the same base but
        exists so a pure-noise image can be requested by name.

    ``noise`` (the parameter) adds Gaussian perturbations with the
    given standard deviation, drawn deterministically from ``seed``.
    Values are clamped to [0, 1] at the end. With ``channels=3`` the
    scalar pattern fills a gray RGB image unless per-channel values
    are given as length-3 sequences.
    """
    centers_arr = None
    if centers is not None:
        centers_arr = np.atleast_2d(np.asarray(centers, dtype=np.float64))

    fc = mesh.face_centers
    if pattern == "discs":
        if centers_arr is None:
            raise ValueError("discs pattern requires centers")
        if _sphere_like(mesh):
            r = np.linalg.norm(fc, axis=1)
            u = fc / r[:, None]
            cn = centers_arr / np.linalg.norm(centers_arr, axis=1)[:, None]
            cosang = np.clip(u @ cn.T, -1.0, 1.0)
            dist = np.arccos(cosang).min(axis=1)
        else:
            diff = fc[:, None, :] - centers_arr[None, :, :]
            dist = np.linalg.norm(diff, axis=2).min(axis=1)
        mask = dist <= radius
    elif pattern == "stripes":
        ang = np.mod(np.arctan2(fc[:, 1], fc[:, 0]), 2.0 * np.pi)
        band = np.floor(ang / (2.0 * np.pi / count)).astype(int)
        mask = band % 2 == 0
    elif pattern == "hemispheres":
        mask = fc[:, 2] > 0.0
    elif pattern in ("constant", "noise"):
        mask = np.ones(len(fc), dtype=bool)
    else:
        raise ValueError(f"unknown pattern {pattern!r}")

    inside_v = np.broadcast_to(np.atleast_1d(np.asarray(inside, dtype=np.float64)),
                               (channels,))
    outside_v = np.broadcast_to(np.atleast_1d(np.asarray(outside, dtype=np.float64)),
                                (channels,))
    values = np.where(mask[:, None], inside_v[None, :], outside_v[None, :]).copy()

    if noise > 0.0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, noise, size=values.shape)
    return FaceImage(np.clip(values, 0.0, 1.0))
