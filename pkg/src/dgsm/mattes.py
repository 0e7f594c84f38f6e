"""Shadow mattes: splat-based (from atlases) and mesh-based pseudo ground truth."""

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .images import read_pfm, read_png16, write_pfm, write_png16
from .render import composite
from .shadows import FootprintMode, scene_transmittance


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = (0.0, 0.0, 1.0)
    fov_y: float = 50.0  # degrees
    width: int = 256
    height: int = 256

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def basis(self):
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("camera up vector is parallel to the view direction")
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return right, down, fwd

    def ray_dirs(self, supersample=1):
        """Unit ray directions (H*ss, W*ss, 3); image rows go down."""
        right, down, fwd = self.basis()
        h, w = self.height * supersample, self.width * supersample
        f = 0.5 * h / np.tan(np.radians(self.fov_y) / 2.0)
        ys = np.arange(h) + 0.5 - h / 2.0
        xs = np.arange(w) + 0.5 - w / 2.0
        d = fwd * f + xs[None, :, None] * right + ys[:, None, None] * down
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_json(self):
        return {"position": self.position.tolist(), "look_at": self.look_at.tolist(), "up": self.up.tolist(),
                "fov_y": self.fov_y, "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@dataclass(frozen=True)
class ReceiverPlane:
    """Rectangle center + u * [-hu, hu] + v * [-hv, hv]; normal = u x v."""

    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half_u: float
    half_v: float

    def __post_init__(self):
        for name in ("center", "u", "v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def normal(self):
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    def intersect(self, origin, dirs):
        """Hit points (..., 3) and a validity mask for rays from ``origin``."""
        n = self.normal
        denom = dirs @ n
        safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
        t = ((self.center - origin) @ n) / safe
        pts = origin + t[..., None] * dirs
        rel = pts - self.center
        inside = (np.abs(rel @ self.u) <= self.half_u) & (np.abs(rel @ self.v) <= self.half_v)
        return pts, (np.abs(denom) > 1e-12) & (t > 0) & inside


@dataclass
class ShadowImage:
    S: np.ndarray  # (H, W), 1 = fully shadowed
    camera: Camera = None

    def __post_init__(self):
        self.S = np.clip(np.asarray(self.S, dtype=np.float64), 0.0, 1.0)

    def save(self, path):
        path = Path(path)
        if path.suffix.lower() == ".png":
            write_png16(path, self.S)
        else:
            write_pfm(path, self.S)

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls(read_png16(path) if path.suffix.lower() == ".png" else read_pfm(path))


# ---------------------------------------------------------------------------
# meshes


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def triangles(self):
        return self.vertices[self.faces]

    @classmethod
    def merge(cls, meshes):
        verts, faces, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + off)
            off += len(m.vertices)
        if not verts:
            return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
        return cls(np.concatenate(verts), np.concatenate(faces))


def uv_sphere(center, radius, n_lat=24, n_lon=48):
    c = np.asarray(center, dtype=np.float64)
    theta = np.linspace(0.0, np.pi, n_lat + 1)[1:-1]
    phi = np.linspace(0.0, 2.0 * np.pi, n_lon, endpoint=False)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1).reshape(-1, 3)
    verts = np.concatenate([[[0, 0, 1.0]], ring, [[0, 0, -1.0]]]) * radius + c
    faces = []
    bottom = len(verts) - 1

    def vid(i, j):
        return 1 + i * n_lon + j % n_lon

    for j in range(n_lon):
        faces.append((0, vid(0, j), vid(0, j + 1)))
        faces.append((bottom, vid(n_lat - 2, j + 1), vid(n_lat - 2, j)))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b, c2, d = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
            faces += [(a, c2, b), (b, c2, d)]
    return TriangleMesh(verts, np.array(faces))


def box(center, half):
    c = np.asarray(center, dtype=np.float64)
    h = np.broadcast_to(np.asarray(half, dtype=np.float64), (3,))
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    faces = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5), (0, 4, 5), (0, 5, 1),
             (2, 3, 7), (2, 7, 6), (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
    return TriangleMesh(c + corners * h, np.array(faces))


def quad(center, u, v):
    """Parallelogram center +- u +- v as two triangles."""
    c, u, v = (np.asarray(a, dtype=np.float64) for a in (center, u, v))
    verts = np.array([c - u - v, c + u - v, c + u + v, c - u + v])
    return TriangleMesh(verts, np.array([(0, 1, 2), (0, 2, 3)]))


def save_obj(mesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


def load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: only triangle faces are supported")
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


# ---------------------------------------------------------------------------
# pseudo ground truth by shadow rays against triangles


@numba.njit(cache=True, inline="always")
def _segment_hits(o, d, v0, v1, v2, tmin, tmax):
    """Watertight ray/triangle test (shear to ray space, edge functions)."""
    a_x, a_y, a_z = abs(d[0]), abs(d[1]), abs(d[2])
    kz = 0
    if a_y > a_x:
        kz = 1
    if a_z > max(a_x, a_y):
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / d[kz]
    sy = d[ky] / d[kz]
    sz = 1.0 / d[kz]
    a0, a1, a2 = v0[kx] - o[kx], v0[ky] - o[ky], v0[kz] - o[kz]
    b0, b1, b2 = v1[kx] - o[kx], v1[ky] - o[ky], v1[kz] - o[kz]
    c0, c1, c2 = v2[kx] - o[kx], v2[ky] - o[ky], v2[kz] - o[kz]
    Ax, Ay = a0 - sx * a2, a1 - sy * a2
    Bx, By = b0 - sx * b2, b1 - sy * b2
    Cx, Cy = c0 - sx * c2, c1 - sy * c2
    U = Cx * By - Cy * Bx
    V = Ax * Cy - Ay * Cx
    W = Bx * Ay - By * Ax
    if (U < 0.0 or V < 0.0 or W < 0.0) and (U > 0.0 or V > 0.0 or W > 0.0):
        return False
    det = U + V + W
    if det == 0.0:
        return False
    T = U * sz * a2 + V * sz * b2 + W * sz * c2
    if det > 0.0:
        return tmin * det < T < tmax * det
    return tmax * det < T < tmin * det


@numba.njit(cache=True, parallel=True)
def _blocked(points, valid, light, tris, cl_off, cl_center, cl_radius, out):
    eps = 1e-6
    for p in numba.prange(points.shape[0]):
        if not valid[p]:
            continue
        o = points[p]
        d = light - o
        dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        hit = False
        for c in range(cl_center.shape[0]):
            # distance from the cluster's bounding sphere center to the segment
            w0 = cl_center[c, 0] - o[0]
            w1 = cl_center[c, 1] - o[1]
            w2 = cl_center[c, 2] - o[2]
            s = min(max((w0 * d[0] + w1 * d[1] + w2 * d[2]) / dd, 0.0), 1.0)
            q0, q1, q2 = w0 - s * d[0], w1 - s * d[1], w2 - s * d[2]
            if q0 * q0 + q1 * q1 + q2 * q2 > cl_radius[c] * cl_radius[c]:
                continue
            for f in range(cl_off[c], cl_off[c + 1]):
                if _segment_hits(o, d, tris[f, 0], tris[f, 1], tris[f, 2], eps, 1.0 - eps):
                    hit = True
                    break
            if hit:
                break
        out[p] = 1.0 if hit else 0.0


def _clusters(tris, size=64):
    n = len(tris)
    off = np.arange(0, n + size, size)
    off[-1] = n
    off = np.unique(np.minimum(off, n))
    centers, radii = [], []
    for lo, hi in zip(off[:-1], off[1:]):
        pts = tris[lo:hi].reshape(-1, 3)
        c = 0.5 * (pts.min(0) + pts.max(0))
        centers.append(c)
        radii.append(np.linalg.norm(pts - c, axis=1).max() + 1e-9)
    return off.astype(np.int64), np.array(centers).reshape(-1, 3), np.array(radii)


def render_shadow_matte_mesh(mesh, light, plane, camera, supersample=1):
    """Binary (or box-filtered with supersampling) shadow of ``mesh`` on ``plane``."""
    dirs = camera.ray_dirs(supersample)
    pts, valid = plane.intersect(camera.position, dirs)
    flat = np.ascontiguousarray(pts.reshape(-1, 3))
    out = np.zeros(len(flat))
    tris = np.ascontiguousarray(mesh.triangles)
    if len(tris):
        off, centers, radii = _clusters(tris)
        _blocked(flat, valid.reshape(-1), np.asarray(light.position, dtype=np.float64), tris, off, centers, radii, out)
    S = out.reshape(dirs.shape[:2])
    if supersample > 1:
        h, w = camera.height, camera.width
        S = S.reshape(h, supersample, w, supersample).mean(axis=(1, 3))
    return ShadowImage(S, camera)


def receiver_mask(plane, camera):
    _, valid = plane.intersect(camera.position, camera.ray_dirs())
    return valid


def render_shadow_matte_gaussian(scene, atlases, camera, mode=FootprintMode(), transmittance=None):
    """Receivers-only pass: scene splats composited with value 1 - T_g."""
    receivers = scene.select("scene")
    if transmittance is None:
        transmittance = scene_transmittance(receivers, atlases, mode)
    img, _ = composite(receivers, camera.position, camera.ray_dirs(), values=(1.0 - transmittance)[:, None])
    return ShadowImage(img[..., 0], camera)
