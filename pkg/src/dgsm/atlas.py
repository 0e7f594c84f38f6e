"""Direction x radius transmittance tables.

Two layouts share one container: an octahedral H x W atlas (the default)
and a 6-face cubemap used for comparison. Data is stored as float32 with
shape (K, H, W); for cubemaps H = 6 F and W = F, face-major.
"""

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DGSM"
VERSION = 1
_HEADER = struct.Struct("<4sIBIIIf3f3ff")


class AtlasFormatError(ValueError):
    pass


class Layout(enum.IntEnum):
    OCTAHEDRAL = 0
    CUBEMAP = 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in ("oct", "octahedral"):
            return cls.OCTAHEDRAL
        if key in ("cube", "cubemap"):
            return cls.CUBEMAP
        raise ValueError(f"unknown atlas layout {value!r}")


# ---------------------------------------------------------------------------
# octahedral mapping


def _sgn(x):
    return np.where(x >= 0, 1.0, -1.0)


def oct_encode(dirs):
    """Unit direction(s) (..., 3) -> (..., 2) octahedral coordinates in [-1, 1]^2."""
    d = np.asarray(dirs, dtype=np.float64)
    l1 = np.abs(d).sum(axis=-1)
    if np.any(l1 == 0):
        raise ValueError("cannot encode the zero vector")
    q = d / l1[..., None]
    qx, qy, qz = q[..., 0], q[..., 1], q[..., 2]
    lower = qz < 0
    u = np.where(lower, _sgn(qx) * (1.0 - np.abs(qy)), qx)
    v = np.where(lower, _sgn(qy) * (1.0 - np.abs(qx)), qy)
    return np.stack([u, v], axis=-1)


def oct_decode(uv):
    """(..., 2) octahedral coordinates -> unit directions (..., 3)."""
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    z = 1.0 - np.abs(u) - np.abs(v)
    lower = z < 0
    x = np.where(lower, _sgn(u) * (1.0 - np.abs(v)), u)
    y = np.where(lower, _sgn(v) * (1.0 - np.abs(u)), v)
    d = np.stack([x, y, z], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def oct_jacobian(dirs):
    """d(u, v)/d(direction) for unit directions, shape (..., 2, 3).

    Exact per octahedron face; the map has kinks on face boundaries.
    """
    d = np.asarray(dirs, dtype=np.float64)
    s = _sgn(d)
    l1 = np.abs(d).sum(axis=-1)
    q = d / l1[..., None]
    dq = (np.eye(3) - q[..., :, None] * s[..., None, :]) / l1[..., None, None]
    upper = dq[..., :2, :]
    flip = (-s[..., 0] * s[..., 1])[..., None, None]
    lower = flip * dq[..., [1, 0], :]
    return np.where((q[..., 2] < 0)[..., None, None], lower, upper)


def pixel_of(uv, H, W):
    """Octahedral coordinates -> integer (row, col) pixel indices."""
    uv = np.asarray(uv, dtype=np.float64)
    col = np.clip(np.floor((uv[..., 0] + 1.0) * 0.5 * W), 0, W - 1).astype(np.int64)
    row = np.clip(np.floor((uv[..., 1] + 1.0) * 0.5 * H), 0, H - 1).astype(np.int64)
    return row, col


def uv_of_pixel(row, col, H, W):
    row = np.asarray(row)
    col = np.asarray(col)
    if np.any((row < 0) | (row >= H) | (col < 0) | (col >= W)):
        raise IndexError("pixel index out of range")
    u = (col + 0.5) * 2.0 / W - 1.0
    v = (row + 0.5) * 2.0 / H - 1.0
    return np.stack([u, v], axis=-1)


def dir_of_pixel(row, col, H, W):
    return oct_decode(uv_of_pixel(row, col, H, W))


def pixel_directions(H, W):
    """Unit direction of every octahedral pixel center, shape (H, W, 3)."""
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    return dir_of_pixel(rows, cols, H, W)


def wrap_pixel(row, col, H, W):
    """Fold out-of-range integer taps back into the atlas through the octahedral seam.

    Crossing the u = +-1 edge mirrors both axes (u -> +-2 - u, v -> -v), which
    is exactly how the octahedral fold continues across the outer boundary.
    Valid for taps at most one atlas width outside.
    """
    row = np.asarray(row).copy()
    col = np.asarray(col).copy()
    lo = col < 0
    hi = col >= W
    col = np.where(lo, -1 - col, np.where(hi, 2 * W - 1 - col, col))
    row = np.where(lo | hi, H - 1 - row, row)
    lo = row < 0
    hi = row >= H
    row = np.where(lo, -1 - row, np.where(hi, 2 * H - 1 - row, row))
    col = np.where(lo | hi, W - 1 - col, col)
    return row, col


def bin_center(k, K, t_max):
    k = np.asarray(k)
    if np.any((k < 0) | (k >= K)):
        raise IndexError(f"bin index out of range [0, {K})")
    return (k + 0.5) * t_max / K


def bin_centers(K, t_max):
    return (np.arange(K) + 0.5) * t_max / K


# ---------------------------------------------------------------------------
# cubemap mapping (+X, -X, +Y, -Y, +Z, -Z; OpenGL face orientation)


def cube_face_coords(dirs):
    """Directions -> (face, s, t) with s, t in [-1, 1]."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    face = np.where(
        (ax >= ay) & (ax >= az),
        np.where(x >= 0, 0, 1),
        np.where(ay >= az, np.where(y >= 0, 2, 3), np.where(z >= 0, 4, 5)),
    )
    sc = np.choose(face, [-z, z, x, x, x, -x])
    tc = np.choose(face, [-y, -y, z, -z, -y, -y])
    ma = np.choose(face, [ax, ax, ay, ay, az, az])
    return face, sc / ma, tc / ma


def cube_face_dirs(face, s, t):
    """Inverse of :func:`cube_face_coords` (returns unit directions)."""
    face = np.asarray(face)
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    one = np.ones_like(s)
    x = np.choose(face, [one, -one, s, s, s, -s])
    y = np.choose(face, [-t, -t, one, -one, -t, -t])
    z = np.choose(face, [-s, s, t, -t, one, -one])
    d = np.stack([x, y, z], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def cube_pixel_directions(F):
    """Directions of all cubemap texels, shape (6 F, F, 3) face-major."""
    face, i, j = np.meshgrid(np.arange(6), np.arange(F), np.arange(F), indexing="ij")
    s = (j + 0.5) * 2.0 / F - 1.0
    t = (i + 0.5) * 2.0 / F - 1.0
    return cube_face_dirs(face, s, t).reshape(6 * F, F, 3)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtlasDims:
    H: int = 512
    W: int = 512
    K: int = 64
    t_max: float = 8.0
    layout: Layout = Layout.OCTAHEDRAL

    def __post_init__(self):
        object.__setattr__(self, "layout", Layout.parse(self.layout))
        # the file format stores t_max as float32; keep memory and disk identical
        object.__setattr__(self, "t_max", float(np.float32(self.t_max)))
        if min(self.H, self.W, self.K) < 1 or not self.t_max > 0:
            raise ValueError(f"invalid atlas dimensions {self}")
        if self.layout is Layout.CUBEMAP and self.H != 6 * self.W:
            raise ValueError("cubemap atlases need H == 6 * W (face-major faces of W x W)")

    @property
    def face_res(self):
        return self.W

    @classmethod
    def cubemap(cls, face_res, K, t_max):
        return cls(6 * face_res, face_res, K, t_max, Layout.CUBEMAP)

    def pixel_directions(self):
        if self.layout is Layout.CUBEMAP:
            return cube_pixel_directions(self.W)
        return pixel_directions(self.H, self.W)


@dataclass
class DgsmAtlas:
    dims: AtlasDims
    light: "object"  # PointLight
    data: np.ndarray = None  # (K, H, W) float32 transmittance
    stats: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        shape = (self.dims.K, self.dims.H, self.dims.W)
        if self.data is None:
            self.data = np.ones(shape, dtype=np.float32)
        else:
            self.data = np.asarray(self.data, dtype=np.float32)
            if self.data.shape != shape:
                raise ValueError(f"atlas data shape {self.data.shape} != {shape}")

    H = property(lambda self: self.dims.H)
    W = property(lambda self: self.dims.W)
    K = property(lambda self: self.dims.K)
    t_max = property(lambda self: self.dims.t_max)
    layout = property(lambda self: self.dims.layout)

    def sample(self, dirs, ts):
        return sample(self, dirs, ts)


def _radial_coords(atlas, ts):
    kf = np.asarray(ts, dtype=np.float64) * atlas.K / atlas.t_max - 0.5
    kf = np.clip(kf, 0.0, atlas.K - 1)
    k0 = np.minimum(np.floor(kf).astype(np.int64), atlas.K - 1)
    k1 = np.minimum(k0 + 1, atlas.K - 1)
    return k0, k1, kf - k0


def _lerp(a, b, f):
    # a + f (b - a) keeps constant fields exact (all-ones stays 1.0)
    return a + f * (b - a)


def sample(atlas, dirs, ts):
    """Trilinear transmittance lookup at directions (N, 3) and light distances (N,)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    scalar = dirs.ndim == 1
    dirs = dirs.reshape(-1, 3)
    ts = np.broadcast_to(np.asarray(ts, dtype=np.float64), dirs.shape[:1])
    k0, k1, fk = _radial_coords(atlas, ts)
    if atlas.layout is Layout.CUBEMAP:
        out = _sample_cube(atlas, dirs, k0, k1, fk)
    else:
        out = _sample_oct(atlas, dirs, k0, k1, fk)
    return float(out[0]) if scalar else out


def _sample_oct(atlas, dirs, k0, k1, fk):
    H, W = atlas.H, atlas.W
    uv = oct_encode(dirs)
    x = (uv[:, 0] + 1.0) * 0.5 * W - 0.5
    y = (uv[:, 1] + 1.0) * 0.5 * H - 0.5
    c0 = np.floor(x).astype(np.int64)
    r0 = np.floor(y).astype(np.int64)
    fx = x - c0
    fy = y - r0
    data = atlas.data

    def tap(r, c, k):
        rr, cc = wrap_pixel(r, c, H, W)
        return data[k, rr, cc].astype(np.float64)

    def bilinear(k):
        top = _lerp(tap(r0, c0, k), tap(r0, c0 + 1, k), fx)
        bot = _lerp(tap(r0 + 1, c0, k), tap(r0 + 1, c0 + 1, k), fx)
        return _lerp(top, bot, fy)

    return _lerp(bilinear(k0), bilinear(k1), fk)


def _sample_cube(atlas, dirs, k0, k1, fk):
    F = atlas.W
    face, s, t = cube_face_coords(dirs)
    x = np.clip((s + 1.0) * 0.5 * F - 0.5, 0.0, F - 1.0)
    y = np.clip((t + 1.0) * 0.5 * F - 0.5, 0.0, F - 1.0)
    c0 = np.minimum(np.floor(x).astype(np.int64), F - 1)
    r0 = np.minimum(np.floor(y).astype(np.int64), F - 1)
    c1 = np.minimum(c0 + 1, F - 1)
    r1 = np.minimum(r0 + 1, F - 1)
    fx = x - c0
    fy = y - r0
    base = face * F
    data = atlas.data

    def bilinear(k):
        top = _lerp(data[k, base + r0, c0].astype(np.float64), data[k, base + r0, c1], fx)
        bot = _lerp(data[k, base + r1, c0].astype(np.float64), data[k, base + r1, c1], fx)
        return _lerp(top, bot, fy)

    return _lerp(bilinear(k0), bilinear(k1), fk)


# ---------------------------------------------------------------------------
# binary format


def serialize(atlas, path):
    light = atlas.light
    header = _HEADER.pack(
        MAGIC, VERSION, int(atlas.layout), atlas.H, atlas.W, atlas.K, atlas.t_max,
        *np.asarray(light.position, dtype=np.float32),
        *np.asarray(light.color, dtype=np.float32),
        float(light.intensity),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(atlas.data, dtype="<f4").tobytes())


def deserialize(path):
    from .lights import PointLight

    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise AtlasFormatError(f"{path}: truncated header")
    magic, version, layout, H, W, K, t_max, *rest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise AtlasFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise AtlasFormatError(f"{path}: unsupported version {version}")
    try:
        layout = Layout(layout)
    except ValueError:
        raise AtlasFormatError(f"{path}: unknown layout code {layout}") from None
    payload = blob[_HEADER.size:]
    expected = 4 * K * H * W
    if len(payload) != expected:
        raise AtlasFormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    light = PointLight(np.array(rest[0:3], dtype=np.float64), float(rest[6]), np.array(rest[3:6], dtype=np.float64))
    data = np.frombuffer(payload, dtype="<f4").reshape(K, H, W).astype(np.float32)
    try:
        dims = AtlasDims(H, W, K, float(t_max), layout)
    except ValueError as exc:
        raise AtlasFormatError(f"{path}: {exc}") from None
    return DgsmAtlas(dims, light, data)
