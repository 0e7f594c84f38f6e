"""Bundled synthetic scenes: a splat room with an emitter, and shadow test scenes.

Every shadow scene pairs splat occluders with the analytic mesh they
approximate, so pseudo ground-truth mattes can be traced exactly.
"""

from dataclasses import dataclass

import numpy as np

from .build import tangent_basis
from .lights import PointLight
from .mattes import Camera, ReceiverPlane, TriangleMesh, box, quad, uv_sphere
from .sh import dc_from_rgb
from .splats import GROUPS, SplatScene, rotmat_to_quat


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + 5**0.5) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _frames(normals):
    e1, e2 = tangent_basis(normals)
    return rotmat_to_quat(np.stack([e1, e2, normals], axis=2))


def surfels(points, normals, radius, thickness, opacity, rgb, group, degree=0):
    """Flat splats lying in the plane orthogonal to each normal."""
    n = len(points)
    normals = np.asarray(normals, dtype=np.float64)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    scales = np.empty((n, 3))
    scales[:, :2] = radius
    scales[:, 2] = thickness
    sh = np.zeros((n, (degree + 1) ** 2, 3))
    sh[:, 0, :] = dc_from_rgb(np.broadcast_to(rgb, (n, 3)))
    return SplatScene(np.asarray(points, dtype=np.float64), _frames(normals), scales,
                      np.broadcast_to(np.asarray(opacity, dtype=np.float64), (n,)).copy(), sh,
                      np.full(n, GROUPS.index(group), np.int8))


# Disc tails push the T = 0.5 silhouette of a surfel surface outwards. Offsets
# in disc standard deviations, measured with the closed-form transmittance
# (see tests/test_synthetic.py): 0.625 for a closed sphere shell, 0.9 at the
# free edge of a plate.
SHELL_INSET = 0.625
EDGE_INSET = 0.9


def sphere_shell(center, radius, count=2000, opacity=0.9, rgb=(0.6, 0.55, 0.5), group="avatar", inset=SHELL_INSET):
    """Tangent discs on a sphere whose T = 0.5 silhouette lies on ``radius``."""
    n = fibonacci_sphere(count)
    spacing = radius * np.sqrt(4.0 * np.pi / count)
    sigma = 0.6 * spacing
    return surfels(np.asarray(center) + (radius - inset * sigma) * n, n, sigma, 0.1 * spacing, opacity, rgb, group)


def plane_grid(center, u, v, half_u, half_v, spacing, opacity=0.9, rgb=(0.7, 0.7, 0.7), group="scene",
               jitter=0.0, rng=None):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = max(1, int(round(2 * half_u / spacing)))
    nv = max(1, int(round(2 * half_v / spacing)))
    a = (np.arange(nu) + 0.5) / nu * 2 * half_u - half_u
    b = (np.arange(nv) + 0.5) / nv * 2 * half_v - half_v
    A, B = np.meshgrid(a, b, indexing="ij")
    pts = np.asarray(center) + A.reshape(-1, 1) * u + B.reshape(-1, 1) * v
    if jitter and rng is not None:
        pts = pts + rng.uniform(-jitter, jitter, pts.shape) * spacing * (u + v)
    normal = np.cross(u, v)
    normals = np.broadcast_to(normal / np.linalg.norm(normal), pts.shape)
    return surfels(pts, normals, 0.6 * spacing, 0.1 * spacing, opacity, rgb, group)


def box_shell(center, half, spacing, opacity=0.9, rgb=(0.5, 0.5, 0.6), group="avatar", inset=SHELL_INSET):
    c = np.asarray(center, dtype=np.float64)
    h = np.broadcast_to(np.asarray(half, dtype=np.float64), (3,)) - inset * 0.6 * spacing
    parts = []
    for axis in range(3):
        a1, a2 = [i for i in range(3) if i != axis]
        e = np.eye(3)
        for sign in (-1.0, 1.0):
            parts.append(plane_grid(c + sign * h[axis] * e[axis], e[a1], e[a2] * sign * (1 if axis != 1 else -1),
                                    h[a1], h[a2], spacing, opacity, rgb, group))
    return SplatScene.concat(parts)


# ---------------------------------------------------------------------------
# shadow suite


@dataclass
class ShadowScene:
    name: str
    scene: SplatScene  # scene-group receivers + avatar-group occluders
    mesh: TriangleMesh
    plane: ReceiverPlane
    light: PointLight
    camera: Camera


FLOOR_HALF = 2.0


def _floor(spacing):
    return plane_grid([0.0, 0.0, 0.0], [1.0, 0, 0], [0, 1.0, 0], FLOOR_HALF, FLOOR_HALF, spacing)


def _plane():
    return ReceiverPlane(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), FLOOR_HALF, FLOOR_HALF)


def _camera(res):
    """Oblique view of the whole receiver floor."""
    return Camera(np.array([0.0, -2.2, 4.2]), np.array([0.0, 0.2, 0.0]), fov_y=55.0, width=res, height=res)


def shadow_scene(name, floor_spacing=0.025, shell_count=2000, image_res=256):
    """One of the bundled shadow scenes: sphere, box, two_spheres, thin_plate, grazing."""
    floor = _floor(floor_spacing)
    if name == "sphere":
        occ = sphere_shell([0.0, 0.0, 1.0], 0.4, shell_count)
        mesh = uv_sphere([0.0, 0.0, 1.0], 0.4, 48, 96)
        light = PointLight([0.5, 0.3, 3.5], 1.0, [1, 1, 1])
    elif name == "box":
        occ = box_shell([0.0, 0.0, 0.9], [0.3, 0.2, 0.35], 0.04)
        mesh = box([0.0, 0.0, 0.9], [0.3, 0.2, 0.35])
        light = PointLight([-0.4, 0.6, 3.5], 1.0, [1, 1, 1])
    elif name == "two_spheres":
        occ = SplatScene.concat([sphere_shell([-0.5, 0.0, 0.8], 0.3, shell_count // 2),
                                 sphere_shell([0.5, 0.2, 1.3], 0.3, shell_count // 2)])
        mesh = TriangleMesh.merge([uv_sphere([-0.5, 0.0, 0.8], 0.3, 48, 96), uv_sphere([0.5, 0.2, 1.3], 0.3, 48, 96)])
        light = PointLight([0.0, 0.4, 3.8], 1.0, [1, 1, 1])
    elif name == "thin_plate":
        c = np.array([0.0, 0.0, 1.1])
        u = np.array([0.5, 0.0, 0.1])
        v = np.array([0.0, 0.3, 0.0])
        un, vn = u / np.linalg.norm(u), v / np.linalg.norm(v)
        shrink = EDGE_INSET * 0.6 * 0.025
        occ = plane_grid(c, un, vn, np.linalg.norm(u) - shrink, np.linalg.norm(v) - shrink, 0.025, opacity=0.95,
                         rgb=(0.4, 0.4, 0.4), group="avatar")
        mesh = quad(c, u, v)
        light = PointLight([0.3, -0.2, 3.6], 1.0, [1, 1, 1])
    elif name == "grazing":
        occ = sphere_shell([0.0, 0.3, 0.6], 0.35, shell_count)
        mesh = uv_sphere([0.0, 0.3, 0.6], 0.35, 48, 96)
        light = PointLight([2.2, -1.2, 2.0], 1.0, [1, 1, 1])
    else:
        raise ValueError(f"unknown shadow scene {name!r}")
    return ShadowScene(name, SplatScene.concat([floor, occ]), mesh, _plane(), light, _camera(image_res))


SHADOW_SCENES = ("sphere", "box", "two_spheres", "thin_plate", "grazing")


def shadow_suite(**kwargs):
    return [shadow_scene(name, **kwargs) for name in SHADOW_SCENES]


# ---------------------------------------------------------------------------
# room scene for the end-to-end pipeline


def bake_light(splats, position, tint=(1.0, 1.0, 1.0), ambient=0.25, gain=2.0, falloff=1.5):
    """Multiply DC colors by a simple diffuse point-light shading term.

    Surfel normals are the rotation axis of the thinnest scale.
    """
    rot = splats.rotation_matrices()
    n = rot[np.arange(len(splats)), :, np.argmin(splats.scales, axis=1)]
    l = np.asarray(position, dtype=np.float64) - splats.means
    d = np.linalg.norm(l, axis=1)
    cos = np.abs(np.einsum("ij,ij->i", n, l)) / np.maximum(d, 1e-12)
    shade = ambient + gain * cos / (1.0 + (d / falloff) ** 2)
    rgb = np.maximum(splats.dc_colors(), 0.0) * shade[:, None] * np.asarray(tint)
    sh = splats.sh.copy()
    sh[:, 0, :] = dc_from_rgb(rgb)
    return splats.replace(sh=sh)


def cornell_room(avatar_count=2000, wall_spacing=0.08, seed=0, emitter_rgb=(6.0, 5.6, 5.0)):
    """A 4 x 4 x 3 m splat room with colored side walls and a ceiling emitter.

    Room and object colors carry baked diffuse shading from the emitter; the
    avatar is shaded by a different, cooler side light, as if captured
    elsewhere. Returns a SplatScene tagged scene/avatar/object and the
    emitter center.
    """
    rng = np.random.default_rng(seed)
    half, height = 2.0, 3.0
    ex, ey = np.eye(3)[0], np.eye(3)[1]
    ez = np.eye(3)[2]
    emitter_pos = np.array([0.0, 0.0, height - 0.02])
    tint = np.asarray(emitter_rgb) / max(emitter_rgb)
    walls = SplatScene.concat([
        plane_grid([0, 0, 0], ex, ey, half, half, wall_spacing, rgb=(0.72, 0.72, 0.7), jitter=0.2, rng=rng),
        plane_grid([0, 0, height], ex, -ey, half, half, wall_spacing, rgb=(0.72, 0.72, 0.7), jitter=0.2, rng=rng),
        plane_grid([-half, 0, height / 2], ey, ez, half, height / 2, wall_spacing, rgb=(0.65, 0.12, 0.1), jitter=0.2, rng=rng),
        plane_grid([half, 0, height / 2], -ey, ez, half, height / 2, wall_spacing, rgb=(0.12, 0.5, 0.15), jitter=0.2, rng=rng),
        plane_grid([0, half, height / 2], ex, ez, half, height / 2, wall_spacing, rgb=(0.72, 0.72, 0.7), jitter=0.2, rng=rng),
    ])
    walls = bake_light(walls, emitter_pos, tint)
    emitter = plane_grid(emitter_pos, ex, -ey, 0.15, 0.15, 0.03, opacity=0.95, rgb=emitter_rgb)
    avatar = sphere_shell([0.2, -0.3, 1.0], 0.35, avatar_count, rgb=(0.6, 0.5, 0.45))
    avatar = bake_light(avatar, [3.0, -3.0, 1.0], (0.8, 0.9, 1.0), ambient=0.4, gain=1.2, falloff=10.0)
    obj = box_shell([-0.8, 0.6, 0.25], [0.25, 0.25, 0.25], 0.05, rgb=(0.3, 0.35, 0.7), group="object")
    obj = bake_light(obj, emitter_pos, tint)
    scene = SplatScene.concat([walls, emitter, avatar, obj])
    # a little view dependence so the SH path is exercised
    sh = np.zeros((len(scene), 16, 3))
    sh[:, 0, :] = scene.sh[:, 0, :]
    sh[:, 1:4, :] = rng.normal(0.0, 0.01, (len(scene), 3, 3))
    return scene.replace(sh=sh), emitter_pos


def timing_scene(n_scene=50_000, n_occluders=20_000, seed=0):
    """Large floor plus a dense occluder cloud, for culling benchmarks."""
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n_scene)))
    spacing = 2 * FLOOR_HALF / side
    floor = plane_grid([0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], FLOOR_HALF, FLOOR_HALF, spacing)
    shell = sphere_shell([0.0, 0.0, 1.0], 0.4, n_occluders // 2)
    inner = rng.normal(0.0, 0.15, (n_occluders - len(shell), 3)) + np.array([0.0, 0.0, 1.0])
    q = rng.normal(size=(len(inner), 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    blobs = SplatScene(inner, q, rng.uniform(0.01, 0.03, (len(inner), 3)), rng.uniform(0.2, 0.8, len(inner)),
                       np.zeros((len(inner), 1, 3)), np.full(len(inner), GROUPS.index("avatar"), np.int8))
    light = PointLight([0.5, 0.3, 3.5], 1.0, [1, 1, 1])
    return SplatScene.concat([floor, shell, blobs]), light
