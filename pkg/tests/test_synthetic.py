import numpy as np
import pytest
from scipy.optimize import brentq

from dgsm.synthetic import (EDGE_INSET, SHADOW_SCENES, bake_light, cornell_room, fibonacci_sphere, plane_grid,
                            shadow_scene, sphere_shell, timing_scene)
from dgsm.transmittance import AbsorptionMode, absorption_betas, mixture_depth

UP = np.array([0, 0, 1.0])


def parallel_t(scene, offsets):
    beta = absorption_betas(scene, AbsorptionMode())
    P = scene.precisions()
    return np.array([np.exp(-mixture_depth(scene.means, P, beta, o, UP, 6.0)) for o in offsets])


def test_sphere_shell_silhouette_at_nominal_radius():
    r = 0.4
    s = sphere_shell([0, 0, 0], r, 2000)
    sigma = s.scales[0, 0]
    ang = np.linspace(0, 2 * np.pi, 24, endpoint=False)

    def mean_t(b):
        return parallel_t(s, np.stack([b * np.cos(ang), b * np.sin(ang), np.full_like(ang, -3.0)], 1)).mean() - 0.5

    assert abs(brentq(mean_t, r - 2 * sigma, r + 2 * sigma) - r) <= 0.25 * sigma


def test_plate_edge_silhouette_at_nominal_edge():
    sp = 0.025
    shrink = EDGE_INSET * 0.6 * sp
    p = plane_grid([0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], 0.5 - shrink, 0.3 - shrink, sp, opacity=0.95, group="avatar")
    x = brentq(lambda x: parallel_t(p, [[x, 0.05, -3.0]])[0] - 0.5, 0.45, 0.56)
    assert abs(x - 0.5) <= 0.25 * 0.6 * sp


def test_fibonacci_sphere_is_uniform():
    d = fibonacci_sphere(4000)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1)
    np.testing.assert_allclose(d.mean(axis=0), 0, atol=2e-3)
    np.testing.assert_allclose(d.T @ d / 4000, np.eye(3) / 3, atol=2e-3)


@pytest.mark.parametrize("name", SHADOW_SCENES)
def test_shadow_scenes(name):
    ss = shadow_scene(name, floor_spacing=0.1, shell_count=200, image_res=32)
    assert len(ss.scene.select("avatar")) > 0 and len(ss.scene.select("scene")) > 0
    assert np.all(ss.scene.select("scene").means[:, 2] == 0)
    assert ss.light.position[2] > ss.mesh.vertices[:, 2].max()
    with pytest.raises(ValueError):
        shadow_scene("nope")


def test_bake_light_shading():
    p = plane_grid([0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], 1.0, 1.0, 0.5, rgb=(0.5, 0.5, 0.5))
    lit = bake_light(p, [0, 0, 1.0], ambient=0.25, gain=2.0, falloff=1.5)
    d = np.linalg.norm(p.means - [0, 0, 1.0], axis=1)
    cos = 1.0 / d
    want = 0.5 * (0.25 + 2.0 * cos / (1 + (d / 1.5) ** 2))
    np.testing.assert_allclose(lit.dc_colors()[:, 0], want, rtol=1e-9)


def test_room_is_tagged_and_deterministic():
    a, e = cornell_room(avatar_count=200, wall_spacing=0.25)
    b, _ = cornell_room(avatar_count=200, wall_spacing=0.25)
    assert np.array_equal(a.sh, b.sh) and np.array_equal(a.means, b.means)
    for g in ("scene", "avatar", "object"):
        assert a.group_mask(g).any()
    assert e[2] == pytest.approx(2.98)


def test_timing_scene_sizes():
    s, light = timing_scene(2000, 500)
    assert len(s.select("scene")) >= 2000 and len(s.select("avatar")) == 500
    assert light.position[2] > s.means[:, 2].max()
