import numpy as np
import pytest
from hypothesis import given

from _util import random_dirs, random_scene, seeds
from dgsm import sh as shlib
from dgsm.atlas import AtlasDims, DgsmAtlas
from dgsm.build import build_dgsm, compute_roi, default_t_max
from dgsm.lights import PointLight
from dgsm.shadows import (FootprintMode, apply_shadows, dense_footprint_reference, footprint_offsets,
                          footprint_points, receiver_transmittance, receiver_transmittances, scene_transmittance)
from dgsm.splats import SplatScene
from dgsm.synthetic import shadow_scene

LIGHT = PointLight([0.0, 0.0, 3.0], 1.0, [1, 1, 1])


def const_atlas(value, light=LIGHT):
    dims = AtlasDims(16, 16, 4, 6.0)
    return DgsmAtlas(dims, light, np.full((4, 16, 16), value, np.float32))


def gray_scene(n, rgb=0.8, group="scene", degree=1, seed=0):
    rng = np.random.default_rng(seed)
    sh = np.zeros((n, (degree + 1) ** 2, 3))
    sh[:, 0] = shlib.dc_from_rgb(np.full((n, 3), rgb))
    sh[:, 1:] = rng.normal(0, 0.02, (n, sh.shape[1] - 1, 3))
    q = np.tile([1.0, 0, 0, 0], (n, 1))
    return SplatScene(rng.uniform(-1, 1, (n, 3)) * [1, 1, 0.1], q, np.full((n, 3), 0.05), np.full(n, 0.7), sh, group)


def test_parse_modes():
    assert FootprintMode.parse("center").kind == "center"
    assert FootprintMode.parse("mc:64").n == 64
    assert FootprintMode.parse("stencil:0.5").delta == 0.5
    assert str(FootprintMode.parse("stencil")) == "stencil:1"
    for bad in ("mc:0", "foo", "center:3", "stencil:-1"):
        with pytest.raises(ValueError):
            FootprintMode.parse(bad)


def test_center_uses_only_the_mean():
    z, w = footprint_offsets(FootprintMode("center"), 3)
    assert z.shape == (3, 1, 3) and np.all(z == 0) and w.tolist() == [1.0]


def test_stencil_weights():
    z, w = footprint_offsets(FootprintMode("stencil"))
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert w[0] == pytest.approx(1 / (1 + 6 * np.exp(-0.5)), abs=1e-15)
    assert round(w[0], 4) == 0.2156
    np.testing.assert_allclose(w[1:], w[1])
    np.testing.assert_allclose(np.abs(z[0]).sum(axis=1), [0] + [1] * 6)


def test_mc_points_follow_the_covariance():
    s = random_scene(np.random.default_rng(0), 1, scale=(0.05, 0.3))[0]
    pts, w = footprint_points(s, FootprintMode("mc", n=10_000, seed=3))
    emp = np.cov(pts.T)
    cov = s.covariance.sigma
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) <= 0.1
    np.testing.assert_allclose(pts.mean(axis=0), s.mean, atol=4 * s.scales.max() / 100)
    assert w.sum() == pytest.approx(1.0)


def test_mc_draws_are_seeded():
    scene = random_scene(np.random.default_rng(1), 20)
    a = receiver_transmittances(const_atlas(0.3), scene, FootprintMode("mc", n=8, seed=7))
    z1, _ = footprint_offsets(FootprintMode("mc", n=8, seed=7), 20)
    z2, _ = footprint_offsets(FootprintMode("mc", n=8, seed=7), 20)
    assert np.array_equal(z1, z2)
    np.testing.assert_allclose(a, 0.3, atol=1e-7)


@pytest.mark.parametrize("mode", ["center", "stencil", "mc:16"])
def test_unit_atlas_leaves_colors_bit_identical(mode):
    scene = SplatScene.concat([gray_scene(30), gray_scene(5, group="avatar")])
    out, t = apply_shadows(scene, [const_atlas(1.0)], FootprintMode.parse(mode), return_transmittance=True)
    assert np.all(t == 1.0)
    assert out.sh.tobytes() == scene.sh.tobytes()


def test_zero_transmittance_is_black():
    scene = gray_scene(10)
    out = apply_shadows(scene, [const_atlas(0.0)], FootprintMode("center"))
    d = random_dirs(np.random.default_rng(2), 10)
    np.testing.assert_allclose(out.colors(d), 0.0, atol=1e-12)


@given(seeds)
def test_half_transmittance_halves_gray(seed):
    scene = gray_scene(8, rgb=0.8, degree=0)
    out = apply_shadows(scene, [const_atlas(0.5)], FootprintMode("stencil"))
    d = random_dirs(np.random.default_rng(seed), 8)
    np.testing.assert_allclose(out.colors(d), 0.4, atol=1e-6)


def test_only_scene_group_is_attenuated():
    scene = SplatScene.concat([gray_scene(6), gray_scene(4, group="avatar"), gray_scene(3, group="object")])
    out = apply_shadows(scene, [const_atlas(0.25)], FootprintMode("center"))
    keep = ~scene.group_mask("scene")
    assert out.sh[keep].tobytes() == scene.sh[keep].tobytes()
    np.testing.assert_allclose(out.sh[~keep], shlib.scale_sh(scene.sh[~keep], np.full((6, 1), 0.25)), atol=1e-6)


def test_product_over_lights():
    scene = gray_scene(12)
    other = PointLight([1.0, 0.0, 3.0], 1.0, [1, 1, 1])
    t = scene_transmittance(scene, [const_atlas(0.5), const_atlas(0.6, other)], FootprintMode("mc", n=4))
    np.testing.assert_allclose(t, 0.3, atol=1e-6)
    with pytest.raises(ValueError):
        apply_shadows(scene, [])


def _edge_atlas():
    # transmittance 0 for light rays with x > 0, 1 otherwise
    dims = AtlasDims(256, 256, 4, 6.0)
    d = dims.pixel_directions()
    data = np.where(d[..., 0] > 0, 0.0, 1.0)
    return DgsmAtlas(dims, LIGHT, np.broadcast_to(data, (4, 256, 256)).astype(np.float32))


def test_footprint_straddling_an_edge_is_half_covered():
    atlas = _edge_atlas()
    s = SplatScene(np.array([[0.0, 0.5, 0.0]]), [[1.0, 0, 0, 0]], [[0.3, 0.3, 0.01]], [0.8], np.zeros((1, 1, 3)))[0]
    assert receiver_transmittance(atlas, s, FootprintMode("stencil")) == pytest.approx(0.5, abs=0.02)
    assert receiver_transmittance(atlas, s, FootprintMode("mc", n=4096)) == pytest.approx(0.5, abs=0.03)
    lit = SplatScene(np.array([[-0.5, 0.5, 0.0]]), [[1.0, 0, 0, 0]], [[0.05, 0.05, 0.01]], [0.8],
                     np.zeros((1, 1, 3)))[0]
    assert receiver_transmittance(atlas, lit, FootprintMode("mc", n=256)) == 1.0


def test_mc_matches_dense_reference_on_built_atlas():
    ss = shadow_scene("thin_plate", floor_spacing=0.05)
    occ, rec = ss.scene.select("avatar"), ss.scene.select("scene")
    roi = compute_roi(occ, 2.0, scene=rec)
    atlas = build_dgsm(ss.light, occ, rec, roi, AtlasDims(128, 128, 32, default_t_max(ss.light, roi)))
    t = receiver_transmittances(atlas, rec, FootprintMode("center"))
    edge = np.flatnonzero((t > 0.1) & (t < 0.9))[:20]
    assert len(edge) >= 5
    for i in edge:
        ref = dense_footprint_reference(atlas, rec[i])
        assert receiver_transmittance(atlas, rec[i], FootprintMode("mc", n=4096, seed=1)) == pytest.approx(ref, abs=1e-2)


def test_transmittance_range():
    ss = shadow_scene("sphere", floor_spacing=0.1, shell_count=500)
    occ, rec = ss.scene.select("avatar"), ss.scene.select("scene")
    roi = compute_roi(occ, 2.0, scene=rec)
    atlas = build_dgsm(ss.light, occ, rec, roi, AtlasDims(64, 64, 16, default_t_max(ss.light, roi)))
    for mode in ("center", "stencil", "mc:8"):
        t = receiver_transmittances(atlas, rec, FootprintMode.parse(mode))
        assert np.all((t >= 0) & (t <= 1)) and t.min() < 0.2
