import numpy as np
import pytest
from hypothesis import given, settings

from _util import random_dirs, random_scene, random_spd, seeds
from dgsm.atlas import AtlasDims, bin_centers, pixel_of, oct_encode, wrap_pixel
from dgsm.build import (ReceiverRoi, active_slab, bucket_occluders, build_dgsm, compute_roi, default_t_max,
                        footprints, occluder_footprint, slab_mask3, tangent_basis)
from dgsm.lights import PointLight
from dgsm.splats import DegenerateInputError, SplatScene
from dgsm.synthetic import plane_grid, shadow_scene, sphere_shell
from dgsm.transmittance import AbsorptionMode, absorption_betas, mixture_depth

LIGHT = PointLight([0.0, 0.0, 3.0], 1.0, [1, 1, 1])


def one_splat(mean, scales=(0.1, 0.1, 0.1), opacity=0.8, group="avatar", rot=(1.0, 0, 0, 0)):
    return SplatScene(np.array([mean], float), np.array([rot]), np.array([scales], float), [opacity],
                      np.zeros((1, 1, 3)), group)


def test_roi_examples():
    avatar = sphere_shell([1.0, -2.0, 1.0], 0.4, 500)
    roi = compute_roi(avatar, 2.0)
    np.testing.assert_allclose(roi.center, [1.0, -2.0, 1.0], atol=0.02)
    assert roi.contains([[2.9, -0.1, 1.0]])[0] and not roi.contains([[3.1, -2.0, 1.0]])[0]
    assert 0.5 - 1e-9 <= roi.z_min <= 0.55
    floor = plane_grid([1.0, -2.0, 0.0], [1.0, 0, 0], [0, 1.0, 0], 3.0, 3.0, 0.1)
    assert compute_roi(avatar, 2.0, scene=floor).z_min == pytest.approx(-0.1)
    with pytest.raises(DegenerateInputError):
        compute_roi(SplatScene.empty(), 2.0)
    with pytest.raises(ValueError):
        ReceiverRoi(np.zeros(3), 0.0, 0.0, 1.0)


def test_default_t_max_reaches_far_corner():
    roi = ReceiverRoi(np.zeros(3), 1.0, 0.0, 1.0)
    assert default_t_max(LIGHT, roi) == pytest.approx(np.sqrt(2 + 9) + 0.5)


def test_tangent_basis_orthonormal():
    d = random_dirs(np.random.default_rng(0), 500)
    d = np.concatenate([d, [[0, 0, 1.0], [0, 0, -1.0]]])
    e1, e2 = tangent_basis(d)
    for a, b in ((e1, e1), (e2, e2)):
        np.testing.assert_allclose(np.einsum("ij,ij->i", a, b), 1, atol=1e-12)
    for a, b in ((e1, e2), (e1, d), (e2, d)):
        np.testing.assert_allclose(np.einsum("ij,ij->i", a, b), 0, atol=1e-12)


def test_footprint_radius_rule():
    dims = AtlasDims(256, 256, 8, 10.0)
    rho = (256 + 256) / (2 * np.pi)
    near = occluder_footprint(one_splat([1.0, 0.5, 1.0], (0.05, 0.05, 0.05))[0], LIGHT, dims)
    D = np.linalg.norm([1.0, 0.5, -2.0])
    np.testing.assert_allclose(near.radii, 3 * 0.05 * rho / D, rtol=1e-9)
    rel = np.array([1.0, 0.5, -2.0])
    far = occluder_footprint(one_splat(LIGHT.position + 2 * rel, (0.05, 0.05, 0.05))[0], LIGHT, dims)
    np.testing.assert_allclose(far.radii, near.radii / 2, rtol=1e-9)


def test_footprint_ignores_extent_along_the_ray():
    dims = AtlasDims(128, 128, 8, 10.0)
    long_z = occluder_footprint(one_splat([0, 0, 1.0], (0.02, 0.02, 0.5))[0], LIGHT, dims)
    long_x = occluder_footprint(one_splat([0, 0, 1.0], (0.5, 0.02, 0.02))[0], LIGHT, dims)
    rho = 256 / (2 * np.pi)
    np.testing.assert_allclose(long_z.radii, 3 * 0.02 * rho / 2.0, rtol=1e-9)
    assert long_x.radii[0] == pytest.approx(3 * 0.5 * rho / 2.0)
    assert long_x.radii[1] == pytest.approx(3 * 0.02 * rho / 2.0)


def test_emitter_footprint_rejected():
    with pytest.raises(ValueError):
        occluder_footprint(one_splat(LIGHT.position)[0], LIGHT, AtlasDims(8, 8, 2, 1.0))


def _hit_pixels(mean, cov, light, dims, k):
    """Pixels whose center ray passes within k sigma of the Gaussian (brute force)."""
    d = dims.pixel_directions().reshape(-1, 3)
    P = np.linalg.inv(cov)
    e = light - mean
    a = np.einsum("ij,jk,ik->i", d, P, d)
    b = d @ (P @ e)
    c = e @ P @ e
    t_star = -b / a
    resid = c - b * b / a
    hit = (resid <= k * k) & (t_star > 0)
    return np.flatnonzero(hit)


@settings(max_examples=15)
@given(seeds)
def test_buckets_cover_every_reached_pixel(seed):
    rng = np.random.default_rng(seed)
    H = W = 64
    dims = AtlasDims(H, W, 4, 8.0)
    n = 40
    light = np.array([0.0, 0.0, 3.0])
    means = rng.normal(0, 1.0, (n, 3))
    covs = np.stack([random_spd(rng, 100, (0.02, 0.1)) for _ in range(n)])
    fps = footprints(means, covs, light, dims, k_sigma=3.0)
    b = bucket_occluders(fps, dims, tile=8)
    for i in range(n):
        tiles = {(int(tx), int(ty)) for ty in range(b.tiles_y) for tx in range(b.tiles_x) if i in b.members(tx, ty)}
        for p in _hit_pixels(means[i], covs[i], light, dims, 3.0):
            r, c = divmod(int(p), W)
            assert (c // 8, r // 8) in tiles


def test_bucket_examples():
    dims = AtlasDims(32, 32, 4, 8.0)
    fps = footprints(np.array([[0.0, 0, 0]]), np.eye(3)[None] * 1e-4, np.array([0, 0, 3.0]), dims)
    b = bucket_occluders(fps, dims, tile=8)
    # straight below the light is the far corner region of the atlas: u, v -> +-1
    occupied = [(tx, ty) for ty in range(4) for tx in range(4) if len(b.members(tx, ty))]
    assert all(tx in (0, 3) and ty in (0, 3) for tx, ty in occupied)
    assert len(occupied) >= 1


def test_buckets_match_per_pixel_wrapping():
    rng = np.random.default_rng(6)
    H = W = 40
    dims = AtlasDims(H, W, 4, 6.0)
    n = 100
    fps = footprints(rng.normal(0, 1.0, (n, 3)), np.stack([random_spd(rng, 50) * 0.05 for _ in range(n)]),
                     np.array([0.0, 0.0, 3.0]), dims)
    b = bucket_occluders(fps, dims, tile=8)
    for i in range(n):
        c0, c1, r0, r1 = fps.rect[i]
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
        wr, wc = wrap_pixel(rr.ravel(), cc.ravel(), H, W)
        want = set(zip((wc // 8).tolist(), (wr // 8).tolist()))
        got = {(tx, ty) for ty in range(b.tiles_y) for tx in range(b.tiles_x) if i in b.members(tx, ty)}
        assert want == got


def test_active_slab_single_receiver():
    dims = AtlasDims(64, 64, 32, 8.0)
    rec = one_splat([0.3, 0.2, 0.0], (0.01, 0.01, 0.01), group="scene")
    roi = ReceiverRoi(np.zeros(3), 1.0, -0.5, 0.5)
    slab = active_slab(rec, roi, LIGHT, dims)
    r, c = pixel_of(oct_encode(rec.means[0] - LIGHT.position), 64, 64)
    assert slab.mask[int(r), int(c)]
    assert slab.mask.sum() <= 16
    D = np.linalg.norm(rec.means[0] - LIGHT.position)
    k = int(D * 32 / 8.0)
    assert slab.k_min <= k <= slab.k_max and slab.k_max - slab.k_min <= 3


def test_active_slab_empty_cases():
    dims = AtlasDims(16, 16, 8, 8.0)
    roi = ReceiverRoi(np.zeros(3), 1.0, -0.5, 0.5)
    assert active_slab(SplatScene.empty(), roi, LIGHT, dims).empty
    assert active_slab(one_splat([5.0, 0, 0], group="scene"), roi, LIGHT, dims).empty


def test_active_slab_contains_brute_force_receiver_pixels():
    rng = np.random.default_rng(1)
    rec = random_scene(rng, 300, spread=0.8, scale=(0.005, 0.03))
    dims = AtlasDims(96, 96, 24, 8.0)
    roi = ReceiverRoi(np.zeros(3), 1.0, -1.0, 1.0)
    slab = active_slab(rec, roi, LIGHT, dims)
    inside = roi.contains(rec.means)
    rel = rec.means[inside] - LIGHT.position
    r, c = pixel_of(oct_encode(rel), 96, 96)
    assert slab.mask[r, c].all()
    k = np.floor(np.linalg.norm(rel, axis=1) * 24 / 8.0)
    assert slab.k_min <= k.min() and k.max() <= slab.k_max


def test_no_occluders_gives_ones():
    ss = shadow_scene("sphere", floor_spacing=0.2, shell_count=50)
    rec = ss.scene.select("scene")
    roi = compute_roi(ss.scene.select("avatar"), 2.0, scene=rec)
    a = build_dgsm(ss.light, SplatScene.empty(), rec, roi, AtlasDims(16, 16, 4, 5.0))
    assert np.all(a.data == 1.0)


@pytest.mark.parametrize("mode", ["simple", "traceavg", "diag"])
def test_single_occluder_matches_closed_form(mode):
    dims = AtlasDims(24, 24, 12, 6.0)
    occ = one_splat([0.2, -0.1, 1.5], (0.3, 0.2, 0.1), rot=(0.9, 0.1, 0.3, 0.2))
    rec = plane_grid([0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], 2.0, 2.0, 0.25)
    roi = ReceiverRoi(np.zeros(3), 2.0, -0.2, 2.0)
    am = AbsorptionMode(mode)
    a = build_dgsm(LIGHT, occ, rec, roi, dims, absorption=am, roi_cull=False, tile_cull=False)
    beta = absorption_betas(occ, am)
    rng = np.random.default_rng(2)
    t = bin_centers(12, 6.0)
    for _ in range(30):
        r, c, k = rng.integers(0, 24), rng.integers(0, 24), rng.integers(0, 12)
        d = dims.pixel_directions()[r, c]
        tau = mixture_depth(occ.means, occ.precisions(), beta, LIGHT.position, d, t[k])
        assert a.data[k, r, c] == pytest.approx(np.exp(-tau), abs=1e-6)


def test_transmittance_nonincreasing_in_bins():
    ss = shadow_scene("two_spheres", floor_spacing=0.2, shell_count=200)
    rec, occ = ss.scene.select("scene"), ss.scene.select("avatar")
    roi = compute_roi(occ, 2.0, scene=rec)
    a = build_dgsm(ss.light, occ, rec, roi, AtlasDims(32, 32, 16, default_t_max(ss.light, roi)))
    assert np.all(np.diff(a.data.astype(np.float64), axis=0) <= 1e-7)
    assert a.data.min() < 0.5


@pytest.mark.parametrize("name", ["sphere", "grazing"])
def test_culled_matches_full_on_slab(name):
    ss = shadow_scene(name, floor_spacing=0.1, shell_count=300)
    occ, rec = ss.scene.select("avatar"), ss.scene.select("scene")
    roi = compute_roi(occ, 2.0, scene=rec)
    dims = AtlasDims(48, 48, 16, default_t_max(ss.light, roi))
    full = build_dgsm(ss.light, occ, rec, roi, dims, roi_cull=False, tile_cull=False)
    cull = build_dgsm(ss.light, occ, rec, roi, dims)
    m = slab_mask3(cull, cull.stats["slab"])
    assert np.abs(cull.data[m] - full.data[m]).max() <= 1e-3
    assert np.all(cull.data[~m] == 1.0)
    # culling only ever drops absorption
    assert np.all(cull.data >= full.data - 1e-7)


def test_emitter_is_excluded():
    occ = SplatScene.concat([one_splat(LIGHT.position, (0.2, 0.2, 0.2), 0.99), one_splat([0, 0, 1.0])])
    rec = plane_grid([0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], 1.0, 1.0, 0.2)
    roi = ReceiverRoi(np.zeros(3), 1.0, -0.2, 1.5)
    a = build_dgsm(LIGHT, occ, rec, roi, AtlasDims(16, 16, 8, 5.0))
    assert a.stats["emitter_excluded"] == 1
    ref = build_dgsm(LIGHT, occ.subset([1]), rec, roi,
                     AtlasDims(16, 16, 8, 5.0))
    np.testing.assert_array_equal(a.data, ref.data)


def test_build_is_deterministic():
    ss = shadow_scene("box", floor_spacing=0.1)
    occ, rec = ss.scene.select("avatar"), ss.scene.select("scene")
    roi = compute_roi(occ, 2.0, scene=rec)
    dims = AtlasDims(32, 32, 8, default_t_max(ss.light, roi))
    a = build_dgsm(ss.light, occ, rec, roi, dims)
    b = build_dgsm(ss.light, occ, rec, roi, dims)
    assert a.data.tobytes() == b.data.tobytes()
