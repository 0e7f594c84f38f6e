import numpy as np
import pytest
from hypothesis import given

from _util import random_dirs, unit_vectors
from dgsm.atlas import (AtlasDims, AtlasFormatError, DgsmAtlas, Layout, bin_center, bin_centers, cube_face_coords,
                        cube_face_dirs, cube_pixel_directions, deserialize, dir_of_pixel, oct_decode, oct_encode,
                        pixel_of, serialize, uv_of_pixel, wrap_pixel)
from dgsm.lights import PointLight

LIGHT = PointLight(np.array([0.5, -1.0, 2.0]), 3.0, np.array([1.0, 0.9, 0.8]))


def field(d, t):
    return 0.5 + 0.3 * d[..., 0] * d[..., 2] + 0.1 * d[..., 1] + 0.05 * t


def tabulate(dims, fn=field):
    d = dims.pixel_directions()
    t = bin_centers(dims.K, dims.t_max)
    return DgsmAtlas(dims, LIGHT, fn(d[None], t[:, None, None]))


def test_encode_examples():
    np.testing.assert_array_equal(oct_encode([0, 0, 1.0]), [0, 0])
    np.testing.assert_array_equal(oct_encode([1.0, 0, 0]), [1, 0])
    np.testing.assert_array_equal(oct_encode([0, 0, -1.0]), [1, 1])
    with pytest.raises(ValueError):
        oct_encode([0, 0, 0.0])


def test_decode_examples():
    np.testing.assert_array_equal(oct_decode([0, 0]), [0, 0, 1])
    np.testing.assert_allclose(oct_decode([0.5, 0.5]), [np.sqrt(0.5), np.sqrt(0.5), 0], atol=1e-15)


def test_round_trip_many():
    d = random_dirs(np.random.default_rng(0), 10_000)
    np.testing.assert_allclose(oct_decode(oct_encode(d)), d, atol=1e-12)


@given(unit_vectors)
def test_round_trip_property(d):
    back = oct_decode(oct_encode(d))
    assert np.arccos(np.clip(back @ d, -1, 1)) <= 1e-7


def test_pixel_conventions():
    np.testing.assert_array_equal(uv_of_pixel(np.zeros(2, int), np.arange(2), 2, 2)[:, 0], [-0.5, 0.5])
    r, c = pixel_of(oct_encode(np.array([0, 0, 1.0])), 256, 256)
    assert (int(r), int(c)) == (128, 128)
    rows, cols = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    rr, cc = pixel_of(oct_encode(dir_of_pixel(rows, cols, 16, 16)), 16, 16)
    np.testing.assert_array_equal(rr, rows)
    np.testing.assert_array_equal(cc, cols)
    with pytest.raises(IndexError):
        uv_of_pixel(16, 0, 16, 16)


def test_wrap_pixel_matches_fold():
    # a tap one pixel past the edge is the texel whose center decodes closest to
    # continuing the direction across the fold
    H = W = 32
    for r in range(H):
        for c_out, c_in in ((-1, 0), (W, W - 1)):
            rr, cc = wrap_pixel(r, c_out, H, W)
            assert int(cc) == c_in and int(rr) == H - 1 - r
    rr, cc = wrap_pixel(np.array([-1, H]), np.array([3, 3]), H, W)
    np.testing.assert_array_equal(rr, [0, H - 1])
    np.testing.assert_array_equal(cc, [W - 4, W - 4])


def test_bins():
    assert bin_center(0, 4, 4.0) == 0.5
    assert bin_center(7, 8, 4.0) == pytest.approx(4.0 - 4.0 / 16)
    assert bin_center(0, 1, 3.0) == 1.5
    with pytest.raises(IndexError):
        bin_center(4, 4, 1.0)


def test_constant_atlas():
    a = DgsmAtlas(AtlasDims(8, 8, 4, 3.0), LIGHT, np.full((4, 8, 8), 0.5))
    rng = np.random.default_rng(1)
    np.testing.assert_array_equal(a.sample(random_dirs(rng, 500), rng.uniform(0, 5, 500)), 0.5)
    ones = DgsmAtlas(AtlasDims(8, 8, 4, 3.0), LIGHT)
    assert np.all(ones.sample(random_dirs(rng, 500), rng.uniform(0, 5, 500)) == 1.0)


@pytest.mark.parametrize("layout", ["oct", "cube"])
def test_exact_at_texel_and_bin_centers(layout):
    dims = AtlasDims(16, 16, 6, 3.0) if layout == "oct" else AtlasDims.cubemap(8, 6, 3.0)
    a = tabulate(dims)
    rng = np.random.default_rng(2)
    rows = rng.integers(0, dims.H, 200)
    cols = rng.integers(0, dims.W, 200)
    ks = rng.integers(0, dims.K, 200)
    d = dims.pixel_directions()[rows, cols]
    got = a.sample(d, bin_centers(dims.K, dims.t_max)[ks])
    np.testing.assert_allclose(got, a.data[ks, rows, cols], atol=1e-6)


def test_radial_linear_field_within_bound():
    t_max, K = 4.0, 16
    dims = AtlasDims(32, 32, K, t_max)
    a = tabulate(dims, lambda d, t: np.exp(-t / t_max) + 0 * d[..., 0])
    rng = np.random.default_rng(3)
    t = rng.uniform(0, t_max, 5000)
    err = np.abs(a.sample(random_dirs(rng, 5000), t) - np.exp(-t / t_max))
    assert err.max() <= 2 * (t_max / K) / t_max


def test_radial_clamping():
    dims = AtlasDims(8, 8, 4, 4.0)
    a = tabulate(dims, lambda d, t: t + 0 * d[..., 0])
    d = np.array([[0, 0, 1.0]] * 2)
    np.testing.assert_allclose(a.sample(d, [0.0, 100.0]), [0.5, 3.5], atol=1e-6)


def test_seam_continuity():
    dims = AtlasDims(64, 64, 4, 4.0)
    a = tabulate(dims)
    rng = np.random.default_rng(4)
    eps = 1e-4
    # pairs straddling y = 0 in the lower hemisphere cross the u = +-1 atlas edge
    x = rng.uniform(-1, 1, 2000)
    z = -rng.uniform(0.05, 1, 2000)
    base = np.stack([x, np.zeros_like(x), z], 1)
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    off = np.cross(base, [1.0, 0, 0])
    off /= np.linalg.norm(off, axis=1, keepdims=True)
    p, m = base + 0.5 * eps * off, base - 0.5 * eps * off
    t = rng.uniform(0.5, 3.5, len(x))
    seam = np.abs(a.sample(p, t) - a.sample(m, t))
    # interior pairs at the same separation give the interpolant's Lipschitz scale
    q = random_dirs(rng, 20000)
    q = q[q[:, 2] > 0.2]
    step = np.cross(q, random_dirs(rng, len(q)))
    step /= np.linalg.norm(step, axis=1, keepdims=True)
    tq = rng.uniform(0.5, 3.5, len(q))
    interior = np.abs(a.sample(q + 0.5 * eps * step, tq) - a.sample(q - 0.5 * eps * step, tq))
    assert seam.max() <= 2 * interior.max()


def test_error_halves_with_resolution():
    rng = np.random.default_rng(5)
    d = random_dirs(rng, 100_000)
    t = rng.uniform(0.2, 3.8, len(d))
    errs = [np.abs(tabulate(AtlasDims(n, n, k, 4.0)).sample(d, t) - field(d, t)).max() for n, k in ((128, 16), (256, 32))]
    assert 0.4 <= errs[1] / errs[0] <= 0.6


def test_cube_face_round_trip():
    d = random_dirs(np.random.default_rng(6), 2000)
    f, s, t = cube_face_coords(d)
    np.testing.assert_allclose(cube_face_dirs(f, s, t), d, atol=1e-12)
    np.testing.assert_array_equal(cube_face_coords(np.eye(3))[0], [0, 2, 4])
    np.testing.assert_array_equal(cube_face_coords(-np.eye(3))[0], [1, 3, 5])
    assert cube_pixel_directions(4).shape == (24, 4, 3)


def test_dims_validation():
    with pytest.raises(ValueError):
        AtlasDims(10, 4, 2, 1.0, Layout.CUBEMAP)
    with pytest.raises(ValueError):
        AtlasDims(4, 4, 0, 1.0)
    assert Layout.parse("cube") is Layout.CUBEMAP


@pytest.mark.parametrize("layout", ["oct", "cube"])
def test_file_round_trip(tmp_path, layout):
    dims = AtlasDims(12, 10, 3, 2.5) if layout == "oct" else AtlasDims.cubemap(5, 3, 2.5)
    a = tabulate(dims)
    serialize(a, tmp_path / "a.dgsm")
    b = deserialize(tmp_path / "a.dgsm")
    assert b.dims == a.dims
    np.testing.assert_array_equal(b.data, a.data)
    np.testing.assert_allclose(b.light.position, LIGHT.position, rtol=1e-7)
    serialize(b, tmp_path / "b.dgsm")
    assert (tmp_path / "a.dgsm").read_bytes() == (tmp_path / "b.dgsm").read_bytes()


def test_file_errors(tmp_path):
    a = tabulate(AtlasDims(4, 4, 2, 1.0))
    serialize(a, tmp_path / "a.dgsm")
    blob = (tmp_path / "a.dgsm").read_bytes()
    (tmp_path / "magic.dgsm").write_bytes(b"XXXX" + blob[4:])
    (tmp_path / "short.dgsm").write_bytes(blob[:-4])
    (tmp_path / "head.dgsm").write_bytes(blob[:10])
    for name, msg in (("magic", "magic"), ("short", "payload"), ("head", "truncated")):
        with pytest.raises(AtlasFormatError, match=msg):
            deserialize(tmp_path / f"{name}.dgsm")
