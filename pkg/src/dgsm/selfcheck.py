"""Built-in oracle suites, run by ``dgsm selfcheck``.

Each suite compares a production code path against an independent
reference (quadrature, brute force, a closed form) on small inputs and
returns quickly. The full property tests live in tests/.
"""

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.spatial.transform import Rotation

from . import sh as shlib


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def _random_spd(rng, cond_max=1e4):
    r = Rotation.random(random_state=rng).as_matrix()
    lo = rng.uniform(0.05, 0.5)
    ev = lo * np.array([1.0, rng.uniform(1, np.sqrt(cond_max)), rng.uniform(1, np.sqrt(cond_max))])
    return r @ np.diag(ev**2) @ r.T


def _random_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def check_closed_form_depth():
    from .transmittance import ray_quadratic, segment_depth

    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(300):
        cov = _random_spd(rng)
        P = np.linalg.inv(cov)
        mu = rng.normal(0, 1, 3)
        o = rng.normal(0, 2, 3)
        d = _random_dirs(rng, 1)[0]
        beta = rng.uniform(0.1, 20)
        t = rng.uniform(0, 6)
        q = ray_quadratic(mu, P, o, d)
        f = lambda s: beta * np.exp(-0.5 * (q.a * s * s + 2 * q.b * s + q.c))
        peak = -q.b / q.a
        ref, _ = integrate.quad(f, 0, t, points=[peak] if 0 < peak < t else None, epsabs=1e-13, epsrel=1e-12, limit=200)
        tau = segment_depth(q, beta, 0.0, t)
        worst = max(worst, abs(tau - ref) / (1 + ref))
    return worst <= 1e-6, f"max |tau - quad| / (1 + tau) = {worst:.2e}"


def check_segment_additivity():
    from .transmittance import ray_quadratic, segment_depth

    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        P = np.linalg.inv(_random_spd(rng, 1e3))
        q = ray_quadratic(rng.normal(0, 1, 3), P, rng.normal(0, 2, 3), _random_dirs(rng, 1)[0])
        t0, t1, t2 = np.sort(rng.uniform(0, 5, 3))
        whole = segment_depth(q, 1.0, t0, t2)
        parts = segment_depth(q, 1.0, t0, t1) + segment_depth(q, 1.0, t1, t2)
        worst = max(worst, abs(whole - parts))
    return worst <= 1e-12, f"max split gap {worst:.2e}"


def check_scale_invariance():
    from .splats import Covariance3
    from .transmittance import AbsorptionMode, mixture_depth, opacity_to_absorption

    depths = []
    for s in np.geomspace(0.01, 10, 7):
        cov = Covariance3.from_matrix(np.eye(3) * s * s)
        beta = opacity_to_absorption(0.7, cov, AbsorptionMode("traceavg"))
        o = np.array([0.0, 0.0, -60.0 * s])
        depths.append(mixture_depth(np.zeros(3), cov.precision[None], [beta], o, np.array([0, 0, 1.0]), 120.0 * s))
    spread = max(depths) - min(depths)
    return spread <= 1e-9, f"center-ray depth spread {spread:.2e} over 7 scales"


def check_oct_round_trip():
    from .atlas import oct_decode, oct_encode

    d = _random_dirs(np.random.default_rng(3), 100_000)
    back = oct_decode(oct_encode(d))
    err = np.arccos(np.clip(np.sum(d * back, axis=1), -1, 1)).max()
    return err <= 1e-7, f"max angular error {err:.2e} rad"


def _field(dirs, t):
    return 0.5 + 0.3 * dirs[..., 0] * dirs[..., 2] + 0.1 * dirs[..., 1] + 0.05 * t


def _field_atlas(H, W, K, t_max=4.0):
    from .atlas import AtlasDims, DgsmAtlas, bin_centers
    from .lights import PointLight

    dims = AtlasDims(H, W, K, t_max)
    d = dims.pixel_directions()
    t = bin_centers(K, t_max)
    data = _field(d[None], t[:, None, None])
    return DgsmAtlas(dims, PointLight(np.zeros(3), 1.0, np.ones(3)), data)


def check_seam_sampling():
    atlas = _field_atlas(64, 64, 8)
    rng = np.random.default_rng(4)
    # directions close to the lower-hemisphere fold, where lookups wrap
    d = _random_dirs(rng, 4000)
    d[:, 2] = -np.abs(d[:, 2]) * 0.05 - 0.999 * (rng.random(4000) < 0.5)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t = rng.uniform(0.5, 3.5, len(d))
    err = np.abs(atlas.sample(d, t) - _field(d, t)).max()
    return err <= 0.01, f"max error near the seam {err:.2e} at 64x64"


def check_atlas_file_round_trip():
    from .atlas import deserialize, serialize

    atlas = _field_atlas(16, 16, 4)
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "a.dgsm"
        serialize(atlas, p)
        back = deserialize(p)
    same = np.array_equal(back.data, atlas.data) and back.dims == atlas.dims
    same &= np.allclose(back.light.position, atlas.light.position)
    return bool(same), "bit-identical payload and header"


def check_sampling_convergence():
    rng = np.random.default_rng(5)
    d = _random_dirs(rng, 20000)
    t = rng.uniform(0.3, 3.7, len(d))
    errs = []
    for H, K in ((32, 8), (64, 16)):
        a = _field_atlas(H, H, K)
        errs.append(np.abs(a.sample(d, t) - _field(d, t)).mean())
    return errs[1] < errs[0], f"mean error {errs[0]:.2e} -> {errs[1]:.2e}"


def check_culling_equivalence():
    from .atlas import AtlasDims
    from .build import build_dgsm, compute_roi, default_t_max, slab_mask3
    from .synthetic import shadow_scene

    ss = shadow_scene("sphere", floor_spacing=0.1, shell_count=300)
    occ, rec = ss.scene.select("avatar"), ss.scene.select("scene")
    roi = compute_roi(occ, 2.0, scene=rec)
    dims = AtlasDims(48, 48, 16, default_t_max(ss.light, roi))
    full = build_dgsm(ss.light, occ, rec, roi, dims, roi_cull=False, tile_cull=False)
    cull = build_dgsm(ss.light, occ, rec, roi, dims)
    m = slab_mask3(cull, cull.stats["slab"])
    gap = float(np.abs(cull.data[m] - full.data[m]).max())
    outside_ones = bool(np.all(cull.data[~m] == 1.0))
    return gap <= 1e-3 and outside_ones, f"max |dT| on slab {gap:.2e}; off-slab entries exactly 1: {outside_ones}"


def check_tile_buckets():
    from .atlas import AtlasDims, wrap_pixel
    from .build import bucket_occluders, footprints

    rng = np.random.default_rng(6)
    H = W = 40
    n = 200
    means = rng.normal(0, 1.0, (n, 3))
    covs = np.stack([_random_spd(rng, 50) * 0.05 for _ in range(n)])
    fps = footprints(means, covs, np.array([0.0, 0.0, 3.0]), AtlasDims(H, W, 4, 6.0))
    b = bucket_occluders(fps, AtlasDims(H, W, 4, 6.0), tile=8)
    bad = 0
    for i in range(n):
        c0, c1, r0, r1 = fps.rect[i]
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
        wr, wc = wrap_pixel(rr.ravel(), cc.ravel(), H, W)
        want = set(zip((wc // 8).tolist(), (wr // 8).tolist()))
        got = {(tx, ty) for ty in range(b.tiles_y) for tx in range(b.tiles_x) if i in b.members(tx, ty)}
        bad += want != got
    return bad == 0, f"{bad} of {n} occluders with a tile set differing from per-pixel wrapping"


def check_stencil_weights():
    from .shadows import FootprintMode, footprint_offsets

    _, w = footprint_offsets(FootprintMode("stencil"))
    ref = 1.0 / (1.0 + 6.0 * np.exp(-0.5))
    ok = abs(w.sum() - 1) < 1e-12 and abs(w[0] - ref) < 1e-12 and abs(w[0] - 0.2156) < 5e-5
    return ok, f"center weight {w[0]:.6f}, sum {w.sum():.12f}"


def check_sh_orthonormality():
    from .probe import latlong_grid

    d, w = latlong_grid(256, 512)
    B = shlib.sh_basis(d, 3)
    G = (B * w[:, None]).T @ B
    err = np.abs(G - np.eye(16)).max()
    return err <= 1e-3, f"max |<Y_i, Y_j> - delta_ij| {err:.2e} by quadrature"


def check_probe_fit():
    from .probe import CubemapSamples, cubemap_directions, fit_sh

    rng = np.random.default_rng(7)
    coeffs = rng.normal(0, 0.3, (16, 3))
    coeffs[0] = 3.0
    D, w = cubemap_directions(32)
    Y = shlib.sh_basis(D, 3) @ coeffs
    fit = fit_sh(CubemapSamples(Y, D, w, 32), 3, lam=1e-8)
    err = np.abs(fit.coeffs - coeffs).max()
    const = fit_sh(CubemapSamples(np.ones((len(D), 3)), D, w, 32), 3, lam=1e-8).coeffs[0]
    ok = err <= 1e-3 and np.abs(const - 2 * np.sqrt(np.pi)).max() <= 1e-6
    return ok, f"max coefficient error {err:.2e}; constant-field c00 {const[0]:.8f}"


def check_solid_angles():
    from .probe import cubemap_directions

    _, w = cubemap_directions(16)
    rel = abs(w.sum() / (4 * np.pi) - 1)
    return rel <= 5e-3, f"sum of texel solid angles off 4 pi by {rel:.2e}"


def check_relight_constant():
    from .probe import ShProbe, TransferParams, relight_scales

    coeffs = np.zeros((16, 3))
    coeffs[0] = 2 * np.sqrt(np.pi)  # unit radiance
    n = _random_dirs(np.random.default_rng(8), 500)
    s = relight_scales(ShProbe(3, coeffs), n, TransferParams())
    err = np.abs(s - 1).max()
    return err <= 1e-3, f"max |s - 1| {err:.2e} under a constant white environment"


def check_metric_identities():
    from .metrics import apf_y, fit_factorized_sh, ncm_ab, paa_y, shadow_metrics

    rng = np.random.default_rng(9)
    n = _random_dirs(rng, 400)
    c = np.zeros(16)
    c[0], c[2], c[3] = 2 * np.sqrt(np.pi), 1.0, 0.4
    y = shlib.sh_basis(n, 3) @ c + 0.5
    y = np.maximum(y, 0.05)
    fit = fit_factorized_sh(y, n)
    fit3 = fit_factorized_sh(3 * y, n)
    rgb = rng.uniform(0, 1, (50, 3))
    S = rng.uniform(0, 1, (32, 32))
    rep = shadow_metrics(S, S)
    vals = [paa_y(fit.coeffs, fit.coeffs), apf_y(fit.coeffs, n, shlib.sh_basis(n, 3) @ fit.coeffs),
            ncm_ab(rgb, rgb), rep.sae]
    inv = paa_y(fit.coeffs, fit3.coeffs)
    ok = max(abs(v) for v in vals) <= 1e-9 and rep.sm_iou == 1 and rep.bf == 1 and inv <= 1e-6
    return ok, f"identity values {max(abs(v) for v in vals):.1e}; PAA-Y under 3x luminance {inv:.1e}"


def check_ply_round_trip():
    from .ply import load_splat_ply, save_splat_ply
    from .synthetic import sphere_shell

    s = sphere_shell([0, 0, 1], 0.3, 50)
    sh = np.random.default_rng(10).normal(0, 0.2, (50, 16, 3))
    s = s.replace(sh=sh)
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "s.ply"
        save_splat_ply(s, p)
        back = load_splat_ply(p, "avatar")
    errs = [np.abs(back.means - s.means).max(), np.abs(back.scales / s.scales - 1).max(),
            np.abs(back.opacities - s.opacities).max(), np.abs(back.sh - s.sh).max()]
    return max(errs) <= 1e-5, f"max field error {max(errs):.1e} (float32 storage)"


def check_config():
    from . import config as cfglib

    cfg = cfglib.PipelineConfig()
    text = cfglib.dumps(cfg)
    same = cfglib.dumps(cfglib.loads(text)) == text
    rejected = 0
    for bad in ("[absorption]\nkappa = -1.0\n", "[atlas]\nbogus = 1\n", "[probe]\ndegree = 7\n"):
        try:
            cfglib.loads(bad)
        except cfglib.ConfigError:
            rejected += 1
    return same and rejected == 3, f"round trip identical: {same}; invalid configs rejected: {rejected}/3"


SUITES = [
    ("closed-form depth vs quadrature", check_closed_form_depth),
    ("segment additivity", check_segment_additivity),
    ("TraceAvg scale invariance", check_scale_invariance),
    ("octahedral round trip", check_oct_round_trip),
    ("seam-crossing atlas lookups", check_seam_sampling),
    ("atlas file round trip", check_atlas_file_round_trip),
    ("atlas sampling convergence", check_sampling_convergence),
    ("culled vs full build", check_culling_equivalence),
    ("tile buckets vs per-pixel wrap", check_tile_buckets),
    ("stencil weights", check_stencil_weights),
    ("SH orthonormality", check_sh_orthonormality),
    ("SH probe fit recovery", check_probe_fit),
    ("cubemap solid angles", check_solid_angles),
    ("relight under constant light", check_relight_constant),
    ("metric identities", check_metric_identities),
    ("PLY round trip", check_ply_round_trip),
    ("config round trip and validation", check_config),
]


def run_selfcheck(log=print):
    results = []
    for name, fn in SUITES:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing suite is a failed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
        if log:
            log(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    if log:
        n_ok = sum(r.ok for r in results)
        log(f"{n_ok}/{len(results)} suites passed")
    return results
