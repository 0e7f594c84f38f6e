"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary (see conftest.py).
"""

import filecmp
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from _util import random_dirs, random_spd
from dgsm import sh as shlib
from dgsm.ablation import AblationConfig, orderings, run_ablation, run_timing
from dgsm.atlas import AtlasDims, DgsmAtlas, bin_centers, oct_decode, oct_encode
from dgsm.config import PipelineConfig
from dgsm.lights import PointLight
from dgsm.metrics import apf_y, fit_factorized_sh, ncm_ab, paa_y, shadow_metrics
from dgsm.pipeline import run_pipeline
from dgsm.probe import (CubemapSamples, ShProbe, apply_relight, contract, cubemap_directions, fit_sh, latlong_grid,
                        relight_scales)
from dgsm.splats import Covariance3
from dgsm.synthetic import SHADOW_SCENES, sphere_shell
from dgsm.transmittance import AbsorptionMode, mixture_depth, opacity_to_absorption, segment_depths

DC = 2 * np.sqrt(np.pi)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def ablation_rows():
    return run_ablation(AblationConfig(parts=("A", "C")), log=None)


def test_c01_closed_form_depth_vs_quadrature(acceptance):
    t_start = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 10_000
    covs = np.stack([random_spd(rng, 1e4) for _ in range(n)])
    cond = np.linalg.cond(covs).max()
    P = np.linalg.inv(covs)
    mu = rng.normal(0, 1, (n, 3))
    d = random_dirs(rng, n)
    # half the rays pass close to the mean so most depths are far from zero
    o = rng.normal(0, 2, (n, 3))
    near = rng.random(n) < 0.5
    o[near] = mu[near] - 3 * d[near] + rng.normal(0, 0.1, (near.sum(), 3))
    beta = rng.uniform(0.1, 20, n)
    t = rng.uniform(0, 6, n)
    r = o - mu
    a = np.einsum("ni,nij,nj->n", d, P, d)
    b = np.einsum("ni,nij,nj->n", d, P, r)
    c = np.einsum("ni,nij,nj->n", r, P, r)
    tau = segment_depths(a, b, c, beta, 0.0, t)
    worst = 0.0
    for i in range(n):
        peak = -b[i] / a[i]
        ref, _ = integrate.quad(lambda s: beta[i] * np.exp(-0.5 * (a[i] * s * s + 2 * b[i] * s + c[i])), 0, t[i],
                                points=[peak] if 0 < peak < t[i] else None, epsabs=1e-13, epsrel=1e-12, limit=200)
        worst = max(worst, abs(tau[i] - ref) / (1 + tau[i]))
    secs = time.perf_counter() - t_start
    ok = worst <= 1e-6 and secs <= 30 and cond <= 1e4 * (1 + 1e-9)
    acceptance(1, ok, f"max |tau - quad|/(1+tau) = {worst:.2e} over {n} cases "
                      f"(median tau {np.median(tau):.3g}, max cond {cond:.4g}), {secs:.1f}s")
    assert ok


def test_c02_traceavg_scale_invariance(acceptance):
    depths = []
    for s in (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0):
        cov = Covariance3.from_matrix(np.eye(3) * s * s)
        beta = opacity_to_absorption(0.7, cov, AbsorptionMode("traceavg"))
        o = np.array([0.0, 0.0, -60.0 * s])
        depths.append(mixture_depth(np.zeros(3), cov.precision[None], [beta], o, np.array([0, 0, 1.0]), 120.0 * s))
    spread = max(depths) - min(depths)
    ok = spread <= 1e-9
    acceptance(2, ok, f"center-ray depth {depths[0]:.12f}, spread {spread:.2e} over s in [0.01, 10]")
    assert ok


def _field(dirs, t):
    # smooth in direction, linear in distance
    return 0.5 + 0.3 * dirs[..., 0] * dirs[..., 2] + 0.1 * dirs[..., 1] + 0.05 * t


def _field_atlas(H, K, t_max=4.0):
    dims = AtlasDims(H, H, K, t_max)
    data = _field(dims.pixel_directions()[None], bin_centers(K, t_max)[:, None, None])
    return DgsmAtlas(dims, PointLight(np.zeros(3), 1.0, np.ones(3)), data)


def test_c03_octahedral_round_trip_and_convergence(acceptance):
    rng = np.random.default_rng(3)
    d = random_dirs(rng, 100_000)
    back = oct_decode(oct_encode(d))
    ang = np.arctan2(np.linalg.norm(np.cross(d, back), axis=1), np.sum(d * back, axis=1)).max()
    q = random_dirs(rng, 200_000)
    t = rng.uniform(0.3, 3.7, len(q))
    errs = [np.abs(_field_atlas(H, K).sample(q, t) - _field(q, t)) for H, K in ((128, 16), (256, 32))]
    ratio = errs[1].max() / errs[0].max()
    ok = ang <= 1e-7 and 0.4 <= ratio <= 0.6
    acceptance(3, ok, f"round trip max angle {ang:.2e} rad; max sampling error {errs[0].max():.3e} -> "
                      f"{errs[1].max():.3e} (ratio {ratio:.3f}; mean-error ratio "
                      f"{errs[1].mean() / errs[0].mean():.3f})")
    assert ok


def test_c04_culling_soundness_and_speed(acceptance):
    rows = {r.variant: r for r in run_timing(AblationConfig(), log=None)}
    on, off = rows["roi=on,tile=on"], rows["roi=off,tile=off"]
    gap = max(r.extra["max_abs_dT_vs_full_on_slab"] for r in rows.values())
    speed = off.build_s / on.build_s
    big = on.extra["scene_splats"] >= 50_000 and on.extra["occluders"] >= 20_000
    ok = gap <= 1e-3 and speed >= 5 and big
    acceptance(4, ok, f"max |dT| {gap:.2e}; culled {on.build_s:.2f}s vs full {off.build_s:.2f}s "
                      f"({speed:.1f}x) at {on.extra['scene_splats']} scene / {on.extra['occluders']} occluder splats")
    assert ok


def test_c05_sphere_shadow_vs_pseudo_gt(ablation_rows, acceptance):
    row = next(r for r in ablation_rows if (r.ablation, r.scene, r.variant) == ("A", "sphere", "mc:32"))
    ok = row.sm_iou >= 0.8 and row.bf >= 0.7
    acceptance(5, ok, f"sphere, TraceAvg + MC-32 at 512x512x64: SM-IoU {row.sm_iou:.3f}, BF {row.bf:.3f}, "
                      f"SAE {row.sae:.4f}")
    assert ok


def _ordering_detail(rows, part):
    parts = []
    for scene in SHADOW_SCENES:
        v = {r.variant: r.sae for r in rows if (r.ablation, r.scene) == (part, scene)}
        parts.append(f"{scene}(" + ", ".join(f"{k}={x:.4f}" for k, x in v.items()) + ")")
    return "; ".join(parts)


def test_c06a_footprint_ordering(ablation_rows, acceptance):
    held = orderings(ablation_rows)["A"]
    n = sum(held.values())
    ok = n >= 4
    acceptance("6a", ok, f"mc <= stencil <= center SAE on {n}/5 scenes: {_ordering_detail(ablation_rows, 'A')}")
    assert ok


def test_c06c_layout_ordering(ablation_rows, acceptance):
    held = orderings(ablation_rows)["C"]
    n = sum(held.values())
    ok = n >= 4
    acceptance("6c", ok, f"oct <= cube SAE on {n}/5 scenes: {_ordering_detail(ablation_rows, 'C')}")
    assert ok


def test_c07_probe_fit(acceptance):
    rng = np.random.default_rng(7)
    coeffs = rng.normal(0, 0.3, (16, 3))
    coeffs[0] = 3.0
    D, w = cubemap_directions(64)
    fit = fit_sh(CubemapSamples(shlib.sh_basis(D, 3) @ coeffs, D, w, 64), 3, lam=1e-8)
    err = np.abs(fit.coeffs - coeffs).max()
    const = fit_sh(CubemapSamples(np.ones((len(D), 3)), D, w, 64), 3, lam=1e-8).coeffs[0]
    gap = np.abs(const - DC).max()
    ok = err <= 1e-3 and gap <= 1e-6
    acceptance(7, ok, f"max coefficient error {err:.2e}; unit-radiance c00 off 2 sqrt(pi) by {gap:.2e}")
    assert ok


def test_c08_relight_transfer(acceptance):
    avatar = sphere_shell([0, 0, 1.0], 0.3, 2000)
    normals = (avatar.means - [0, 0, 1.0]) / np.linalg.norm(avatar.means - [0, 0, 1.0], axis=1, keepdims=True)
    c = np.zeros((16, 3))
    c[0] = DC
    white = ShProbe(3, c)
    scale_err = np.abs(relight_scales(white, normals) - 1).max()
    relit = apply_relight(avatar, normals, white)
    dc_err = np.abs(relit.sh[:, 0] - avatar.sh[:, 0]).max()
    # hemisphere light: upper half radiance 1, lower half 0, projected to degree 3
    D, w = cubemap_directions(64)
    step = fit_sh(CubemapSamples(np.repeat((D[:, 2:3] > 0).astype(float), 3, axis=1), D, w, 64), 3)
    test_n = np.concatenate([[[0, 0, 1.0], [0, 0, -1.0], [1.0, 0, 0]], random_dirs(np.random.default_rng(8), 61)])
    got = relight_scales(step, test_n)
    dd, dw = latlong_grid(1024, 2048)
    ref = contract(shlib.sh_basis(dd, 3) @ step.coeffs, dd, dw, test_n, 1.0, 1e-6, 4.0, chunk=8)
    hemi_err = np.abs(got - ref).max()
    ok = scale_err <= 1e-3 and dc_err <= 1e-3 and hemi_err <= 1e-2
    acceptance(8, ok, f"constant white: max |s-1| {scale_err:.2e}, max DC change {dc_err:.2e}; "
                      f"hemisphere vs dense quadrature max gap {hemi_err:.2e} (s at +z {got[0, 0]:.4f})")
    assert ok


def test_c09_metric_identities(acceptance):
    rng = np.random.default_rng(9)
    n = random_dirs(rng, 500)
    c = np.zeros(16)
    c[0], c[2], c[3], c[6] = DC, 1.0, 0.4, 0.3
    y = np.maximum(shlib.sh_basis(n, 3) @ c, 0.05) * rng.uniform(0.8, 1.2, 500)
    fit = fit_factorized_sh(y, n)
    e = shlib.sh_basis(n, 3) @ fit.coeffs
    rgb = rng.uniform(0, 1, (80, 3))
    S = rng.uniform(0, 1, (64, 64))
    rep = shadow_metrics(S, S)
    ident = {"PAA-Y": paa_y(fit.coeffs, fit.coeffs), "APF-Y": apf_y(fit.coeffs, n, e), "NCM-ab": ncm_ab(rgb, rgb),
             "SAE": rep.sae}
    inv = paa_y(fit.coeffs, fit_factorized_sh(3 * y, n).coeffs)
    ok = max(abs(v) for v in ident.values()) <= 1e-12 and rep.sm_iou == 1 and rep.bf == 1 and inv <= 1e-6
    acceptance(9, ok, ", ".join(f"{k}={v:.1e}" for k, v in ident.items())
               + f", IoU={rep.sm_iou}, BF={rep.bf}; PAA-Y change under 3x luminance {inv:.2e}")
    assert ok


def test_c10_pipeline_determinism(tmp_path, acceptance):
    cfg = PipelineConfig(seed=0)
    quiet = dict(log=None)
    run_pipeline(cfg, tmp_path / "a", **quiet)
    run_pipeline(cfg, tmp_path / "b", **quiet)
    run_pipeline(replace(cfg, workers=1), tmp_path / "c", **quiet)
    files = sorted(p.name for p in (tmp_path / "a").iterdir() if p.suffix in (".dgsm", ".ply"))
    same_b, diff_b, _ = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    same_c, diff_c, _ = filecmp.cmpfiles(tmp_path / "a", tmp_path / "c", files, shallow=False)
    ok = any(f.endswith(".dgsm") for f in files) and not diff_b and not diff_c and len(same_b) == len(files)
    acceptance(10, ok, f"{len(same_b)}/{len(files)} atlas/PLY files byte-identical on rerun, "
                       f"{len(same_c)}/{len(files)} with a single worker thread ({', '.join(files)})")
    assert ok
