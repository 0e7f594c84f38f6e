"""Ablation harness on the synthetic shadow suite.

A: footprint sampling (center / stencil / Monte Carlo)
B: opacity -> absorption mapping
C: octahedral vs cubemap atlas at a matched texel budget
D: build time with culling toggled
"""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .atlas import AtlasDims, Layout
from .build import build_dgsm, compute_roi, default_t_max, slab_mask3
from .mattes import render_shadow_matte_gaussian, render_shadow_matte_mesh
from .metrics import shadow_metrics
from .shadows import FootprintMode
from .synthetic import SHADOW_SCENES, shadow_scene, timing_scene
from .transmittance import AbsorptionKind, AbsorptionMode

ABSORPTIONS = tuple(k.value for k in AbsorptionKind)


@dataclass
class AblationConfig:
    scenes: tuple = SHADOW_SCENES
    parts: tuple = ("A", "B", "C", "D")
    atlas_res: int = 512
    bins: int = 64
    k_sigma: float = 3.0
    kappa: float = 1.0
    footprints: tuple = ("center", "stencil", "mc:32")
    absorptions: tuple = ABSORPTIONS
    base_absorption: str = "traceavg"
    base_footprint: str = "mc:32"
    image_res: int = 256
    tau: float = 0.1
    boundary_px: int = 2
    timing_scene_splats: int = 50_000
    timing_occluders: int = 20_000
    timing_res: int = 128
    timing_bins: int = 32
    seed: int = 0


@dataclass
class Row:
    ablation: str
    scene: str
    variant: str
    sae: float = None
    sm_iou: float = None
    bf: float = None
    build_s: float = None
    extra: dict = field(default_factory=dict)


def cube_face_for(width):
    """Cubemap face size with about the same texel count as a width x width octahedral atlas."""
    return max(4, int(round(width / math.sqrt(6.0))))


def _dims(light, roi, layout, res, bins):
    t_max = default_t_max(light, roi)
    if Layout.parse(layout) is Layout.CUBEMAP:
        return AtlasDims.cubemap(cube_face_for(res), bins, t_max)
    return AtlasDims(res, res, bins, t_max)


def _evaluate(ss, atlas, footprint, cfg, gt):
    S = render_shadow_matte_gaussian(ss.scene, [atlas], ss.camera, FootprintMode.parse(footprint, cfg.seed))
    return shadow_metrics(S.S, gt.S, cfg.tau, cfg.boundary_px)


def _row(ablation, scene, variant, rep, build_s, **extra):
    return Row(ablation, scene, variant, rep.sae, rep.sm_iou, rep.bf, build_s, extra)


def run_ablation(cfg=AblationConfig(), log=print):
    rows = []
    for name in cfg.scenes:
        ss = shadow_scene(name, image_res=cfg.image_res)
        occ = ss.scene.select("avatar", "object")
        rec = ss.scene.select("scene")
        roi = compute_roi(occ, 2.0, scene=rec)
        gt = render_shadow_matte_mesh(ss.mesh, ss.light, ss.plane, ss.camera)

        def build(absorption=cfg.base_absorption, layout="oct"):
            dims = _dims(ss.light, roi, layout, cfg.atlas_res, cfg.bins)
            t0 = time.perf_counter()
            atlas = build_dgsm(ss.light, occ, rec, roi, dims, AbsorptionMode(absorption, cfg.kappa), cfg.k_sigma)
            return atlas, time.perf_counter() - t0

        base, base_s = build()
        if "A" in cfg.parts:
            for fp in cfg.footprints:
                rows.append(_row("A", name, fp, _evaluate(ss, base, fp, cfg, gt), base_s))
        if "B" in cfg.parts:
            for ab in cfg.absorptions:
                atlas, secs = (base, base_s) if ab == cfg.base_absorption else build(absorption=ab)
                rows.append(_row("B", name, ab, _evaluate(ss, atlas, cfg.base_footprint, cfg, gt), secs))
        if "C" in cfg.parts:
            rows.append(_row("C", name, "oct", _evaluate(ss, base, cfg.base_footprint, cfg, gt), base_s,
                             texels=base.H * base.W))
            cube, secs = build(layout="cube")
            rows.append(_row("C", name, "cube", _evaluate(ss, cube, cfg.base_footprint, cfg, gt), secs,
                             texels=cube.H * cube.W))
        if log:
            log(f"[ablation] {name}: done")
    if "D" in cfg.parts:
        rows.extend(run_timing(cfg, log))
    return rows


def run_timing(cfg=AblationConfig(), log=print):
    """Build times with ROI and tile culling on/off on the large timing scene."""
    scene, light = timing_scene(cfg.timing_scene_splats, cfg.timing_occluders, cfg.seed)
    occ = scene.select("avatar", "object")
    rec = scene.select("scene")
    roi = compute_roi(occ, 2.0, scene=rec)
    dims = AtlasDims(cfg.timing_res, cfg.timing_res, cfg.timing_bins, default_t_max(light, roi))
    mode = AbsorptionMode(cfg.base_absorption, cfg.kappa)
    # warm the JIT so compile time is not billed to the first variant
    build_dgsm(light, occ.subset(np.arange(min(8, len(occ)))), rec, roi, AtlasDims(8, 8, 2, dims.t_max), mode)
    rows, atlases = [], {}
    for roi_cull, tile_cull in ((True, True), (True, False), (False, True), (False, False)):
        t0 = time.perf_counter()
        atlas = build_dgsm(light, occ, rec, roi, dims, mode, cfg.k_sigma, roi_cull=roi_cull, tile_cull=tile_cull)
        secs = time.perf_counter() - t0
        variant = f"roi={'on' if roi_cull else 'off'},tile={'on' if tile_cull else 'off'}"
        atlases[variant] = atlas
        rows.append(Row("D", "timing", variant, build_s=secs,
                        extra={"pairs": atlas.stats["pairs"], "pixels": atlas.stats["pixels"],
                               "scene_splats": len(rec), "occluders": len(occ)}))
        if log:
            log(f"[ablation] timing {variant}: {secs:.2f}s")
    full = atlases["roi=off,tile=off"].data
    for row in rows:
        row.extra["max_abs_dT_vs_full_on_slab"] = _slab_gap(atlases[row.variant], full)
    return rows


def _slab_gap(atlas, full):
    """Largest |T - T_full| over the slab entries this atlas computed."""
    m = slab_mask3(atlas, atlas.stats["slab"])
    if not m.any():
        return 0.0
    return float(np.max(np.abs(atlas.data[m].astype(np.float64) - full[m])))


def rows_to_json(rows):
    return [asdict(r) for r in rows]


def write_report(rows, json_path=None, csv_path=None):
    data = rows_to_json(rows)
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(data, fh, indent=2)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ablation", "scene", "variant", "sae", "sm_iou", "bf", "build_s", "extra"])
            for r in data:
                w.writerow([r["ablation"], r["scene"], r["variant"], r["sae"], r["sm_iou"], r["bf"], r["build_s"],
                            json.dumps(r["extra"], sort_keys=True)])
    return data


def orderings(rows):
    """Per-scene checks of the qualitative orderings (A: mc <= stencil <= center; C: oct <= cube)."""
    by = {}
    for r in rows:
        by.setdefault((r.ablation, r.scene), {})[r.variant.split(":")[0]] = r.sae
    out = {"A": {}, "C": {}}
    for (ab, scene), v in by.items():
        if ab == "A" and {"mc", "stencil", "center"} <= v.keys() and None not in v.values():
            out["A"][scene] = v["mc"] <= v["stencil"] <= v["center"]
        if ab == "C" and {"oct", "cube"} <= v.keys() and None not in v.values():
            out["C"][scene] = v["oct"] <= v["cube"]
    return out
