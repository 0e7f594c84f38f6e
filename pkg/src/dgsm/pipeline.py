"""End-to-end stages shared by the CLI subcommands and the pipeline command.

Every stage is a plain function of its inputs; the pipeline runs them in
order, wraps failures with the stage name and writes a manifest with
sha256 hashes of every artifact and of every config section.
"""

import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfglib
from .ablation import cube_face_for
from .atlas import AtlasDims, AtlasFormatError, Layout, serialize
from .build import build_dgsm, compute_roi, default_t_max
from .images import write_pfm, write_png16
from .lights import estimate_lights, save_lights
from .metrics import LightingReport, lighting_scores
from .ply import PlyFormatError, load_splat_ply, save_splat_ply
from .probe import TransferParams, apply_relight, export_latlong, fit_sh, probe_position, render_cubemap
from .shadows import FootprintMode, apply_shadows
from .splats import DegenerateInputError, SplatScene, alpha_weighted_centroid, estimate_pseudo_normals
from .synthetic import cornell_room
from .transmittance import AbsorptionMode, InvalidQuadraticError

VALIDATION_ERRORS = (cfglib.ConfigError, PlyFormatError, AtlasFormatError, DegenerateInputError,
                     InvalidQuadraticError, FileNotFoundError)


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def validation(self):
        return isinstance(self.cause, VALIDATION_ERRORS)


def set_workers(n):
    if n and n > 0:
        import numba

        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# stages


def load_inputs(cfg):
    """Tagged scene from the configured PLYs, or the bundled room when none are given."""
    inp = cfg.inputs
    if not (inp.scene or inp.avatar or inp.object):
        scene, _ = cornell_room(seed=cfg.seed)
        return scene
    parts = []
    for path, group in ((inp.scene, "scene"), (inp.avatar, "avatar"), (inp.object, "object")):
        if path:
            parts.append(load_splat_ply(path, group))
    return SplatScene.concat(parts)


def stage_lights(scene, cfg):
    lc = cfg.lights
    return estimate_lights(scene, lc.k, lc.roi_radius, lc.peak_radius, lc.min_separation, lc.view_count)


def stage_roi(scene, cfg):
    avatar = scene.select("avatar")
    if len(avatar) == 0:
        raise DegenerateInputError("the avatar is empty; the receiver ROI is centred on the avatar")
    rec = scene.select("scene") if cfg.atlas.extend_floor else None
    return compute_roi(avatar, cfg.atlas.roi_radius, scene=rec)


def atlas_dims(cfg, light, roi):
    ac = cfg.atlas
    t_max = default_t_max(light, roi) if ac.t_max == "auto" else float(ac.t_max)
    if Layout.parse(ac.layout) is Layout.CUBEMAP:
        return AtlasDims.cubemap(cube_face_for(int(round(math.sqrt(ac.H * ac.W)))), ac.K, t_max)
    return AtlasDims(ac.H, ac.W, ac.K, t_max)


def stage_build(scene, lights, roi, cfg):
    occ = scene.select("avatar", "object")
    rec = scene.select("scene")
    mode = AbsorptionMode(cfg.absorption.mode, cfg.absorption.kappa)
    return [build_dgsm(light, occ, rec, roi, atlas_dims(cfg, light, roi), mode, cfg.atlas.k_sigma,
                       roi_cull=cfg.atlas.roi_cull, tile_cull=cfg.atlas.tile_cull) for light in lights]


def stage_probe(scene, cfg):
    avatar = scene.select("avatar")
    if len(avatar) == 0:
        raise DegenerateInputError("the avatar is empty; the probe sits at the avatar")
    samples = render_cubemap(scene, probe_position(avatar), cfg.probe.face_res)
    lam = None if cfg.probe.lam == "auto" else float(cfg.probe.lam)
    return fit_sh(samples, cfg.probe.degree, lam), samples


def transfer_params(cfg):
    p = cfg.probe
    return TransferParams(p.q, p.n_theta, p.n_phi, p.s_max, p.eps, p.gamma)


def avatar_normals(avatar):
    return estimate_pseudo_normals(avatar)


def stage_relight(avatar, probe, cfg):
    if len(avatar) == 0:
        return avatar, np.zeros((0, 3))
    normals = avatar_normals(avatar)
    return apply_relight(avatar, normals, probe, transfer_params(cfg)), normals


def stage_shadows(receivers, atlases, cfg):
    return apply_shadows(receivers, atlases, FootprintMode.parse(cfg.footprint.mode, cfg.seed), True)


def facing_normals(splats, target):
    """Pseudo-normals flipped to face ``target`` (scene surfaces seen from the avatar)."""
    n = estimate_pseudo_normals(splats)
    flip = np.einsum("ij,ij->i", n, np.asarray(target) - splats.means) < 0
    n[flip] *= -1
    return n


def neighborhood(scene, center, radius):
    rec = scene.select("scene")
    return rec.subset(np.linalg.norm(rec.means - center, axis=1) <= radius)


def stage_eval(scene, avatar, relit, normals, cfg):
    c = alpha_weighted_centroid(avatar)
    nb = neighborhood(scene, c, cfg.eval.radius)
    if len(nb) < 16:
        raise DegenerateInputError(f"only {len(nb)} scene splats within {cfg.eval.radius} m of the avatar")
    nn = facing_normals(nb, c)
    deg = cfg.probe.degree
    return LightingReport(lighting_scores(avatar, normals, nb, nn, deg, cfg.seed),
                          lighting_scores(relit, normals, nb, nn, deg, cfg.seed))


# ---------------------------------------------------------------------------
# pipeline


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hashes(cfg):
    d = cfglib.to_dict(cfg)
    out = {"config": hashlib.sha256(cfglib.dumps(cfg).encode()).hexdigest()}
    for key, value in d.items():
        out[key] = hashlib.sha256(json.dumps(value, sort_keys=True).encode()).hexdigest()
    return out


def _atlas_preview(atlas):
    """Per-texel minimum transmittance over bins, as a 2D image."""
    return atlas.data.min(axis=0)


class _Stages:
    def __init__(self, log):
        self.log = log
        self.seconds = {}

    def __call__(self, name, fn, *args):
        t0 = time.perf_counter()
        try:
            out = fn(*args)
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.seconds[name] = time.perf_counter() - t0
        if self.log:
            self.log(f"[{name}] {self.seconds[name]:.2f}s")
        return out


def run_pipeline(cfg, out_dir, log=print):
    """Run every stage and write outputs plus ``manifest.json`` into ``out_dir``."""
    cfg.validate()
    set_workers(cfg.workers)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Stages(log)

    scene = run("load", load_inputs, cfg)
    roi = run("roi", stage_roi, scene, cfg)
    lights = run("estimate-lights", stage_lights, scene, cfg)
    atlases = run("build-dgsm", stage_build, scene, lights, roi, cfg)
    probe, samples = run("render-probe", stage_probe, scene, cfg)

    avatar = scene.select("avatar")
    receivers = scene.select("scene")
    order = ("relight", "apply") if cfg.probe.relight_first else ("apply", "relight")
    results = {}
    for stage in order:
        if stage == "relight":
            results[stage] = run("relight", stage_relight, avatar, probe, cfg)
        else:
            results[stage] = run("apply", stage_shadows, receivers, atlases, cfg)
    relit, normals = results["relight"]
    shadowed, T = results["apply"]
    report = run("eval", stage_eval, scene, avatar, relit, normals, cfg)

    artifacts = []

    def emit(name, writer, *args):
        path = out / name
        writer(path, *args)
        artifacts.append(name)

    def write_json(path, obj):
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_text(path, text):
        with open(path, "w") as fh:
            fh.write(text)

    emit("config.toml", write_text, cfglib.dumps(cfg))
    emit("lights.json", lambda p: save_lights(lights, p))
    for i, atlas in enumerate(atlases):
        emit(f"atlas_{i}.dgsm", lambda p, a=atlas: serialize(a, p))
        emit(f"debug_atlas_{i}_min.png", lambda p, a=atlas: write_png16(p, _atlas_preview(a)))
    emit("probe.json", lambda p: probe.save(p))
    emit("debug_env_latlong.pfm", lambda p: export_latlong(probe, p))
    emit("debug_probe_cubemap.pfm", lambda p: write_pfm(p, samples.image()))
    emit("scene_shadowed.ply", lambda p: save_splat_ply(shadowed, p))
    emit("avatar_relit.ply", lambda p: save_splat_ply(relit, p))
    obj = scene.select("object")
    if len(obj):
        emit("object.ply", lambda p: save_splat_ply(obj, p))
    emit("output.ply", lambda p: save_splat_ply(SplatScene.concat([shadowed, relit, obj]), p))
    emit("report.json", write_json, {
        "lighting": report.to_json(),
        "shadows": {
            "receivers": int(len(receivers)),
            "shadowed": int(np.count_nonzero(T < 1.0)),
            "min_transmittance": float(T.min()) if len(T) else 1.0,
        },
        "lights": [lt.to_json() for lt in lights],
        "roi": {"center": [float(x) for x in roi.center], "radius": roi.radius, "z_min": roi.z_min, "z_max": roi.z_max},
        "atlas_pairs": [int(a.stats["pairs"]) for a in atlases],
    })
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "stage_order": ["load", "roi", "estimate-lights", "build-dgsm", "render-probe", *order, "eval"],
        "parameters": config_hashes(cfg),
        "artifacts": {name: {"sha256": sha256_file(out / name), "bytes": (out / name).stat().st_size}
                      for name in artifacts},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # wall-clock times vary run to run, so they stay out of the manifest
    with open(out / "timings.json", "w") as fh:
        json.dump(run.seconds, fh, indent=2)
    return manifest
