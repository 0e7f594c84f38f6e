"""Command line interface.

Exit codes: 0 success, 2 invalid config or input, 3 runtime failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfglib
from . import pipeline as pl

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

# flag -> (section, field, type); section None is the config root
_OVERRIDES = {
    "seed": (None, "seed", int),
    "workers": (None, "workers", int),
    "scene": ("inputs", "scene", str),
    "avatar": ("inputs", "avatar", str),
    "object": ("inputs", "object", str),
    "lights_k": ("lights", "k", int),
    "min_separation": ("lights", "min_separation", float),
    "light_roi_radius": ("lights", "roi_radius", float),
    "peak_radius": ("lights", "peak_radius", float),
    "view_count": ("lights", "view_count", int),
    "bins": ("atlas", "K", int),
    "t_max": ("atlas", "t_max", float),
    "layout": ("atlas", "layout", str),
    "ksigma": ("atlas", "k_sigma", float),
    "roi_radius": ("atlas", "roi_radius", float),
    "absorption": ("absorption", "mode", str),
    "kappa": ("absorption", "kappa", float),
    "footprint": ("footprint", "mode", str),
    "face_res": ("probe", "face_res", int),
    "degree": ("probe", "degree", int),
    "lam": ("probe", "lam", float),
    "q": ("probe", "q", float),
    "n_theta": ("probe", "n_theta", int),
    "n_phi": ("probe", "n_phi", int),
    "s_max": ("probe", "s_max", float),
    "eps": ("probe", "eps", float),
    "gamma": ("probe", "gamma", float),
    "tau": ("eval", "tau", float),
    "boundary_px": ("eval", "boundary_px", int),
    "radius": ("eval", "radius", float),
}


def _common():
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="TOML config file")
    p.add_argument("--print-config", action="store_true", default=S, help="print the effective config and exit")
    for flag, (_, _, typ) in _OVERRIDES.items():
        if flag in ("layout", "absorption"):
            continue
        p.add_argument("--" + flag.replace("_", "-"), type=typ, default=S)
    p.add_argument("--layout", choices=("oct", "cube"), default=S)
    p.add_argument("--absorption", choices=("simple", "traceavg", "mass", "diag"), default=S)
    p.add_argument("--atlas-res", type=int, default=S, help="atlas H = W")
    p.add_argument("--no-roi-cull", action="store_true", default=S)
    p.add_argument("--no-tile-cull", action="store_true", default=S)
    p.add_argument("--shadows-first", action="store_true", default=S, help="apply shadows before relighting")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="dgsm", parents=[common],
                                     description="Gaussian-splat shadow maps, probe relighting and evaluation.")
    sub = parser.add_subparsers(dest="command")

    def cmd(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = cmd("estimate-lights", "estimate point lights from emissive scene splats")
    p.add_argument("--out", required=True)

    p = cmd("build-dgsm", "build one shadow atlas per light")
    p.add_argument("--lights", required=True)
    p.add_argument("--out-dir", required=True)

    p = cmd("apply", "attenuate receiver splats with shadow atlases")
    p.add_argument("--atlas", action="append", required=True)
    p.add_argument("--out", required=True)

    p = cmd("render-probe", "render and fit an SH probe at the avatar")
    p.add_argument("--out", required=True)
    p.add_argument("--latlong", help="optional lat-long PFM of the fitted environment")
    p.add_argument("--cubemap", help="optional PFM of the rendered cubemap")

    p = cmd("relight", "scale avatar colors by the probe transfer")
    p.add_argument("--probe", required=True)
    p.add_argument("--out", required=True)

    p = cmd("eval", "lighting-consistency and/or shadow-matte metrics")
    p.add_argument("--relit", help="relit avatar PLY for the lighting report")
    p.add_argument("--matte", help="predicted shadow matte (.png/.pfm)")
    p.add_argument("--gt", help="pseudo ground-truth shadow matte (.png/.pfm)")
    p.add_argument("--out", required=True)

    p = cmd("ablate", "run ablations A-D on the synthetic suite")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--parts", default="A,B,C,D")
    p.add_argument("--scenes", default=None, help="comma list, default: all five")
    p.add_argument("--image-res", type=int, default=256)
    p.add_argument("--timing-res", type=int, default=128)
    p.add_argument("--timing-bins", type=int, default=32)

    cmd("selfcheck", "run the built-in oracle suites")

    p = cmd("pipeline", "run every stage and write a manifest")
    p.add_argument("--out-dir", required=True)
    return parser


def resolve_config(args):
    cfg = cfglib.load(args.config) if getattr(args, "config", None) else cfglib.PipelineConfig()
    d = cfglib.to_dict(cfg)
    for flag, (section, name, _) in _OVERRIDES.items():
        if hasattr(args, flag):
            (d if section is None else d[section])[name] = getattr(args, flag)
    if hasattr(args, "atlas_res"):
        d["atlas"]["H"] = d["atlas"]["W"] = args.atlas_res
    if getattr(args, "no_roi_cull", False):
        d["atlas"]["roi_cull"] = False
    if getattr(args, "no_tile_cull", False):
        d["atlas"]["tile_cull"] = False
    if getattr(args, "shadows_first", False):
        d["probe"]["relight_first"] = False
    return cfglib.from_dict(d)


def _need(cfg, *groups):
    for g in groups:
        if not getattr(cfg.inputs, g):
            raise cfglib.ConfigError(f"--{g} PLY is required for this command")


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate_lights(args, cfg):
    _need(cfg, "scene")
    scene = pl.load_inputs(cfg)
    lights = pl.stage_lights(scene, cfg)
    pl.save_lights(lights, args.out)
    print(f"wrote {len(lights)} light(s) to {args.out}")


def cmd_build_dgsm(args, cfg):
    from .atlas import serialize
    from .lights import load_lights

    _need(cfg, "scene", "avatar")
    scene = pl.load_inputs(cfg)
    lights = load_lights(args.lights)
    roi = pl.stage_roi(scene, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, atlas in enumerate(pl.stage_build(scene, lights, roi, cfg)):
        path = out / f"atlas_{i}.dgsm"
        serialize(atlas, path)
        s = atlas.stats
        print(f"{path}: {atlas.H}x{atlas.W}x{atlas.K} pairs={s['pairs']} {s['seconds']:.2f}s")


def cmd_apply(args, cfg):
    from .atlas import deserialize
    from .ply import load_splat_ply, save_splat_ply

    _need(cfg, "scene")
    receivers = load_splat_ply(cfg.inputs.scene, "scene")
    atlases = [deserialize(p) for p in args.atlas]
    shadowed, T = pl.stage_shadows(receivers, atlases, cfg)
    save_splat_ply(shadowed, args.out)
    print(f"wrote {args.out}: {int(np.count_nonzero(T < 1))} of {len(T)} splats shadowed")


def cmd_render_probe(args, cfg):
    from .images import write_pfm
    from .probe import export_latlong

    _need(cfg, "scene", "avatar")
    probe, samples = pl.stage_probe(pl.load_inputs(cfg), cfg)
    probe.save(args.out)
    if args.latlong:
        export_latlong(probe, args.latlong)
    if args.cubemap:
        write_pfm(args.cubemap, samples.image())
    print(f"wrote {args.out} (degree {probe.degree}, lambda {probe.lam:.3g})")


def cmd_relight(args, cfg):
    from .ply import load_splat_ply, save_splat_ply
    from .probe import ShProbe

    _need(cfg, "avatar")
    avatar = load_splat_ply(cfg.inputs.avatar, "avatar")
    relit, _ = pl.stage_relight(avatar, ShProbe.load(args.probe), cfg)
    save_splat_ply(relit, args.out)
    print(f"wrote {args.out}")


def cmd_eval(args, cfg):
    from .mattes import ShadowImage
    from .metrics import shadow_metrics
    from .ply import load_splat_ply

    report = {}
    if args.matte or args.gt:
        if not (args.matte and args.gt):
            raise cfglib.ConfigError("--matte and --gt go together")
        S, G = ShadowImage.load(args.matte).S, ShadowImage.load(args.gt).S
        report["shadows"] = shadow_metrics(S, G, cfg.eval.tau, cfg.eval.boundary_px).to_json()
    if cfg.inputs.scene or cfg.inputs.avatar:
        _need(cfg, "scene", "avatar")
        scene = pl.load_inputs(cfg)
        avatar = scene.select("avatar")
        relit = load_splat_ply(args.relit, "avatar") if args.relit else avatar
        if len(relit) != len(avatar):
            raise cfglib.ConfigError("relit avatar must have the same splats as --avatar")
        report["lighting"] = pl.stage_eval(scene, avatar, relit, pl.avatar_normals(avatar), cfg).to_json()
    if not report:
        raise cfglib.ConfigError("nothing to evaluate: give --matte/--gt and/or --scene/--avatar")
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2))


def cmd_ablate(args, cfg):
    from .ablation import AblationConfig, orderings, run_ablation, write_report
    from .synthetic import SHADOW_SCENES

    scenes = tuple(args.scenes.split(",")) if args.scenes else SHADOW_SCENES
    parts = tuple(p.strip().upper() for p in args.parts.split(","))
    if not set(parts) <= {"A", "B", "C", "D"}:
        raise cfglib.ConfigError(f"unknown ablation part in {args.parts!r}")
    ac = AblationConfig(scenes=scenes, parts=parts, atlas_res=cfg.atlas.W, bins=cfg.atlas.K,
                        k_sigma=cfg.atlas.k_sigma, kappa=cfg.absorption.kappa,
                        base_absorption=cfg.absorption.mode, base_footprint=cfg.footprint.mode,
                        image_res=args.image_res, tau=cfg.eval.tau, boundary_px=cfg.eval.boundary_px,
                        timing_res=args.timing_res, timing_bins=args.timing_bins, seed=cfg.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(ac)
    write_report(rows, out / "ablation.json", out / "ablation.csv")
    with open(out / "orderings.json", "w") as fh:
        json.dump(orderings(rows), fh, indent=2)
    print(f"wrote {len(rows)} rows to {out}")


def cmd_selfcheck(args, cfg):
    from .selfcheck import run_selfcheck

    results = run_selfcheck()
    return EXIT_OK if all(r.ok for r in results) else EXIT_RUNTIME


def cmd_pipeline(args, cfg):
    manifest = pl.run_pipeline(cfg, args.out_dir)
    print(f"wrote {len(manifest['artifacts'])} artifacts and manifest.json to {args.out_dir}")


COMMANDS = {
    "estimate-lights": cmd_estimate_lights,
    "build-dgsm": cmd_build_dgsm,
    "apply": cmd_apply,
    "render-probe": cmd_render_probe,
    "relight": cmd_relight,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "selfcheck": cmd_selfcheck,
    "pipeline": cmd_pipeline,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (cfglib.ConfigError, FileNotFoundError) as exc:
        print(f"dgsm: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if getattr(args, "print_config", False):
        sys.stdout.write(cfglib.dumps(cfg))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION
    pl.set_workers(cfg.workers)
    try:
        code = COMMANDS[args.command](args, cfg)
    except pl.StageError as exc:
        print(f"dgsm {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if exc.validation else EXIT_RUNTIME
    except pl.VALIDATION_ERRORS as exc:
        print(f"dgsm {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"dgsm {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"dgsm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
