"""Atlas build time with ROI/tile culling on and off on the large timing scene."""

import argparse

from dgsm.ablation import AblationConfig, run_timing


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--scene-splats", type=int, default=50_000)
    p.add_argument("--occluders", type=int, default=20_000)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--bins", type=int, default=32)
    args = p.parse_args()

    cfg = AblationConfig(timing_scene_splats=args.scene_splats, timing_occluders=args.occluders,
                         timing_res=args.res, timing_bins=args.bins)
    rows = run_timing(cfg, log=None)
    full = next(r.build_s for r in rows if r.variant == "roi=off,tile=off")
    for r in rows:
        print(f"{r.variant:18s} {r.build_s:7.2f}s  speedup {full / r.build_s:5.1f}x  "
              f"pairs {r.extra['pairs']:>10d}  max|dT| {r.extra['max_abs_dT_vs_full_on_slab']:.1e}")


if __name__ == "__main__":
    main()
