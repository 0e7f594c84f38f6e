"""End-to-end run on the bundled room: lights, shadow atlas, probe, relight, report."""

import argparse
import json
from pathlib import Path

from dgsm.config import PipelineConfig, load
from dgsm.pipeline import run_pipeline


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="results/demo")
    p.add_argument("--config", help="optional TOML config")
    args = p.parse_args()

    cfg = load(args.config) if args.config else PipelineConfig()
    run_pipeline(cfg, args.out_dir)
    report = json.loads((Path(args.out_dir) / "report.json").read_text())
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
