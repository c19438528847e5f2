"""Sweep the two pipeline toggles (instance branch, gated fusion) over a
set of generated scenes and print a four-row comparison table.

Usage:
    python3 scripts/ablation_sweep.py --scenes 25
"""

from __future__ import annotations

import argparse
import math
import tempfile
from pathlib import Path

from liftseg import SyntheticSceneSpec, gen_fixtures, load_config, run_pipeline

COMBOS = [(False, False), (False, True), (True, False), (True, True)]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", type=int, default=25)
    parser.add_argument("--seed0", type=int, default=40_000)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    workdir = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="ablate_"))
    configs = []
    for i in range(args.scenes):
        spec = SyntheticSceneSpec(n_objects=4, points_per_object=600, n_views=3,
                                  image_size=32, target_ids=(i % 3,))
        fx = workdir / f"fx{i:04d}"
        gen_fixtures(spec, args.seed0 + i, fx)
        configs.append(load_config(fx / "config.json"))

    rows = []
    for vsd, mlf in COMBOS:
        ious, acc25, acc50 = [], 0, 0
        for i, config in enumerate(configs):
            out = workdir / f"run_{int(vsd)}{int(mlf)}_{i:04d}"
            report = run_pipeline(config.replace(enable_vsd=vsd, enable_mlf=mlf), out)
            iou = report["metrics"]["miou"]
            ious.append(iou)
            acc25 += iou >= 0.25
            acc50 += iou >= 0.5
        rows.append((vsd, mlf, acc25 / args.scenes, acc50 / args.scenes,
                     math.fsum(ious) / args.scenes))

    print(f"{'VSD':>4} {'MLF':>4} {'Acc@0.25':>9} {'Acc@0.5':>8} {'mIoU':>7}")
    for vsd, mlf, a25, a50, miou in rows:
        mark = lambda b: "on " if b else "off"
        print(f"{mark(vsd):>4} {mark(mlf):>4} {a25:9.3f} {a50:8.3f} {miou:7.4f}")
    print(f"\nworkdir: {workdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
