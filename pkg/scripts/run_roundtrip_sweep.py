"""Encode-decode fidelity sweep over crowd sizes.

For each crowd size, generates synthetic scenes, encodes them to target
tensors, decodes back, and checks that every true person comes back as one
pose with all encodable parts inside the error tolerance. Prints one row per
crowd size and exits nonzero when any scene fails, so the sweep doubles as a
quick regression gate after decoder changes.

Run from the repo root:  python scripts/run_roundtrip_sweep.py
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from wbpose.skeleton import default_topology, load_topology
from wbpose.synth import SceneRecipe, roundtrip_report


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-people", type=int, default=10)
    ap.add_argument("--scenes", type=int, default=20, help="scenes per crowd size")
    ap.add_argument("--image-size", default="480x480", help="WxH pixels")
    ap.add_argument("--min-separation", type=float, default=30.0)
    ap.add_argument("--person-scale", default="45:65", help="LO:HI pixel heights")
    ap.add_argument("--tol-cells", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--manifest", type=Path, default=None,
                    help="topology manifest JSON (default: packaged whole-body)")
    return ap.parse_args()


def main() -> int:
    args = parse_args()
    topo = load_topology(args.manifest) if args.manifest else default_topology()
    w, h = (int(v) for v in args.image_size.lower().split("x"))
    lo, hi = (float(v) for v in args.person_scale.split(":"))

    failures = 0
    print(f"{'n':>4} {'scenes':>7} {'ok':>4} {'worst_err':>10} {'mean_err':>9} {'sec':>6}")
    for n in range(1, args.max_people + 1):
        t0 = time.monotonic()
        ok = 0
        worst = 0.0
        mean_sum = 0.0
        for i in range(args.scenes):
            recipe = SceneRecipe(
                n_people=n, image_size=(w, h), min_separation=args.min_separation,
                person_scale=(lo, hi), seed=args.seed, max_attempts=20_000,
            )
            rep = roundtrip_report(recipe, topo, tol_cells=args.tol_cells,
                                   scene_id=n * 1000 + i)
            ok += rep.success
            worst = max(worst, rep.max_error_cells)
            mean_sum += rep.mean_error_cells
        failures += args.scenes - ok
        print(f"{n:>4} {args.scenes:>7} {ok:>4} {worst:>10.2e} "
              f"{mean_sum / args.scenes:>9.2e} {time.monotonic() - t0:>6.1f}")

    if failures:
        print(f"{failures} scene(s) failed the roundtrip")
        return 1
    print("all scenes roundtripped within tolerance")
    return 0


if __name__ == "__main__":
    sys.exit(main())
