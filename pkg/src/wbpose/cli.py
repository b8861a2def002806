"""Command-line surface.

One executable, nine subcommands: encode, decode, loss, eval, synth,
roundtrip, sample-plan, arch, bench.  Global flags (--manifest, --seed,
--stride, --threads, --quiet) sit before the subcommand.  Every run prints a
single JSON summary to stdout (unless --quiet) carrying tool_version,
manifest_hash and the seed, so outputs are attributable and replayable.

Exit codes: 0 success, 1 a tolerance gate failed (roundtrip/eval/sample-plan
--check), 2 usage error, 3 I/O or format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

from . import __version__
from .archmodel import (
    MalformedSpec,
    build_stage_graph,
    cost_estimate,
    fit_runtime_model,
    receptive_field,
    runtime_ratio,
)
from .bench import read_bench_medians, run_bench, write_bench_csv
from .decoder import DecoderParams, decode
from .encoder import EncoderParams, encode
from .formats import (
    CocoIngestError,
    WbptError,
    from_targets,
    ingest_coco,
    poses_document,
    poses_from_document,
    read_wbpt,
    scenes_document,
    scenes_from_document,
    to_targets,
    write_wbpt,
)
from .loss import multitask_loss
from .metrics import EvalPose, evaluate
from .scheduler import (
    RegistryError,
    build_plan,
    default_registry,
    read_plan_jsonl,
    registry_from_json,
    write_plan_jsonl,
)
from .skeleton import ManifestError, PartGroup, default_topology, load_topology
from .synth import PackingError, SceneRecipe, generate, roundtrip_report

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(ValueError):
    """Arguments parsed but their values make no sense together."""


def _size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _int_range(text: str) -> list[int]:
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return _int_list(text)


def _groups(text: str) -> frozenset[PartGroup]:
    try:
        return frozenset(PartGroup(g.strip()) for g in text.split(",") if g.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _scale(text: str) -> tuple[float, float]:
    m = re.fullmatch(r"([0-9.]+):([0-9.]+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}")
    return float(m.group(1)), float(m.group(2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wbpose", description=__doc__.splitlines()[0])
    p.add_argument("--manifest", type=Path, default=None, help="topology manifest JSON (default: bundled wholebody135)")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed, echoed in outputs")
    p.add_argument("--stride", type=int, default=8, help="map cell size in pixels")
    p.add_argument("--threads", type=int, default=1, help="decoder worker threads")
    p.add_argument("--quiet", action="store_true", help="suppress the JSON summary on stdout")
    sub = p.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="scenes (or COCO keypoints) -> WBPT tensor files")
    src = enc.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenes", type=Path, help="scenes document JSON")
    src.add_argument("--coco", type=Path, help="COCO keypoint JSON to ingest")
    enc.add_argument("--mapping", type=Path, help="COCO name mapping JSON (with --coco)")
    enc.add_argument("--scenes-out", type=Path, help="write the (ingested) scenes document here")
    enc.add_argument("--out-dir", type=Path, help="directory for one combined .wbpt per scene")

    dec = sub.add_parser("decode", help="WBPT tensor files -> poses document")
    dec.add_argument("tensors", type=Path, nargs="+", help="combined .wbpt files")
    dec.add_argument("--out", type=Path, help="poses document JSON path (default stdout summary only)")

    los = sub.add_parser("loss", help="masked multitask loss of a prediction against groundtruth")
    los.add_argument("--pred", type=Path, required=True, help="predicted combined .wbpt")
    los.add_argument("--gt", type=Path, required=True, help="groundtruth combined .wbpt")

    ev = sub.add_parser("eval", help="AP/AR of detected poses against groundtruth poses")
    ev.add_argument("detections", type=Path, help="poses document JSON")
    ev.add_argument("groundtruth", type=Path, help="poses document JSON")
    ev.add_argument("--group", type=_groups, default=None, help="restrict to part groups, e.g. body,foot")
    ev.add_argument("--pr-csv", type=Path, help="write per-threshold precision/recall CSV")
    ev.add_argument("--min-ap", type=float, default=None, help="gate: exit 1 when AP is below this")
    ev.add_argument("--min-ar", type=float, default=None, help="gate: exit 1 when AR is below this")

    syn = sub.add_parser("synth", help="generate annotated scenes")
    syn.add_argument("--n-scenes", type=int, default=1)
    syn.add_argument("--n-people", type=int, default=3)
    syn.add_argument("--image-size", type=_size, default=(480, 480), metavar="WxH")
    syn.add_argument("--min-separation", type=float, default=30.0)
    syn.add_argument("--person-scale", type=_scale, default=(90.0, 130.0), metavar="LO:HI")
    syn.add_argument("--rotation-deg", type=float, default=20.0)
    syn.add_argument("--jitter-deg", type=float, default=12.0)
    syn.add_argument("--coverage", type=_groups, default=frozenset(PartGroup))
    syn.add_argument("--out", type=Path, help="scenes document JSON path")

    rt = sub.add_parser("roundtrip", help="decode(encode(scene)) fidelity gate")
    rt.add_argument("--n-scenes", type=int, default=20)
    rt.add_argument("--n-people", type=_int_range, default=[1, 2, 3], metavar="LIST|A..B")
    rt.add_argument("--image-size", type=_size, default=(480, 480), metavar="WxH")
    rt.add_argument("--min-separation", type=float, default=30.0)
    rt.add_argument("--tol-cells", type=float, default=0.5)

    sp = sub.add_parser("sample-plan", help="deterministic training-batch plan as JSON lines")
    sp.add_argument("--batches", type=int, default=10)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--registry", type=Path, help="dataset registry JSON (default: built-in)")
    out = sp.add_mutually_exclusive_group(required=True)
    out.add_argument("--out", type=Path, help="plan JSONL path")
    out.add_argument("--check", type=Path, help="existing plan to replay against; exit 1 on drift")

    ar = sub.add_parser("arch", help="stage-graph cost arithmetic and runtime-ratio model")
    ar.add_argument("--spec", help='PAF stage spec, e.g. "4s, 5b, 96w"')
    ar.add_argument("--cm", help="confidence stage spec (default: same as --spec)")
    ar.add_argument("--input-resolution", type=int, default=480)
    ar.add_argument("--ratio", action="store_true", help="emit modeled baseline/single ratios")
    ar.add_argument("--fit", type=Path, help="bench CSV with measured medians (with --ratio)")
    ar.add_argument("--n", type=_int_range, default=list(range(1, 21)), metavar="A..B")
    ar.add_argument("--out", type=Path, help="ratio CSV path (default stdout)")

    be = sub.add_parser("bench", help="decode-only timing over a synthetic grid")
    be.add_argument("--n-people", type=_int_list, default=[1, 5, 10, 20])
    be.add_argument("--image-size", type=_size, action="append", default=None, metavar="WxH")
    be.add_argument("--warmup", type=int, default=3)
    be.add_argument("--repetitions", type=int, default=30)
    be.add_argument("--csv", type=Path, required=True, help="output CSV path")
    return p


def _topology(args):
    if args.manifest is None:
        return default_topology()
    return load_topology(json.loads(args.manifest.read_text(encoding="utf-8")))


def _emit(args, payload: dict) -> None:
    doc = {"tool_version": __version__, "seed": args.seed, **payload}
    if not args.quiet:
        print(json.dumps(doc, indent=2))


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _scene_id_of(path: Path, fallback: int) -> int:
    m = re.search(r"(\d+)$", path.stem)
    return int(m.group(1)) if m else fallback


def _check_hash(topo, file_hash: str, path: Path) -> None:
    if file_hash != topo.manifest_hash:
        raise WbptError(
            f"{path} was encoded against manifest {file_hash[:12]}..., "
            f"the active topology is {topo.manifest_hash[:12]}..."
        )


def cmd_encode(args) -> int:
    topo = _topology(args)
    if args.coco is not None:
        mapping = _read_json(args.mapping) if args.mapping else None
        doc = ingest_coco(_read_json(args.coco), topo, mapping, seed=args.seed)
    else:
        doc = _read_json(args.scenes)
    scenes = scenes_from_document(doc)
    if args.scenes_out:
        _write_json(args.scenes_out, scenes_document(scenes, topo.manifest_hash, args.seed))
    params = EncoderParams(stride=args.stride)
    written = []
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        for scene in scenes:
            f = from_targets(encode(scene, topo, params), topo.manifest_hash)
            path = args.out_dir / f"scene_{scene.scene_id:06d}.wbpt"
            write_wbpt(path, f)
            written.append(path.name)
    _emit(args, {
        "command": "encode", "manifest_hash": topo.manifest_hash,
        "n_scenes": len(scenes), "files_written": written,
    })
    return EXIT_OK


def cmd_decode(args) -> int:
    topo = _topology(args)
    params = DecoderParams(threads=args.threads)
    poses_by_scene = {}
    stride = args.stride
    for i, path in enumerate(args.tensors):
        f = read_wbpt(path)
        _check_hash(topo, f.manifest_hash, path)
        if i == 0:
            stride = f.stride
        poses_by_scene[_scene_id_of(path, i)] = decode(to_targets(f), topo, params)
    doc = poses_document(poses_by_scene, stride, topo.manifest_hash, args.seed)
    if args.out:
        _write_json(args.out, doc)
    _emit(args, {
        "command": "decode", "manifest_hash": topo.manifest_hash,
        "n_scenes": len(poses_by_scene),
        "n_poses": sum(len(v) for v in poses_by_scene.values()),
    })
    return EXIT_OK


def cmd_loss(args) -> int:
    topo = _topology(args)
    pred = read_wbpt(args.pred)
    gt = read_wbpt(args.gt)
    for path, f in ((args.pred, pred), (args.gt, gt)):
        _check_hash(topo, f.manifest_hash, path)
    pred_t = to_targets(pred)
    gt_t = to_targets(gt)
    breakdown = multitask_loss([pred_t.l_star], [pred_t.s_star], gt_t, topo)
    _emit(args, {
        "command": "loss", "manifest_hash": topo.manifest_hash,
        "loss": breakdown.as_dict(),
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    topo = _topology(args)
    det_doc = poses_from_document(_read_json(args.detections))
    gt_doc = poses_from_document(_read_json(args.groundtruth))
    scene_ids = sorted(set(det_doc) | set(gt_doc))
    dets = [det_doc.get(sid, []) for sid in scene_ids]
    gts = [
        [EvalPose(parts=p.parts) for p in gt_doc.get(sid, [])]
        for sid in scene_ids
    ]
    result = evaluate(dets, gts, topo, group=args.group)
    if args.pr_csv:
        with open(args.pr_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall"])
            for t, (prec, rec) in sorted(result.per_threshold.items()):
                w.writerow([f"{t:.2f}", repr(prec), repr(rec)])
    _emit(args, {
        "command": "eval", "manifest_hash": topo.manifest_hash,
        "n_scenes": len(scene_ids), "result": result.as_dict(),
    })
    if args.min_ap is not None and result.ap < args.min_ap:
        return EXIT_TOLERANCE
    if args.min_ar is not None and result.ar < args.min_ar:
        return EXIT_TOLERANCE
    return EXIT_OK


def _recipe(args, n_people: int) -> SceneRecipe:
    return SceneRecipe(
        n_people=n_people,
        image_size=args.image_size,
        min_separation=args.min_separation,
        person_scale=getattr(args, "person_scale", (90.0, 130.0)),
        rotation_deg=getattr(args, "rotation_deg", 20.0),
        jitter_deg=getattr(args, "jitter_deg", 12.0),
        coverage=getattr(args, "coverage", frozenset(PartGroup)),
        seed=args.seed,
    )


def cmd_synth(args) -> int:
    topo = _topology(args)
    recipe = _recipe(args, args.n_people)
    scenes = [generate(recipe, topo, scene_id=i) for i in range(args.n_scenes)]
    doc = scenes_document(scenes, topo.manifest_hash, args.seed)
    if args.out:
        _write_json(args.out, doc)
    _emit(args, {
        "command": "synth", "manifest_hash": topo.manifest_hash,
        "n_scenes": len(scenes),
        "n_people_total": sum(len(s.people) for s in scenes),
    })
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    topo = _topology(args)
    enc_params = EncoderParams(stride=args.stride)
    dec_params = DecoderParams(threads=args.threads)
    reports = []
    for i in range(args.n_scenes):
        n_people = args.n_people[i % len(args.n_people)]
        reports.append(roundtrip_report(
            _recipe(args, n_people), topo, enc_params, dec_params,
            tol_cells=args.tol_cells, scene_id=i,
        ))
    failures = [i for i, r in enumerate(reports) if not r.success]
    _emit(args, {
        "command": "roundtrip", "manifest_hash": topo.manifest_hash,
        "n_scenes": len(reports), "failures": failures,
        "max_error_cells": max((r.max_error_cells for r in reports), default=0.0),
        "reports": [r.as_dict() for r in reports],
    })
    return EXIT_TOLERANCE if failures else EXIT_OK


def cmd_sample_plan(args) -> int:
    topo = _topology(args)
    registry = (
        registry_from_json(_read_json(args.registry)) if args.registry else default_registry()
    )
    if args.check:
        with open(args.check, encoding="utf-8") as fh:
            reference = read_plan_jsonl(fh)
        regenerated = build_plan(
            registry, reference.seed, len(reference.batches), reference.batch_size
        )
        identical = regenerated == reference
        _emit(args, {
            "command": "sample-plan", "manifest_hash": topo.manifest_hash,
            "checked": str(args.check), "identical": identical,
        })
        return EXIT_OK if identical else EXIT_TOLERANCE
    plan = build_plan(registry, args.seed, args.batches, args.batch_size)
    with open(args.out, "w", encoding="utf-8") as fh:
        write_plan_jsonl(plan, fh)
    _emit(args, {
        "command": "sample-plan", "manifest_hash": topo.manifest_hash,
        "n_batches": len(plan.batches), "batch_size": plan.batch_size,
        "registry_hash": plan.registry_hash,
    })
    return EXIT_OK


def cmd_arch(args) -> int:
    topo = _topology(args)
    if args.ratio:
        if not args.fit:
            raise UsageError("--ratio needs --fit BENCH_CSV")
        with open(args.fit, encoding="utf-8") as fh:
            medians = read_bench_medians(fh)
        model = fit_runtime_model([m for _, m in medians])
        rows = [(n, runtime_ratio(model, n)) for n in args.n]

        def write_rows(fh) -> None:
            w = csv.writer(fh)
            w.writerow(["n_people", "modeled_ratio"])
            for n, r in rows:
                w.writerow([n, repr(r)])

        if args.out:
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                write_rows(fh)
        else:
            write_rows(sys.stdout)
        _emit(args, {
            "command": "arch", "manifest_hash": topo.manifest_hash,
            "mode": "ratio", "n_measurements": len(medians),
            "ratio_at_10": runtime_ratio(model, 10.0),
        })
        return EXIT_OK
    if not args.spec:
        raise UsageError("arch needs --spec (cost mode) or --ratio --fit (model mode)")
    graph = build_stage_graph(
        args.spec, args.cm or args.spec, topo, input_resolution=args.input_resolution
    )
    cost = cost_estimate(graph)
    _emit(args, {
        "command": "arch", "manifest_hash": topo.manifest_hash,
        "mode": "cost", "paf_spec": args.spec, "cm_spec": args.cm or args.spec,
        "params": cost.params, "macs": cost.macs,
        "receptive_field": receptive_field(graph),
        "per_segment": cost.as_dict()["per_segment"],
    })
    return EXIT_OK


def cmd_bench(args) -> int:
    topo = _topology(args)
    sizes = args.image_size or [(480, 480)]
    records = run_bench(
        args.n_people, sizes, topo,
        enc_params=EncoderParams(stride=args.stride),
        dec_params=DecoderParams(threads=args.threads),
        warmup=args.warmup, repetitions=args.repetitions, seed=args.seed,
    )
    with open(args.csv, "w", newline="", encoding="utf-8") as fh:
        write_bench_csv(records, fh)
    first = (records[0].map_w, records[0].map_h)
    by_people = {r.n_people: r.median_ns for r in records if (r.map_w, r.map_h) == first}
    _emit(args, {
        "command": "bench", "manifest_hash": topo.manifest_hash,
        "n_records": len(records), "csv": str(args.csv),
        "median_ns_by_n_people": {str(k): v for k, v in sorted(by_people.items())},
    })
    return EXIT_OK


_HANDLERS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "loss": cmd_loss,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "roundtrip": cmd_roundtrip,
    "sample-plan": cmd_sample_plan,
    "arch": cmd_arch,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return _HANDLERS[args.command](args)
    except (WbptError, CocoIngestError, ManifestError, RegistryError,
            json.JSONDecodeError, OSError) as e:
        print(f"wbpose: {e}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, PackingError, MalformedSpec, ValueError) as e:
        print(f"wbpose: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
