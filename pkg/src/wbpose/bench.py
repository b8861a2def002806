"""Decode timing harness.

Times the decoder alone (scenes are generated and encoded once per grid
point, outside the clock) on a grid of person counts and image sizes, with
warmup runs discarded and medians over a fixed repetition count. The point
is the shape of the curve: a single decode pass is nearly flat in the person
count, unlike a body-pass-plus-crops pipeline whose cost grows linearly.
That comparison line comes from the runtime model and is always labeled
modeled, never measured.
"""

from __future__ import annotations

import csv
import ctypes
import gc
import statistics
import time
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .decoder import DecoderParams, decode_with_stats
from .encoder import EncoderParams, encode
from .skeleton import SkeletonTopology
from .synth import SceneRecipe, generate

CSV_COLUMNS = (
    "n_people", "map_w", "map_h", "threads",
    "median_ns", "p90_ns", "candidates", "connections",
)


@dataclass(frozen=True)
class BenchRecord:
    n_people: int
    map_w: int
    map_h: int
    threads: int
    median_ns: int
    p90_ns: int
    candidates: int
    connections: int
    repetitions: int
    nms_ns: int = 0
    scoring_ns: int = 0
    assembly_ns: int = 0

    def __post_init__(self) -> None:
        if self.repetitions < 10:
            raise ValueError("need >= 10 repetitions for stable medians")
        if self.median_ns > self.p90_ns:
            raise ValueError("median above p90; timing is broken")


def _percentile(sorted_ns: Sequence[int], q: float) -> int:
    idx = min(int(round(q * (len(sorted_ns) - 1))), len(sorted_ns) - 1)
    return sorted_ns[idx]


def _quiet_allocator() -> None:
    """Raise glibc's mmap/trim thresholds so the multi-megabyte scratch
    arrays each decode call allocates are recycled through the heap instead
    of being handed back to the kernel and page-faulted in again on the next
    repetition. Those fault storms cost a machine-state dependent 1-3 ms per
    call, right inside the timed region, and they scale with the person
    count, so they distort exactly the comparison this harness exists to
    make. Process-global and sticky by design (a timing run wants the
    allocator in one steady state throughout); silently a no-op off glibc.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 256 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 256 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def run_bench(
    n_people_grid: Sequence[int],
    image_sizes: Sequence[tuple[int, int]],
    topo: SkeletonTopology,
    enc_params: EncoderParams | None = None,
    dec_params: DecoderParams | None = None,
    warmup: int = 3,
    repetitions: int = 30,
    seed: int = 0,
) -> list[BenchRecord]:
    """One record per (n_people, image_size) grid point.

    Scenes come from the synthetic generator with separation-friendly
    defaults scaled to the image; infeasible packings propagate. Only
    decode_with_stats sits inside the timed region (monotonic clock).
    Repetitions are interleaved round-robin across the person-count grid so
    slow clock-frequency drift hits every grid point alike instead of
    skewing cross-point comparisons.
    """
    if warmup < 3:
        raise ValueError("warmup must be >= 3")
    if repetitions < 10:
        raise ValueError("repetitions must be >= 10")
    _quiet_allocator()
    enc_params = enc_params or EncoderParams()
    dec_params = dec_params or DecoderParams()
    records = []
    for image_size in image_sizes:
        prepared = []
        for n_people in sorted(n_people_grid):
            # Small people and a generous attempt budget so 20-person crowds
            # still pack into a 480x480 canvas.
            recipe = SceneRecipe(
                n_people=n_people,
                image_size=image_size,
                min_separation=10.0,
                person_scale=(45.0, 65.0),
                seed=seed,
                max_attempts=20_000,
            )
            scene = generate(recipe, topo)
            prepared.append((n_people, encode(scene, topo, enc_params)))

        timings: dict[int, list[int]] = {n: [] for n, _ in prepared}
        last_stats = {}
        # Collector pauses land in whichever repetition they interrupt, so
        # take them off the clock the way timeit does: collect once up
        # front, then keep the collector off for the timed block.
        gc_was_enabled = gc.isenabled()
        gc.collect()
        gc.disable()
        try:
            for rep in range(warmup + repetitions):
                for n_people, tensors in prepared:
                    t0 = time.perf_counter_ns()
                    _, stats = decode_with_stats(tensors, topo, dec_params)
                    elapsed = time.perf_counter_ns() - t0
                    if rep >= warmup:
                        timings[n_people].append(elapsed)
                        last_stats[n_people] = stats
        finally:
            if gc_was_enabled:
                gc.enable()

        for n_people, tensors in prepared:
            ns_sorted = sorted(timings[n_people])
            stats = last_stats[n_people]
            map_w, map_h, _ = tensors.grid
            records.append(
                BenchRecord(
                    n_people=n_people,
                    map_w=map_w,
                    map_h=map_h,
                    threads=dec_params.threads,
                    median_ns=int(statistics.median(ns_sorted)),
                    p90_ns=_percentile(ns_sorted, 0.9),
                    candidates=stats.candidates,
                    connections=stats.connections_scored,
                    repetitions=repetitions,
                    nms_ns=stats.nms_ns,
                    scoring_ns=stats.scoring_ns,
                    assembly_ns=stats.assembly_ns,
                )
            )
    return records


def write_bench_csv(records: Iterable[BenchRecord], fp: IO[str]) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([
            r.n_people, r.map_w, r.map_h, r.threads,
            r.median_ns, r.p90_ns, r.candidates, r.connections,
        ])


def read_bench_medians(lines: Iterable[str]) -> list[tuple[int, int]]:
    """(n_people, median_ns) pairs from a bench CSV, for runtime-model fits."""
    reader = csv.DictReader(lines)
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"bench CSV is missing columns: {sorted(missing)}")
    return [(int(row["n_people"]), int(row["median_ns"])) for row in reader]


def phase_scaling_report(
    image_sizes: Sequence[tuple[int, int]],
    topo: SkeletonTopology,
    n_people: int = 2,
    seed: int = 0,
    repetitions: int = 15,
) -> list[dict]:
    """Per-phase medians across map areas; the peak-extraction phase should
    scale roughly with map area."""
    records = run_bench(
        [n_people], image_sizes, topo, seed=seed, repetitions=repetitions
    )
    out = []
    for r in records:
        out.append({
            "map_w": r.map_w,
            "map_h": r.map_h,
            "area": r.map_w * r.map_h,
            "nms_ns": r.nms_ns,
            "scoring_ns": r.scoring_ns,
            "assembly_ns": r.assembly_ns,
            "median_ns": r.median_ns,
        })
    return out
