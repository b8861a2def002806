"""Dataset sampling and augmentation planning for mixed-source training.

A registry of dataset specs carries per-dataset pick probabilities, part
coverage, and augmentation ranges. The scheduler draws the source dataset
for each batch by inverse CDF and one augmentation tuple per image, all from
a counter-based functional RNG, so any batch of a plan can be regenerated
from (seed, batch_index) without replaying the stream.

Plans serialize to JSON lines: a header naming the seed, the RNG algorithm,
and the registry hash, then one line per batch. No pixels are touched here;
plans are instructions for a trainer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .skeleton import PartGroup, SkeletonTopology

RNG_ALGORITHM = "numpy-philox4x64/seedseq(seed,counter)"

REGISTRY_VERSION = 1


class RegistryError(ValueError):
    pass


class Special(str, Enum):
    NORMAL = "normal"
    NO_PEOPLE = "no_people"


@dataclass(frozen=True)
class AugmentationRanges:
    scale: tuple[float, float] = (1.0 / 3.0, 1.5)
    rotation_deg: float = 45.0
    flip_prob: float = 0.5
    crop: tuple[int, int] = (480, 480)

    def __post_init__(self) -> None:
        lo, hi = self.scale
        if not (0 < lo <= hi):
            raise RegistryError(f"bad scale range {self.scale}")
        if self.rotation_deg < 0:
            raise RegistryError("rotation_deg must be >= 0")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise RegistryError("flip_prob must be in [0, 1]")
        if self.crop[0] <= 0 or self.crop[1] <= 0:
            raise RegistryError("crop target must be positive")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    size: int
    coverage: frozenset[PartGroup]
    probability: float
    aug: AugmentationRanges = field(default_factory=AugmentationRanges)
    special: Special = Special.NORMAL

    def __post_init__(self) -> None:
        if not (0.0 <= self.probability <= 1.0):
            raise RegistryError(f"{self.name}: probability {self.probability} outside [0, 1]")
        if self.size <= 0:
            raise RegistryError(f"{self.name}: size must be positive")


@dataclass(frozen=True)
class RngState:
    """Value-typed RNG position: every draw keys a fresh Philox generator by
    (seed, counter) and hands back the incremented state."""

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(np.random.SeedSequence((self.seed, self.counter)))
        )

    def advanced(self, steps: int = 1) -> "RngState":
        return RngState(self.seed, self.counter + steps)


@dataclass(frozen=True)
class AugmentationDraw:
    scale: float
    rotation_deg: float
    flip: bool
    crop_offset: tuple[float, float]  # fractional placement in [0, 1)^2

    def as_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation_deg": self.rotation_deg,
            "flip": self.flip,
            "crop_offset": list(self.crop_offset),
        }


def default_registry() -> tuple[DatasetSpec, ...]:
    """The shipped training mix.

    Pick probabilities: COCO 76.51% (76.5% plus the 0.01% left over once
    every other share is allocated), foot and MPII 5% each, three face
    sources at 0.33% each, dome hand 0.5%, MPII hand 5%, whole-body 5%,
    person-free negatives 2%. Scale defaults to [1/3, 1.5]; dome hand crops
    are sampled larger at [2/3, 4.5] and MPII hand at [0.5, 4.0]. Rotation
    is +-45 degrees, flip 50%, crop 480x480 everywhere.
    """
    default_aug = AugmentationRanges()
    body = frozenset({PartGroup.BODY})
    face = frozenset({PartGroup.FACE})
    hand = frozenset({PartGroup.HAND})
    return (
        DatasetSpec("coco", 118287, body, 0.7651),
        DatasetSpec("foot", 14455, frozenset({PartGroup.BODY, PartGroup.FOOT}), 0.05),
        DatasetSpec("mpii", 24984, body, 0.05),
        DatasetSpec("face_a", 5000, face, 0.0033),
        DatasetSpec("face_b", 10000, face, 0.0033),
        DatasetSpec("face_c", 1500, face, 0.0033),
        DatasetSpec(
            "dome_hand", 14817, hand, 0.005,
            AugmentationRanges(scale=(2.0 / 3.0, 4.5)),
        ),
        DatasetSpec(
            "mpii_hand", 1912, hand, 0.05,
            AugmentationRanges(scale=(0.5, 4.0)),
        ),
        DatasetSpec("wholebody", 7588, frozenset(PartGroup), 0.05),
        DatasetSpec(
            "no_people", 4000, frozenset(), 0.02,
            default_aug, Special.NO_PEOPLE,
        ),
    )


def validate_registry(registry: Sequence[DatasetSpec]) -> None:
    if not registry:
        raise RegistryError("registry is empty")
    names = [spec.name for spec in registry]
    if len(set(names)) != len(names):
        raise RegistryError("duplicate dataset names in registry")
    total = sum(spec.probability for spec in registry)
    if abs(total - 1.0) > 1e-9:
        raise RegistryError(f"probabilities sum to {total!r}, expected 1.0")


def registry_hash(registry: Sequence[DatasetSpec]) -> str:
    return hashlib.sha256(
        json.dumps(registry_to_json(registry), sort_keys=True).encode()
    ).hexdigest()


def registry_to_json(registry: Sequence[DatasetSpec]) -> dict:
    return {
        "registry_version": REGISTRY_VERSION,
        "datasets": [
            {
                "name": s.name,
                "size": s.size,
                "coverage": sorted(g.value for g in s.coverage),
                "probability": s.probability,
                "special": s.special.value,
                "aug": {
                    "scale": list(s.aug.scale),
                    "rotation_deg": s.aug.rotation_deg,
                    "flip_prob": s.aug.flip_prob,
                    "crop": list(s.aug.crop),
                },
            }
            for s in registry
        ],
    }


def registry_from_json(doc: Mapping) -> tuple[DatasetSpec, ...]:
    if doc.get("registry_version") != REGISTRY_VERSION:
        raise RegistryError(
            f"unsupported registry_version {doc.get('registry_version')!r}"
        )
    specs = []
    for entry in doc.get("datasets", []):
        try:
            aug_doc = entry.get("aug", {})
            aug = AugmentationRanges(
                scale=tuple(aug_doc.get("scale", (1.0 / 3.0, 1.5))),
                rotation_deg=aug_doc.get("rotation_deg", 45.0),
                flip_prob=aug_doc.get("flip_prob", 0.5),
                crop=tuple(aug_doc.get("crop", (480, 480))),
            )
            specs.append(
                DatasetSpec(
                    name=entry["name"],
                    size=entry["size"],
                    coverage=frozenset(PartGroup(g) for g in entry["coverage"]),
                    probability=entry["probability"],
                    aug=aug,
                    special=Special(entry.get("special", "normal")),
                )
            )
        except (KeyError, ValueError) as exc:
            raise RegistryError(f"bad dataset entry {entry.get('name', '?')!r}: {exc}") from exc
    registry = tuple(specs)
    validate_registry(registry)
    return registry


def next_batch(
    registry: Sequence[DatasetSpec], state: RngState
) -> tuple[DatasetSpec, RngState]:
    """Pick the source dataset for one batch by inverse CDF in registry order."""
    validate_registry(registry)
    u = float(state.generator().random())
    acc = 0.0
    chosen = registry[-1]  # guard against float leftovers at u ~ 1
    for spec in registry:
        acc += spec.probability
        if u < acc:
            chosen = spec
            break
    return chosen, state.advanced()


def draw_augmentation(
    spec: DatasetSpec, state: RngState
) -> tuple[AugmentationDraw, RngState]:
    """One augmentation tuple for one image: uniform scale over the spec
    range, uniform rotation over +-range, Bernoulli flip, uniform fractional
    crop placement. Draw order within the generator is fixed."""
    gen = state.generator()
    lo, hi = spec.aug.scale
    scale = float(gen.uniform(lo, hi))
    rotation = float(gen.uniform(-spec.aug.rotation_deg, spec.aug.rotation_deg))
    flip = bool(gen.random() < spec.aug.flip_prob)
    crop_offset = (float(gen.random()), float(gen.random()))
    return AugmentationDraw(scale, rotation, flip, crop_offset), state.advanced()


def mask_policy(spec: DatasetSpec, topo: SkeletonTopology) -> np.ndarray:
    """Channel enablement before any region carving: a bool per channel in
    (confidence + PAF) order. A channel is enabled iff its part group is in
    the dataset's coverage; the background channel is always enabled;
    person-free datasets enable everything (their whole canvas is negative
    supervision)."""
    groups = list(topo.confidence_channel_groups()) + list(topo.paf_channel_groups())
    if spec.special is Special.NO_PEOPLE:
        return np.ones(len(groups), dtype=bool)
    return np.array(
        [g is None or g in spec.coverage for g in groups], dtype=bool
    )


@dataclass(frozen=True)
class BatchPlan:
    batch_index: int
    dataset: str
    draws: tuple[AugmentationDraw, ...]

    def as_dict(self) -> dict:
        return {
            "batch_index": self.batch_index,
            "dataset": self.dataset,
            "draws": [d.as_dict() for d in self.draws],
        }


@dataclass(frozen=True)
class SamplePlan:
    seed: int
    batch_size: int
    registry_hash: str
    batches: tuple[BatchPlan, ...]


def state_for_batch(seed: int, batch_index: int, batch_size: int) -> RngState:
    """Counter layout: batch i owns counters [i*(1+B), (i+1)*(1+B)) — one for
    the dataset pick, then one per image."""
    return RngState(seed, batch_index * (1 + batch_size))


def plan_batch(
    registry: Sequence[DatasetSpec], seed: int, batch_index: int, batch_size: int
) -> BatchPlan:
    state = state_for_batch(seed, batch_index, batch_size)
    spec, state = next_batch(registry, state)
    draws = []
    for _ in range(batch_size):
        draw, state = draw_augmentation(spec, state)
        draws.append(draw)
    return BatchPlan(batch_index=batch_index, dataset=spec.name, draws=tuple(draws))


def build_plan(
    registry: Sequence[DatasetSpec], seed: int, n_batches: int, batch_size: int
) -> SamplePlan:
    validate_registry(registry)
    if n_batches < 0 or batch_size <= 0:
        raise ValueError("need n_batches >= 0 and batch_size >= 1")
    batches = tuple(
        plan_batch(registry, seed, i, batch_size) for i in range(n_batches)
    )
    return SamplePlan(
        seed=seed,
        batch_size=batch_size,
        registry_hash=registry_hash(registry),
        batches=batches,
    )


def write_plan_jsonl(plan: SamplePlan, fp: IO[str]) -> None:
    header = {
        "seed": plan.seed,
        "rng_algorithm": RNG_ALGORITHM,
        "registry_hash": plan.registry_hash,
        "batch_size": plan.batch_size,
        "n_batches": len(plan.batches),
    }
    fp.write(json.dumps(header) + "\n")
    for batch in plan.batches:
        fp.write(json.dumps(batch.as_dict()) + "\n")


def read_plan_jsonl(lines: Iterable[str]) -> SamplePlan:
    it = iter(lines)
    try:
        header = json.loads(next(it))
    except StopIteration:
        raise ValueError("empty plan file") from None
    if header.get("rng_algorithm") != RNG_ALGORITHM:
        raise ValueError(f"plan was written with {header.get('rng_algorithm')!r}")
    batches = []
    for line in it:
        if not line.strip():
            continue
        doc = json.loads(line)
        batches.append(
            BatchPlan(
                batch_index=doc["batch_index"],
                dataset=doc["dataset"],
                draws=tuple(
                    AugmentationDraw(
                        scale=d["scale"],
                        rotation_deg=d["rotation_deg"],
                        flip=d["flip"],
                        crop_offset=tuple(d["crop_offset"]),
                    )
                    for d in doc["draws"]
                ),
            )
        )
    return SamplePlan(
        seed=header["seed"],
        batch_size=header["batch_size"],
        registry_hash=header["registry_hash"],
        batches=tuple(batches),
    )
