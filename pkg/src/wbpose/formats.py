"""Serialization surfaces: the WBPT tensor container, scenes/poses JSON
documents, and COCO-keypoint ingestion.

WBPT layout (all integers little-endian):

    magic      4 bytes  b"WBPT"
    version    u32      currently 1
    endianness u8       0x01 = little (the only value written or accepted)
    map_w      u32
    map_h      u32
    channels   u32
    stride     u32
    kind       u8       1 = confidence, 2 = paf, 3 = mask, 4 = combined
    manifest   32 bytes raw sha256 digest of the topology manifest
    directory  (kind 4 only) u8 count, then count * (u8 kind, u32 channels)
    payload    channels * map_h * map_w float32, channel-major, row-major

The manifest digest is embedded so a tensor file can refuse to be decoded
against the wrong topology.  Combined files store S, then L, then W
contiguously; the directory records the channel split so readers do not
need the topology to slice the payload.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .decoder import Pose
from .encoder import AnnotatedScene, Person, TargetTensors, Visibility
from .metrics import EvalPose
from .skeleton import PartGroup, SkeletonTopology

MAGIC = b"WBPT"
WBPT_VERSION = 1
LITTLE_ENDIAN = 0x01

KIND_CONFIDENCE = 1
KIND_PAF = 2
KIND_MASK = 3
KIND_COMBINED = 4

_HEADER = struct.Struct("<4sIBIIIIB")
_DIR_ENTRY = struct.Struct("<BI")

COCO_BODY_MAPPING_NAME = "coco_body_mapping.json"


class WbptError(ValueError):
    """A WBPT file failed validation."""


class BadMagic(WbptError):
    def __init__(self, got: bytes):
        super().__init__(f"not a WBPT file: magic {got!r}, expected {MAGIC!r}")
        self.got = got


class UnsupportedVersion(WbptError):
    def __init__(self, version: int):
        super().__init__(f"unsupported WBPT version {version}, this reader handles <= {WBPT_VERSION}")
        self.version = version


class Truncated(WbptError):
    """File ends before the structure it promises is complete."""

    def __init__(self, expected: int, actual: int, what: str):
        super().__init__(f"truncated WBPT file in {what}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


def _check_mask_values(values: np.ndarray, what: str) -> None:
    bad = values[(values != 0.0) & (values != 1.0)]
    if bad.size:
        raise WbptError(f"{what} must be 0.0 or 1.0, found {float(bad.flat[0])!r}")


@dataclass(frozen=True)
class WbptFile:
    """An in-memory WBPT container.

    ``payload`` is (channels, map_h, map_w) float32.  ``sections`` is the
    channel directory for combined files: (kind, channels) pairs in payload
    order; empty for single-kind files.
    """

    kind: int
    stride: int
    manifest_hash: str
    payload: np.ndarray
    sections: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.kind not in (KIND_CONFIDENCE, KIND_PAF, KIND_MASK, KIND_COMBINED):
            raise WbptError(f"unknown kind byte {self.kind}")
        if self.payload.ndim != 3:
            raise WbptError(f"payload must be (channels, h, w), got shape {self.payload.shape}")
        if self.payload.dtype != np.float32:
            raise WbptError(f"payload must be float32, got {self.payload.dtype}")
        if len(self.manifest_hash) != 64 or set(self.manifest_hash) - set("0123456789abcdef"):
            raise WbptError("manifest_hash must be a lowercase sha256 hex digest")
        if self.stride < 1:
            raise WbptError(f"stride must be >= 1, got {self.stride}")
        if self.kind == KIND_COMBINED:
            if not self.sections:
                raise WbptError("combined files need a channel directory")
            for k, n in self.sections:
                if k not in (KIND_CONFIDENCE, KIND_PAF, KIND_MASK):
                    raise WbptError(f"directory entry kind {k} is not a payload kind")
                if n < 1:
                    raise WbptError("directory entries must cover at least one channel")
            total = sum(n for _, n in self.sections)
            if total != self.channels:
                raise WbptError(
                    f"directory covers {total} channels, payload has {self.channels}"
                )
        elif self.sections:
            raise WbptError("only combined files carry a channel directory")
        if self.kind == KIND_MASK:
            _check_mask_values(self.payload, "mask payload values")
        elif self.kind == KIND_COMBINED:
            at = 0
            for k, n in self.sections:
                if k == KIND_MASK:
                    _check_mask_values(self.payload[at : at + n], "mask section values")
                at += n

    @property
    def channels(self) -> int:
        return self.payload.shape[0]

    @property
    def map_h(self) -> int:
        return self.payload.shape[1]

    @property
    def map_w(self) -> int:
        return self.payload.shape[2]


def to_bytes(f: WbptFile) -> bytes:
    head = _HEADER.pack(
        MAGIC, WBPT_VERSION, LITTLE_ENDIAN, f.map_w, f.map_h, f.channels, f.stride, f.kind
    )
    parts = [head, bytes.fromhex(f.manifest_hash)]
    if f.kind == KIND_COMBINED:
        parts.append(struct.pack("<B", len(f.sections)))
        for k, n in f.sections:
            parts.append(_DIR_ENTRY.pack(k, n))
    payload = np.ascontiguousarray(f.payload, dtype="<f4")
    parts.append(payload.tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> WbptFile:
    if len(buf) < 4:
        raise Truncated(4, len(buf), "magic")
    if buf[:4] != MAGIC:
        raise BadMagic(buf[:4])
    if len(buf) < _HEADER.size:
        raise Truncated(_HEADER.size, len(buf), "header")
    _, version, endian, map_w, map_h, channels, stride, kind = _HEADER.unpack_from(buf, 0)
    if version > WBPT_VERSION or version < 1:
        raise UnsupportedVersion(version)
    if endian != LITTLE_ENDIAN:
        raise WbptError(f"unknown endianness byte {endian:#x}")
    at = _HEADER.size
    if len(buf) < at + 32:
        raise Truncated(at + 32, len(buf), "manifest hash")
    manifest_hash = buf[at : at + 32].hex()
    at += 32
    sections: tuple[tuple[int, int], ...] = ()
    if kind == KIND_COMBINED:
        if len(buf) < at + 1:
            raise Truncated(at + 1, len(buf), "channel directory")
        (count,) = struct.unpack_from("<B", buf, at)
        at += 1
        need = at + count * _DIR_ENTRY.size
        if len(buf) < need:
            raise Truncated(need, len(buf), "channel directory")
        entries = []
        for _ in range(count):
            entries.append(_DIR_ENTRY.unpack_from(buf, at))
            at += _DIR_ENTRY.size
        sections = tuple((int(k), int(n)) for k, n in entries)
    expected = at + channels * map_h * map_w * 4
    if len(buf) < expected:
        raise Truncated(expected, len(buf), "payload")
    if len(buf) > expected:
        raise WbptError(f"{len(buf) - expected} trailing bytes after payload")
    flat = np.frombuffer(buf, dtype="<f4", offset=at)
    payload = flat.reshape(channels, map_h, map_w).astype(np.float32, copy=True)
    return WbptFile(
        kind=int(kind),
        stride=int(stride),
        manifest_hash=manifest_hash,
        payload=payload,
        sections=sections,
    )


def write_wbpt(path, f: WbptFile) -> int:
    data = to_bytes(f)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_wbpt(path) -> WbptFile:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def from_targets(targets: TargetTensors, manifest_hash: str) -> WbptFile:
    """Pack encoder output as a combined (kind 4) file: S, then L, then W."""
    sections = (
        (KIND_CONFIDENCE, targets.s_star.shape[0]),
        (KIND_PAF, targets.l_star.shape[0]),
        (KIND_MASK, targets.w_mask.shape[0]),
    )
    payload = np.concatenate([targets.s_star, targets.l_star, targets.w_mask], axis=0)
    return WbptFile(
        kind=KIND_COMBINED,
        stride=targets.stride,
        manifest_hash=manifest_hash,
        payload=np.ascontiguousarray(payload, dtype=np.float32),
        sections=sections,
    )


def to_targets(f: WbptFile) -> TargetTensors:
    """Unpack a combined file.  The original image size is not stored, so it
    is reconstructed as map size * stride (exact when the image was a
    multiple of the stride, otherwise rounded up to the next cell)."""
    if f.kind != KIND_COMBINED:
        raise WbptError(f"need a combined (kind {KIND_COMBINED}) file, got kind {f.kind}")
    kinds = tuple(k for k, _ in f.sections)
    if kinds != (KIND_CONFIDENCE, KIND_PAF, KIND_MASK):
        raise WbptError(f"combined file must hold S, L, W sections in order, got kinds {kinds}")
    n_s = f.sections[0][1]
    n_l = f.sections[1][1]
    return TargetTensors(
        s_star=f.payload[:n_s].copy(),
        l_star=f.payload[n_s : n_s + n_l].copy(),
        w_mask=f.payload[n_s + n_l :].copy(),
        stride=f.stride,
        image_size=(f.map_w * f.stride, f.map_h * f.stride),
    )


# ---------------------------------------------------------------------------
# Scenes / poses JSON documents.
#
# Scene coordinates are pixels, matching the annotation side of the encoder.
# Pose documents are also written in pixels (map coordinates * stride) so the
# two document types compare directly and OKS areas stay in one unit.


def _provenance(manifest_hash: str, seed: int | None) -> dict:
    out: dict = {"tool_version": __version__, "manifest_hash": manifest_hash}
    if seed is not None:
        out["seed"] = int(seed)
    return out


def scene_to_obj(scene: AnnotatedScene) -> dict:
    return {
        "scene_id": int(scene.scene_id),
        "image_size": [int(scene.image_size[0]), int(scene.image_size[1])],
        "coverage": sorted(g.value for g in scene.coverage),
        "no_people": bool(scene.no_people),
        "people": [
            {
                "parts": {
                    str(pid): [float(x), float(y), vis.value]
                    for pid, (x, y, vis) in sorted(person.parts.items())
                }
            }
            for person in scene.people
        ],
        "unlabeled_regions": [[float(v) for v in box] for box in scene.unlabeled_regions],
    }


def scene_from_obj(obj: Mapping) -> AnnotatedScene:
    people = [
        Person(
            parts={
                int(pid): (float(x), float(y), Visibility(vis))
                for pid, (x, y, vis) in p["parts"].items()
            }
        )
        for p in obj.get("people", [])
    ]
    return AnnotatedScene(
        image_size=(int(obj["image_size"][0]), int(obj["image_size"][1])),
        people=people,
        coverage=frozenset(PartGroup(g) for g in obj["coverage"]),
        unlabeled_regions=[tuple(float(v) for v in box) for box in obj.get("unlabeled_regions", [])],
        no_people=bool(obj.get("no_people", False)),
        scene_id=int(obj.get("scene_id", 0)),
    )


def scenes_document(
    scenes: Sequence[AnnotatedScene], manifest_hash: str, seed: int | None = None
) -> dict:
    doc = _provenance(manifest_hash, seed)
    doc["scenes"] = [scene_to_obj(s) for s in scenes]
    return doc


def scenes_from_document(doc: Mapping) -> list[AnnotatedScene]:
    return [scene_from_obj(obj) for obj in doc["scenes"]]


def pose_to_obj(pose: Pose, stride: int) -> dict:
    return {
        "person_score": float(pose.person_score),
        "parts": {
            str(pid): [float(x) * stride, float(y) * stride, float(s)]
            for pid, (x, y, s) in sorted(pose.parts.items())
        },
    }


def poses_document(
    poses_by_scene: Mapping[int, Sequence[Pose]],
    stride: int,
    manifest_hash: str,
    seed: int | None = None,
) -> dict:
    doc = _provenance(manifest_hash, seed)
    doc["stride"] = int(stride)
    doc["poses"] = {
        str(scene_id): [pose_to_obj(p, stride) for p in poses]
        for scene_id, poses in sorted(poses_by_scene.items())
    }
    return doc


def poses_from_document(doc: Mapping) -> dict[int, list[EvalPose]]:
    """Pixel-space poses keyed by scene id, ready for the evaluator."""
    out: dict[int, list[EvalPose]] = {}
    for scene_id, poses in doc["poses"].items():
        out[int(scene_id)] = [
            EvalPose(
                parts={int(pid): (float(x), float(y)) for pid, (x, y, _) in p["parts"].items()},
                score=float(p["person_score"]),
            )
            for p in poses
        ]
    return out


# ---------------------------------------------------------------------------
# COCO keypoint ingestion.


class CocoIngestError(ValueError):
    """A COCO keypoint document does not fit the mapping."""


_COCO_VIS = {0: Visibility.MISSING, 1: Visibility.OCCLUDED, 2: Visibility.LABELED}


def default_coco_mapping() -> dict:
    path = resources.files("wbpose") / "data" / COCO_BODY_MAPPING_NAME
    return json.loads(path.read_text(encoding="utf-8"))


def ingest_coco(
    coco: Mapping,
    topo: SkeletonTopology,
    mapping: Mapping | None = None,
    seed: int | None = None,
) -> dict:
    """Convert a COCO keypoint document into a scenes document.

    The mapping names the COCO category, the part groups it covers, and the
    keypoint-name correspondence.  Visibility flags map 0/1/2 to
    missing/occluded/labeled.  Crowd annotations contribute their boxes as
    unlabeled regions instead of people; images without annotations become
    explicit no-people scenes.  Scene ids are the COCO image ids and output
    order follows ascending image id.
    """
    if mapping is None:
        mapping = default_coco_mapping()

    category_name = mapping["category"]
    cat_ids = {c["id"] for c in coco.get("categories", []) if c.get("name") == category_name}
    if not cat_ids:
        raise CocoIngestError(f"no category named {category_name!r} in the document")
    known_ids = {c["id"] for c in coco.get("categories", [])}

    name_order = None
    for c in coco.get("categories", []):
        if c["id"] in cat_ids and "keypoints" in c:
            name_order = list(c["keypoints"])
    if name_order is None:
        name_order = list(mapping["keypoints"].keys())
    part_of_slot: list[int | None] = []
    for coco_name in name_order:
        ours = mapping["keypoints"].get(coco_name)
        part_of_slot.append(topo.part_by_name(ours).part_id if ours is not None else None)

    coverage = frozenset(PartGroup(g) for g in mapping["groups"])

    by_image: dict[int, list[Mapping]] = {img["id"]: [] for img in coco["images"]}
    for ann in coco.get("annotations", []):
        cid = ann.get("category_id")
        if cid not in known_ids:
            raise CocoIngestError(f"annotation {ann.get('id')} has unknown category id {cid}")
        if cid not in cat_ids:
            continue
        if ann["image_id"] not in by_image:
            raise CocoIngestError(f"annotation {ann.get('id')} references missing image {ann['image_id']}")
        by_image[ann["image_id"]].append(ann)

    scenes = []
    for img in sorted(coco["images"], key=lambda im: im["id"]):
        people: list[Person] = []
        regions: list[tuple[float, float, float, float]] = []
        for ann in by_image[img["id"]]:
            if ann.get("iscrowd", 0):
                x, y, w, h = ann["bbox"]
                regions.append((float(x), float(y), float(x + w), float(y + h)))
                continue
            kp = ann["keypoints"]
            if len(kp) != 3 * len(part_of_slot):
                raise CocoIngestError(
                    f"annotation {ann.get('id')} has {len(kp)} keypoint values, "
                    f"expected {3 * len(part_of_slot)}"
                )
            parts: dict[int, tuple[float, float, Visibility]] = {}
            for slot, pid in enumerate(part_of_slot):
                if pid is None:
                    continue
                x, y, v = kp[3 * slot : 3 * slot + 3]
                if int(v) not in _COCO_VIS:
                    raise CocoIngestError(f"annotation {ann.get('id')} has visibility flag {v}")
                parts[pid] = (float(x), float(y), _COCO_VIS[int(v)])
            people.append(Person(parts=parts))
        scenes.append(
            AnnotatedScene(
                image_size=(int(img["width"]), int(img["height"])),
                people=people,
                coverage=coverage,
                unlabeled_regions=regions,
                no_people=not people and not regions,
                scene_id=int(img["id"]),
            )
        )
    return scenes_document(scenes, topo.manifest_hash, seed)
