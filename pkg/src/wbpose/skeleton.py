"""Skeleton topology: parts, limbs, anchors and the channel layout they induce.

Topology is data, not code. A manifest (JSON) lists parts with their group
(body / foot / face / hand), limbs as ordered (src, dst) part pairs, anchor
parts bridging two groups, and per-part OKS falloff constants. The channel
layout is fixed by the manifest: confidence channel c == part_id (plus an
optional trailing background channel), PAF channels (2*limb_id, 2*limb_id+1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

MANIFEST_VERSION = 1

DEFAULT_MANIFEST_NAME = "wholebody135.json"


class PartGroup(str, Enum):
    BODY = "body"
    FOOT = "foot"
    FACE = "face"
    HAND = "hand"


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    CENTER = "center"


class ManifestError(ValueError):
    """A topology manifest failed validation."""


class DisconnectedGroupError(ManifestError):
    """Parts exist that no anchor or body part can reach through limbs."""


@dataclass(frozen=True)
class Part:
    part_id: int
    name: str
    group: PartGroup
    side: Side


@dataclass(frozen=True)
class Limb:
    limb_id: int
    src: int
    dst: int
    # Group owning the limb's PAF channel pair. Resolved at load time as the
    # dst part's group, so cross-group limbs (eye -> face, wrist -> thumb)
    # belong to the non-body group they serve.
    group: PartGroup


@dataclass(frozen=True)
class Anchor:
    part_id: int
    group_a: PartGroup
    group_b: PartGroup


@dataclass(frozen=True)
class SkeletonTopology:
    parts: tuple[Part, ...]
    limbs: tuple[Limb, ...]
    anchors: tuple[Anchor, ...]
    oks_kappa: tuple[float, ...]
    background_channel: bool
    template_pose: Mapping[int, tuple[float, float]] | None
    manifest_hash: str

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    @property
    def n_limbs(self) -> int:
        return len(self.limbs)

    @property
    def confidence_channels(self) -> int:
        return self.n_parts + (1 if self.background_channel else 0)

    @property
    def paf_channels(self) -> int:
        return 2 * self.n_limbs

    @property
    def background_index(self) -> int | None:
        return self.n_parts if self.background_channel else None

    def channel_counts(self) -> tuple[int, int]:
        """(confidence channels incl. background if enabled, PAF channels)."""
        return self.confidence_channels, self.paf_channels

    def part_by_name(self, name: str) -> Part:
        for p in self.parts:
            if p.name == name:
                return p
        raise KeyError(name)

    def parts_of_group(self, group: PartGroup) -> tuple[Part, ...]:
        return tuple(p for p in self.parts if p.group == group)

    def confidence_channel_groups(self) -> list[PartGroup | None]:
        """Group per confidence channel; None for the background channel."""
        groups: list[PartGroup | None] = [p.group for p in self.parts]
        if self.background_channel:
            groups.append(None)
        return groups

    def paf_channel_groups(self) -> list[PartGroup]:
        """Group per PAF channel (both channels of a limb share its group)."""
        out: list[PartGroup] = []
        for limb in self.limbs:
            out.extend((limb.group, limb.group))
        return out

    def anchor_part_ids(self) -> frozenset[int]:
        return frozenset(a.part_id for a in self.anchors)


def _manifest_hash(manifest: Mapping) -> str:
    canon = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _reachable_from(seeds: set[int], n_parts: int, edges: list[tuple[int, int]]) -> set[int]:
    adj: dict[int, list[int]] = {i: [] for i in range(n_parts)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = set(seeds)
    stack = list(seeds)
    while stack:
        cur = stack.pop()
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def load_topology(source: str | Path | Mapping) -> SkeletonTopology:
    """Parse and validate a topology manifest (path or already-parsed dict).

    Raises ManifestError on structural problems and DisconnectedGroupError
    when some part cannot be reached from any body part or anchor.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    else:
        manifest = dict(source)

    version = manifest.get("manifest_version")
    if version != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest_version {version!r}, expected {MANIFEST_VERSION}")
    for key in ("parts", "limbs", "anchors", "oks_kappa"):
        if key not in manifest:
            raise ManifestError(f"manifest missing required key {key!r}")

    raw_parts = manifest["parts"]
    if not raw_parts:
        raise ManifestError("manifest declares no parts")
    seen_ids: set[int] = set()
    seen_names: set[str] = set()
    parts: list[Part] = []
    for entry in raw_parts:
        pid = int(entry["id"])
        if pid in seen_ids:
            raise ManifestError(f"duplicate part id {pid}")
        seen_ids.add(pid)
        name = str(entry["name"])
        if name in seen_names:
            raise ManifestError(f"duplicate part name {name!r}")
        seen_names.add(name)
        try:
            group = PartGroup(entry["group"])
            side = Side(entry.get("side", "center"))
        except ValueError as exc:
            raise ManifestError(str(exc)) from None
        parts.append(Part(pid, name, group, side))
    n_parts = len(parts)
    if seen_ids != set(range(n_parts)):
        raise ManifestError("part ids must be contiguous from 0 (they fix the channel layout)")
    parts.sort(key=lambda p: p.part_id)
    group_of = {p.part_id: p.group for p in parts}

    limbs: list[Limb] = []
    for idx, entry in enumerate(manifest["limbs"]):
        lid = int(entry.get("id", idx))
        if lid != idx:
            raise ManifestError(f"limb ids must be contiguous from 0 in order, got {lid} at index {idx}")
        src, dst = int(entry["src"]), int(entry["dst"])
        for ref in (src, dst):
            if ref not in seen_ids:
                raise ManifestError(f"limb {lid} references unknown part {ref}")
        if src == dst:
            raise ManifestError(f"limb {lid} is degenerate (src == dst == {src})")
        limbs.append(Limb(lid, src, dst, group_of[dst]))

    anchors: list[Anchor] = []
    for entry in manifest["anchors"]:
        pid = int(entry["part"])
        if pid not in seen_ids:
            raise ManifestError(f"anchor references unknown part {pid}")
        ga, gb = (PartGroup(g) for g in entry["groups"])
        if ga == gb:
            raise ManifestError(f"anchor part {pid} must bridge two distinct groups")
        if group_of[pid] not in (ga, gb):
            raise ManifestError(f"anchor part {pid} does not belong to either bridged group")
        anchors.append(Anchor(pid, ga, gb))

    raw_kappa = manifest["oks_kappa"]
    kappa = [0.0] * n_parts
    for key, val in raw_kappa.items():
        pid = int(key)
        if pid not in seen_ids:
            raise ManifestError(f"oks_kappa references unknown part {pid}")
        kappa[pid] = float(val)
    for p in parts:
        if not kappa[p.part_id] > 0.0:
            raise ManifestError(f"non-positive oks_kappa for part {p.part_id} ({p.name})")

    # Every part must be reachable from a body part or a declared anchor,
    # otherwise decode could never attach the orphaned parts to a person.
    seeds = {p.part_id for p in parts if p.group == PartGroup.BODY}
    seeds.update(a.part_id for a in anchors)
    if not seeds:
        raise DisconnectedGroupError("topology has no body parts and no anchors to root assembly")
    reached = _reachable_from(seeds, n_parts, [(l.src, l.dst) for l in limbs])
    orphans = sorted(set(range(n_parts)) - reached)
    if orphans:
        orphan_groups = sorted({group_of[pid].value for pid in orphans})
        raise DisconnectedGroupError(
            f"groups {orphan_groups} have parts unreachable from any anchor or body part: {orphans[:8]}"
        )

    template: dict[int, tuple[float, float]] | None = None
    if "template_pose" in manifest and manifest["template_pose"] is not None:
        template = {}
        for key, xy in manifest["template_pose"].items():
            pid = int(key)
            if pid not in seen_ids:
                raise ManifestError(f"template_pose references unknown part {pid}")
            template[pid] = (float(xy[0]), float(xy[1]))
        if set(template) != seen_ids:
            raise ManifestError("template_pose must cover every part or be omitted")

    return SkeletonTopology(
        parts=tuple(parts),
        limbs=tuple(limbs),
        anchors=tuple(anchors),
        oks_kappa=tuple(kappa),
        background_channel=bool(manifest.get("background_channel", True)),
        template_pose=template,
        manifest_hash=_manifest_hash(manifest),
    )


@lru_cache(maxsize=1)
def default_topology() -> SkeletonTopology:
    """The packaged 135-part whole-body topology (25 body+foot, 70 face, 2x20 hand)."""
    ref = resources.files("wbpose") / "data" / DEFAULT_MANIFEST_NAME
    with resources.as_file(ref) as path:
        return load_topology(path)


def default_manifest_path() -> Path:
    ref = resources.files("wbpose") / "data" / DEFAULT_MANIFEST_NAME
    with resources.as_file(ref) as path:
        return Path(path)
