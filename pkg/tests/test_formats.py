"""WBPT container, scenes/poses JSON documents, COCO ingestion."""
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbpose import __version__
from wbpose.decoder import Pose
from wbpose.encoder import AnnotatedScene, Person, Visibility, encode
from wbpose.formats import (
    KIND_COMBINED,
    KIND_CONFIDENCE,
    KIND_MASK,
    KIND_PAF,
    BadMagic,
    CocoIngestError,
    Truncated,
    UnsupportedVersion,
    WbptError,
    WbptFile,
    from_bytes,
    from_targets,
    ingest_coco,
    poses_document,
    poses_from_document,
    read_wbpt,
    scene_from_obj,
    scenes_document,
    scenes_from_document,
    to_bytes,
    to_targets,
    write_wbpt,
)
from wbpose.skeleton import PartGroup

DATA = Path(__file__).parent / "data"
HASH64 = "ab" * 32


def random_file(rng, kind=KIND_CONFIDENCE, channels=3, h=5, w=7):
    payload = rng.standard_normal((channels, h, w)).astype(np.float32)
    sections = ()
    if kind == KIND_MASK:
        payload = (payload > 0).astype(np.float32)
    if kind == KIND_COMBINED:
        payload[2] = (payload[2] > 0).astype(np.float32)
        sections = ((KIND_CONFIDENCE, 1), (KIND_PAF, 1), (KIND_MASK, 1))
    return WbptFile(kind=kind, stride=8, manifest_hash=HASH64, payload=payload, sections=sections)


class TestWbptBinary:
    def test_rewrite_is_byte_identical(self):
        rng = np.random.default_rng(11)
        for kind in (KIND_CONFIDENCE, KIND_PAF, KIND_MASK, KIND_COMBINED):
            first = to_bytes(random_file(rng, kind=kind))
            assert to_bytes(from_bytes(first)) == first

    def test_fields_survive(self):
        f = random_file(np.random.default_rng(0), kind=KIND_COMBINED)
        g = from_bytes(to_bytes(f))
        assert (g.kind, g.stride, g.manifest_hash) == (f.kind, f.stride, f.manifest_hash)
        assert g.sections == f.sections
        assert g.payload.dtype == np.float32
        np.testing.assert_array_equal(g.payload, f.payload)

    def test_file_roundtrip(self, tmp_path):
        f = random_file(np.random.default_rng(1))
        n = write_wbpt(tmp_path / "t.wbpt", f)
        assert n == (tmp_path / "t.wbpt").stat().st_size
        g = read_wbpt(tmp_path / "t.wbpt")
        np.testing.assert_array_equal(g.payload, f.payload)

    def test_bad_magic(self):
        buf = b"XXXX" + to_bytes(random_file(np.random.default_rng(2)))[4:]
        with pytest.raises(BadMagic):
            from_bytes(buf)

    def test_truncated_one_float_short(self):
        buf = to_bytes(random_file(np.random.default_rng(3)))
        with pytest.raises(Truncated) as err:
            from_bytes(buf[:-4])
        assert err.value.expected == len(buf)
        assert err.value.actual == len(buf) - 4

    def test_truncated_header(self):
        buf = to_bytes(random_file(np.random.default_rng(4)))
        with pytest.raises(Truncated):
            from_bytes(buf[:10])

    def test_trailing_bytes_rejected(self):
        buf = to_bytes(random_file(np.random.default_rng(5)))
        with pytest.raises(WbptError, match="trailing"):
            from_bytes(buf + b"\x00")

    def test_future_version_rejected(self):
        buf = bytearray(to_bytes(random_file(np.random.default_rng(6))))
        struct.pack_into("<I", buf, 4, 2)
        with pytest.raises(UnsupportedVersion) as err:
            from_bytes(bytes(buf))
        assert err.value.version == 2

    def test_wrong_endianness_byte(self):
        buf = bytearray(to_bytes(random_file(np.random.default_rng(7))))
        buf[8] = 0x02
        with pytest.raises(WbptError, match="endianness"):
            from_bytes(bytes(buf))

    def test_mask_values_validated(self):
        payload = np.full((1, 2, 2), 0.5, dtype=np.float32)
        with pytest.raises(WbptError, match="0.0 or 1.0"):
            WbptFile(kind=KIND_MASK, stride=8, manifest_hash=HASH64, payload=payload)

    def test_directory_must_cover_channels(self):
        payload = np.zeros((3, 2, 2), dtype=np.float32)
        with pytest.raises(WbptError, match="directory covers"):
            WbptFile(
                kind=KIND_COMBINED,
                stride=8,
                manifest_hash=HASH64,
                payload=payload,
                sections=((KIND_CONFIDENCE, 1), (KIND_PAF, 1)),
            )

    @settings(max_examples=30, deadline=None)
    @given(
        kind=st.sampled_from([KIND_CONFIDENCE, KIND_PAF]),
        channels=st.integers(1, 6),
        h=st.integers(1, 9),
        w=st.integers(1, 9),
        stride=st.integers(1, 16),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_roundtrip_property(self, kind, channels, h, w, stride, seed):
        payload = np.random.default_rng(seed).standard_normal((channels, h, w)).astype(np.float32)
        f = WbptFile(kind=kind, stride=stride, manifest_hash=HASH64, payload=payload)
        buf = to_bytes(f)
        g = from_bytes(buf)
        assert to_bytes(g) == buf
        assert (g.map_w, g.map_h, g.channels, g.stride) == (w, h, channels, stride)
        np.testing.assert_array_equal(g.payload, payload)


class TestTargetsPacking:
    def test_encode_pack_unpack(self, tiny_topo):
        scene = AnnotatedScene(
            image_size=(64, 48),
            people=[
                Person(parts={
                    0: (30.0, 10.0, Visibility.LABELED),
                    1: (30.0, 20.0, Visibility.LABELED),
                    2: (32.0, 40.0, Visibility.LABELED),
                })
            ],
            coverage=frozenset({PartGroup.BODY, PartGroup.FOOT}),
        )
        targets = encode(scene, tiny_topo)
        f = from_targets(targets, tiny_topo.manifest_hash)
        assert f.kind == KIND_COMBINED
        assert f.manifest_hash == tiny_topo.manifest_hash
        back = to_targets(from_bytes(to_bytes(f)))
        np.testing.assert_array_equal(back.s_star, targets.s_star)
        np.testing.assert_array_equal(back.l_star, targets.l_star)
        np.testing.assert_array_equal(back.w_mask, targets.w_mask)
        assert back.stride == targets.stride
        assert back.image_size == targets.image_size

    def test_to_targets_needs_combined(self):
        f = random_file(np.random.default_rng(8), kind=KIND_PAF)
        with pytest.raises(WbptError, match="combined"):
            to_targets(f)


class TestJsonDocuments:
    def scenes(self):
        return [
            AnnotatedScene(
                image_size=(100, 80),
                people=[
                    Person(parts={
                        0: (10.0, 12.5, Visibility.LABELED),
                        1: (11.0, 20.0, Visibility.OCCLUDED),
                        2: (0.0, 0.0, Visibility.MISSING),
                    })
                ],
                coverage=frozenset({PartGroup.BODY}),
                unlabeled_regions=[(1.0, 2.0, 3.0, 4.0)],
                scene_id=7,
            ),
            AnnotatedScene(
                image_size=(32, 32),
                people=[],
                coverage=frozenset({PartGroup.BODY, PartGroup.FOOT}),
                no_people=True,
                scene_id=8,
            ),
        ]

    def test_scene_roundtrip(self):
        original = self.scenes()
        doc = scenes_document(original, HASH64, seed=42)
        recovered = scenes_from_document(json.loads(json.dumps(doc)))
        assert recovered == original

    def test_provenance_fields(self):
        doc = scenes_document(self.scenes(), HASH64, seed=42)
        assert doc["tool_version"] == __version__
        assert doc["manifest_hash"] == HASH64
        assert doc["seed"] == 42

    def test_scene_from_obj_defaults(self):
        scene = scene_from_obj({"image_size": [10, 10], "coverage": ["body"], "people": []})
        assert scene.unlabeled_regions == [] and not scene.no_people and scene.scene_id == 0

    def test_poses_document_pixel_space(self):
        poses = {
            3: [Pose(parts={0: (2.0, 4.0, 0.9), 5: (1.5, 0.25, 0.7)},
                     candidate_ids={0: 0, 5: 1}, person_score=3.1)],
            1: [],
        }
        doc = poses_document(poses, stride=8, manifest_hash=HASH64, seed=5)
        assert doc["stride"] == 8 and doc["seed"] == 5
        back = poses_from_document(json.loads(json.dumps(doc)))
        assert set(back) == {1, 3}
        (ep,) = back[3]
        assert ep.score == pytest.approx(3.1)
        assert ep.parts[0] == (16.0, 32.0)
        assert ep.parts[5] == (12.0, 2.0)


class TestCocoIngestion:
    def toy(self):
        return json.loads((DATA / "toy_coco.json").read_text())

    def test_matches_hand_converted_fixture(self, topo):
        doc = ingest_coco(self.toy(), topo)
        expected = json.loads((DATA / "toy_coco_expected_scenes.json").read_text())
        assert doc["scenes"] == expected["scenes"]
        assert doc["manifest_hash"] == topo.manifest_hash

    def test_scenes_are_loadable_and_encodable(self, topo):
        doc = ingest_coco(self.toy(), topo)
        scenes = scenes_from_document(doc)
        assert [s.scene_id for s in scenes] == [10, 11, 12]
        assert scenes[2].no_people and not scenes[2].people
        targets = encode(scenes[0], topo)
        assert targets.s_star.max() > 0.9

    def test_unknown_category(self, topo):
        coco = self.toy()
        coco["annotations"][0]["category_id"] = 99
        with pytest.raises(CocoIngestError, match="unknown category"):
            ingest_coco(coco, topo)

    def test_keypoint_count_mismatch(self, topo):
        coco = self.toy()
        coco["annotations"][0]["keypoints"] = coco["annotations"][0]["keypoints"][:-3]
        with pytest.raises(CocoIngestError, match="keypoint values"):
            ingest_coco(coco, topo)

    def test_missing_person_category(self, topo):
        coco = self.toy()
        coco["categories"][0]["name"] = "giraffe"
        with pytest.raises(CocoIngestError, match="person"):
            ingest_coco(coco, topo)

    def test_bad_visibility_flag(self, topo):
        coco = self.toy()
        coco["annotations"][0]["keypoints"][2] = 3
        with pytest.raises(CocoIngestError, match="visibility"):
            ingest_coco(coco, topo)
