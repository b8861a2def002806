"""End-to-end command-line tests: every subcommand, every exit-code class."""
import json
from pathlib import Path

import numpy as np
import pytest

from wbpose import __version__
from wbpose.cli import EXIT_IO, EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, main
from wbpose.formats import read_wbpt, to_targets

DATA = Path(__file__).parent / "data"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> encode -> decode artifacts shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    scenes = root / "scenes.json"
    tensors = root / "tensors"
    poses = root / "poses.json"
    base = ["--seed", "7"]
    assert main(base + ["--quiet", "synth", "--n-scenes", "2", "--n-people", "2",
                        "--image-size", "320x320", "--coverage", "body,foot",
                        "--out", str(scenes)]) == EXIT_OK
    assert main(base + ["--quiet", "encode", "--scenes", str(scenes),
                        "--out-dir", str(tensors)]) == EXIT_OK
    assert main(base + ["--quiet", "decode"] + sorted(str(p) for p in tensors.glob("*.wbpt"))
                + ["--out", str(poses)]) == EXIT_OK
    return root


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        assert sorted(p.name for p in (pipeline / "tensors").glob("*.wbpt")) == [
            "scene_000000.wbpt", "scene_000001.wbpt",
        ]
        doc = json.loads((pipeline / "poses.json").read_text())
        assert doc["tool_version"] == __version__
        assert doc["seed"] == 7
        assert set(doc["poses"]) == {"0", "1"}
        assert sum(len(v) for v in doc["poses"].values()) == 4

    def test_tensor_files_decode_back(self, pipeline):
        f = read_wbpt(pipeline / "tensors" / "scene_000000.wbpt")
        targets = to_targets(f)
        assert targets.s_star.shape[1:] == (40, 40)
        assert float(targets.s_star.max()) > 0.9

    def test_scene_ids_come_from_filenames(self, pipeline):
        doc = json.loads((pipeline / "poses.json").read_text())
        for poses in doc["poses"].values():
            for p in poses:
                assert p["person_score"] > 0

    def test_eval_detections_against_themselves(self, pipeline, capsys):
        poses = str(pipeline / "poses.json")
        code, doc = run(capsys, "eval", poses, poses, "--group", "body")
        assert code == EXIT_OK
        assert doc["result"]["ap"] == 1.0 and doc["result"]["ar"] == 1.0
        assert doc["manifest_hash"]

    def test_eval_gate_fails_on_garbage(self, pipeline, capsys, tmp_path):
        doc = json.loads((pipeline / "poses.json").read_text())
        for poses in doc["poses"].values():
            for p in poses:
                p["parts"] = {k: [x + 500, y + 500, s] for k, (x, y, s) in p["parts"].items()}
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        code, _ = run(capsys, "--quiet", "eval", str(bad), str(pipeline / "poses.json"),
                      "--min-ap", "0.5")
        assert code == EXIT_TOLERANCE

    def test_pr_csv_written(self, pipeline, capsys, tmp_path):
        poses = str(pipeline / "poses.json")
        pr = tmp_path / "pr.csv"
        code, _ = run(capsys, "--quiet", "eval", poses, poses, "--pr-csv", str(pr))
        assert code == EXIT_OK
        lines = pr.read_text().splitlines()
        assert lines[0] == "threshold,precision,recall"
        assert len(lines) == 11

    def test_loss_of_identical_tensors_is_zero(self, pipeline, capsys):
        t = str(pipeline / "tensors" / "scene_000000.wbpt")
        code, doc = run(capsys, "loss", "--pred", t, "--gt", t)
        assert code == EXIT_OK
        assert doc["loss"]["total"] == 0.0

    def test_loss_cross_scene_positive(self, pipeline, capsys):
        a = str(pipeline / "tensors" / "scene_000000.wbpt")
        b = str(pipeline / "tensors" / "scene_000001.wbpt")
        code, doc = run(capsys, "loss", "--pred", a, "--gt", b)
        assert code == EXIT_OK
        assert doc["loss"]["total"] > 0.0


class TestProvenance:
    def test_summary_carries_version_seed_hash(self, capsys, tmp_path):
        code, doc = run(capsys, "--seed", "11", "synth", "--n-scenes", "1",
                        "--n-people", "0", "--out", str(tmp_path / "s.json"))
        assert code == EXIT_OK
        assert doc["tool_version"] == __version__
        assert doc["seed"] == 11
        assert len(doc["manifest_hash"]) == 64

    def test_quiet_suppresses_stdout(self, capsys, tmp_path):
        code = main(["--quiet", "synth", "--n-scenes", "1", "--n-people", "0",
                     "--out", str(tmp_path / "s.json")])
        assert code == EXIT_OK
        assert capsys.readouterr().out == ""

    def test_same_seed_same_bytes(self, tmp_path, capsys):
        for name in ("a.json", "b.json"):
            main(["--quiet", "--seed", "5", "synth", "--n-scenes", "2",
                  "--n-people", "2", "--image-size", "320x320", "--out", str(tmp_path / name)])
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestCocoEncode:
    def test_ingest_writes_scenes_doc(self, capsys, tmp_path):
        out = tmp_path / "scenes.json"
        code, doc = run(capsys, "encode", "--coco", str(DATA / "toy_coco.json"),
                        "--scenes-out", str(out))
        assert code == EXIT_OK
        assert doc["n_scenes"] == 3 and doc["files_written"] == []
        written = json.loads(out.read_text())
        expected = json.loads((DATA / "toy_coco_expected_scenes.json").read_text())
        assert written["scenes"] == expected["scenes"]

    def test_ingest_and_encode_tensors(self, capsys, tmp_path):
        code, doc = run(capsys, "encode", "--coco", str(DATA / "toy_coco.json"),
                        "--out-dir", str(tmp_path))
        assert code == EXIT_OK
        assert doc["files_written"] == [
            "scene_000010.wbpt", "scene_000011.wbpt", "scene_000012.wbpt",
        ]
        empty = to_targets(read_wbpt(tmp_path / "scene_000012.wbpt"))
        assert float(np.abs(empty.s_star[:-1]).max()) == 0.0


class TestPlan:
    def test_write_then_check_is_identical(self, capsys, tmp_path):
        plan = tmp_path / "plan.jsonl"
        code, doc = run(capsys, "--seed", "3", "sample-plan", "--batches", "4",
                        "--batch-size", "3", "--out", str(plan))
        assert code == EXIT_OK and doc["registry_hash"]
        code, doc = run(capsys, "sample-plan", "--check", str(plan))
        assert code == EXIT_OK and doc["identical"] is True

    def test_check_flags_drift(self, capsys, tmp_path):
        plan = tmp_path / "plan.jsonl"
        main(["--quiet", "--seed", "3", "sample-plan", "--batches", "2",
              "--batch-size", "2", "--out", str(plan)])
        tampered = plan.read_text().replace('"seed": 3', '"seed": 4', 1)
        plan.write_text(tampered)
        code, doc = run(capsys, "sample-plan", "--check", str(plan))
        assert code == EXIT_TOLERANCE and doc["identical"] is False


class TestArch:
    def test_cost_mode(self, capsys):
        code, doc = run(capsys, "arch", "--spec", "4s, 5b, 96w")
        assert code == EXIT_OK
        assert doc["params"] > 0 and doc["macs"] > 0
        assert doc["receptive_field"] > 84  # deeper than the bare backbone

    def test_ratio_mode(self, capsys, tmp_path):
        csv_path = tmp_path / "bench.csv"
        csv_path.write_text(
            "n_people,map_w,map_h,threads,median_ns,p90_ns,candidates,connections\n"
            "1,60,60,1,1000000,1100000,135,134\n"
            "20,60,60,1,1500000,1600000,2700,2900\n"
        )
        out = tmp_path / "ratios.csv"
        code, doc = run(capsys, "arch", "--ratio", "--fit", str(csv_path),
                        "--n", "1..10", "--out", str(out))
        assert code == EXIT_OK
        rows = out.read_text().splitlines()
        assert rows[0] == "n_people,modeled_ratio"
        ratios = [float(r.split(",")[1]) for r in rows[1:]]
        assert len(ratios) == 10
        diffs = np.diff(ratios)
        assert np.all(diffs > 0)
        np.testing.assert_allclose(diffs, diffs[0])  # affine in n
        assert doc["ratio_at_10"] == pytest.approx(7.0)

    def test_ratio_needs_fit(self, capsys):
        assert main(["--quiet", "arch", "--ratio"]) == EXIT_USAGE

    def test_malformed_spec(self, capsys):
        assert main(["--quiet", "arch", "--spec", "not a spec"]) == EXIT_USAGE


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert main(["definitely-not-a-command"]) == EXIT_USAGE

    def test_missing_file_is_io_error(self, capsys):
        assert main(["--quiet", "decode", "nonexistent.wbpt"]) == EXIT_IO

    def test_bad_json_is_io_error(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["--quiet", "encode", "--scenes", str(bad)]) == EXIT_IO

    def test_manifest_mismatch_is_format_error(self, capsys, tmp_path, tiny_topo):
        from wbpose.encoder import AnnotatedScene, Person, Visibility, encode
        from wbpose.formats import from_targets, write_wbpt
        from wbpose.skeleton import PartGroup

        scene = AnnotatedScene(
            image_size=(64, 64),
            people=[Person(parts={0: (30.0, 20.0, Visibility.LABELED)})],
            coverage=frozenset({PartGroup.BODY, PartGroup.FOOT}),
        )
        f = from_targets(encode(scene, tiny_topo), tiny_topo.manifest_hash)
        path = tmp_path / "alien.wbpt"
        write_wbpt(path, f)
        assert main(["--quiet", "decode", str(path)]) == EXIT_IO

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == EXIT_OK


class TestRoundtripCommand:
    def test_small_gate_passes(self, capsys):
        code, doc = run(capsys, "--seed", "2", "roundtrip", "--n-scenes", "2",
                        "--n-people", "1..2", "--image-size", "320x320")
        assert code == EXIT_OK
        assert doc["failures"] == []
        assert doc["max_error_cells"] <= 0.5
        assert len(doc["reports"]) == 2


class TestBenchCommand:
    def test_writes_csv_and_summary(self, capsys, tmp_path):
        out = tmp_path / "bench.csv"
        code, doc = run(capsys, "--seed", "1", "bench", "--n-people", "1,2",
                        "--image-size", "240x240", "--repetitions", "10",
                        "--csv", str(out))
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "n_people,map_w,map_h,threads,median_ns,p90_ns,candidates,connections"
        assert len(lines) == 3
        assert set(doc["median_ns_by_n_people"]) == {"1", "2"}
