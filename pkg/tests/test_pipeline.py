"""Batch pipeline: end-to-end runs, determinism, fault isolation."""

import json

import numpy as np
import pytest

import sherdbatch.pipeline as pipeline_mod
from sherdbatch.errors import InsufficientCorrespondences, SizeMismatch
from sherdbatch.pipeline import (PipelineConfig, do_extract_boundary,
                                 do_extract_contour, do_gen_synth, do_match,
                                 do_register, do_evaluate, run_pipeline)


@pytest.fixture(scope="module")
def synth_batch(tmp_path_factory):
    out = tmp_path_factory.mktemp("batch")
    info = do_gen_synth(out, n=4, seed=60)
    return info


class TestGenSynth:
    def test_writes_expected_layout(self, synth_batch):
        info = synth_batch
        truth = json.loads(open(info["truth_json"]).read())
        assert truth["n"] == 4
        assert sorted(truth["pairing"]) == [0, 1, 2, 3]
        assert len(truth["fragments"]) == 4
        from pathlib import Path
        base = Path(info["out_dir"])
        for rel in truth["front_plys"] + truth["back_plys"] + truth["gt_model_plys"]:
            assert (base / rel).exists()


class TestStageHelpers:
    def test_extract_contour(self, synth_batch, tmp_path):
        from pathlib import Path
        ply = sorted(Path(synth_batch["front_dir"]).glob("*.ply"))[0]
        out = tmp_path / "contour.json"
        doc = do_extract_contour(ply, PipelineConfig(n_samples=64), out)
        assert doc["n_samples"] == 64
        assert len(doc["vertices"]) == 64
        assert len(doc["theta_bar"]) == 64
        assert abs(doc["theta_bar"][-1] - 2 * np.pi) < 1e-6
        assert out.exists()

    def test_match_directories(self, synth_batch):
        truth = json.loads(open(synth_batch["truth_json"]).read())
        report = do_match(synth_batch["front_dir"], synth_batch["back_dir"],
                          PipelineConfig())
        got = {p["front"]: p["back"] for p in report["pairs"]}
        assert [got[i] for i in range(4)] == truth["pairing"]

    def test_match_size_mismatch(self, synth_batch, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        with pytest.raises(SizeMismatch):
            do_match(synth_batch["front_dir"], empty, PipelineConfig())

    def test_extract_boundary_writes_outputs(self, synth_batch, tmp_path):
        from pathlib import Path
        ply = sorted(Path(synth_batch["front_dir"]).glob("*.ply"))[0]
        doc = do_extract_boundary(ply, PipelineConfig(),
                                  out_ply=tmp_path / "b.ply",
                                  out_json=tmp_path / "b.json")
        assert doc["count"] > 0
        assert (tmp_path / "b.ply").exists()
        loaded = json.loads((tmp_path / "b.json").read_text())
        assert loaded["indices"] == doc["indices"]

    def test_register_self_is_identity(self, synth_batch, tmp_path):
        from pathlib import Path
        ply = sorted(Path(synth_batch["front_dir"]).glob("*.ply"))[0]
        doc = do_register(ply, ply, PipelineConfig(),
                          out_prefix=tmp_path / "reg")
        assert doc["converged"]
        rot = np.asarray(doc["transform"]["rotation_row_major"]).reshape(3, 3)
        assert np.allclose(rot, np.eye(3), atol=1e-6)
        assert (tmp_path / "reg.merged.ply").exists()
        assert (tmp_path / "reg.transform.json").exists()
        trace = (tmp_path / "reg.trace.csv").read_text().splitlines()
        assert trace[0] == "iteration,objective_mm2"
        assert len(trace) == doc["iterations_run"] + 1

    def test_evaluate_identical(self, synth_batch, tmp_path):
        from pathlib import Path
        ply = sorted(Path(synth_batch["front_dir"]).glob("*.ply"))[0]
        doc = do_evaluate(ply, ply, PipelineConfig(), out_csv=tmp_path / "m.csv")
        assert doc["accuracy_mm"] == 0.0
        assert doc["completeness_pct"] == 100.0
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "id,accuracy_mm,completeness_pct,mae_mm,sd_mm"
        assert lines[-1].startswith("mean,")


class TestRunPipeline:
    def test_end_to_end_with_truth(self, synth_batch, tmp_path):
        manifest = run_pipeline(synth_batch["front_dir"], synth_batch["back_dir"],
                                tmp_path / "out", PipelineConfig(),
                                truth_json=synth_batch["truth_json"])
        assert manifest["n_pairs"] == 4
        assert manifest["n_failed"] == 0
        assert manifest["matching_matches_truth"] is True
        for pair in manifest["pairs"]:
            assert pair["error"] is None
            assert pair["converged"]
            assert pair["pairing_correct"]
            assert pair["pose_error"]["rotation_deg"] < 1.0
            assert pair["pose_error"]["translation_mm"] < 0.5
            assert pair["metrics"]["completeness_pct"] > 95.0
            assert pair["metrics"]["mae_mm"] < 0.2
            assert (tmp_path / "out" / pair["merged_ply"]).exists()
            assert (tmp_path / "out" / pair["trace_csv"]).exists()
        assert manifest["batch_metrics"]["mae_mm"] < 0.2
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_deterministic_manifests(self, synth_batch, tmp_path):
        a = run_pipeline(synth_batch["front_dir"], synth_batch["back_dir"],
                         tmp_path / "a", PipelineConfig(seed=5))
        b = run_pipeline(synth_batch["front_dir"], synth_batch["back_dir"],
                         tmp_path / "b", PipelineConfig(seed=5))
        bytes_a = (tmp_path / "a" / "manifest.json").read_bytes()
        bytes_b = (tmp_path / "b" / "manifest.json").read_bytes()
        assert bytes_a == bytes_b

    def test_empty_inputs_fail_fast(self, tmp_path):
        front = tmp_path / "front"
        back = tmp_path / "back"
        front.mkdir()
        back.mkdir()
        out = tmp_path / "out"
        with pytest.raises(SizeMismatch):
            run_pipeline(front, back, out, PipelineConfig())
        assert not out.exists()

    def test_adversarial_batch_completes_with_warnings(self, tmp_path):
        info = do_gen_synth(tmp_path / "adv", n=3, seed=77, adversarial=True)
        manifest = run_pipeline(info["front_dir"], info["back_dir"],
                                tmp_path / "out", PipelineConfig(),
                                truth_json=info["truth_json"])
        assert manifest["warnings"]
        flagged = [p for p in manifest["pairs"] if p["ambiguous"]]
        assert flagged
        assert manifest["n_pairs"] == 3

    def test_per_pair_fault_isolation(self, synth_batch, tmp_path, monkeypatch):
        real_bbicp = pipeline_mod.bbicp

        def flaky(front, back, fb, bb, init, config):
            if flaky.calls == 0:
                flaky.calls += 1
                raise InsufficientCorrespondences("injected failure")
            flaky.calls += 1
            return real_bbicp(front, back, fb, bb, init, config)

        flaky.calls = 0
        monkeypatch.setattr(pipeline_mod, "bbicp", flaky)
        manifest = run_pipeline(synth_batch["front_dir"], synth_batch["back_dir"],
                                tmp_path / "out", PipelineConfig())
        assert manifest["n_failed"] == 1
        assert len(manifest["failed"]) == 1
        errors = [p["error"] for p in manifest["pairs"] if p["error"]]
        assert errors[0]["type"] == "InsufficientCorrespondences"
        succeeded = [p for p in manifest["pairs"] if p["error"] is None]
        assert len(succeeded) == 3


def test_config_round_trip():
    config = PipelineConfig(n_samples=96, alpha_mm=2.5, jobs=2, seed=9)
    assert PipelineConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})


def test_parallel_jobs_match_serial(synth_batch, tmp_path):
    serial = run_pipeline(synth_batch["front_dir"], synth_batch["back_dir"],
                          tmp_path / "s", PipelineConfig(jobs=1))
    parallel = run_pipeline(synth_batch["front_dir"], synth_batch["back_dir"],
                            tmp_path / "p", PipelineConfig(jobs=4))
    a = json.dumps({k: v for k, v in serial.items() if k != "config"})
    b = json.dumps({k: v for k, v in parallel.items() if k != "config"})
    assert a == b


def test_camera_metadata_with_visible_points(tmp_path):
    """Camera JSON round trip including explicit per-view visibility lists."""
    import numpy as np
    from PIL import Image

    from sherdbatch.geometry import RigidTransform
    from sherdbatch.pipeline import load_camera_views, _attach_visibility

    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[8:24, 8:24] = 255
    Image.fromarray(mask).save(tmp_path / "m.png")
    pose = RigidTransform(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0, 100.0]))
    doc = {"views": [{
        "intrinsics": [50, 0, 16, 0, 50, 16, 0, 0, 1],
        "pose": pose.to_dict(),
        "mask_png": "m.png",
        "visible_points": [0, 2],
    }]}
    (tmp_path / "cams.json").write_text(json.dumps(doc))

    views, per_view = load_camera_views(tmp_path / "cams.json")
    assert len(views) == 1
    assert per_view == [[0, 2]]

    from sherdbatch.geometry import PointCloud
    cloud = _attach_visibility(PointCloud(np.zeros((3, 3)) + [0, 0, 1]),
                               views, per_view)
    assert cloud.visibility == ((0,), (), (0,))


def test_full_batch_of_eight(tmp_path):
    """Every pair of an 8-fragment batch matches, registers, and merges."""
    info = do_gen_synth(tmp_path / "b8", n=8, seed=8080)
    manifest = run_pipeline(info["front_dir"], info["back_dir"],
                            tmp_path / "out", PipelineConfig(),
                            truth_json=info["truth_json"])
    assert manifest["n_pairs"] == 8
    assert manifest["n_failed"] == 0
    assert manifest["matching_matches_truth"] is True
    merged = sorted((tmp_path / "out" / "merged").glob("*.ply"))
    assert len(merged) == 8
    for pair in manifest["pairs"]:
        assert pair["converged"]
        assert pair["pairing_correct"]
