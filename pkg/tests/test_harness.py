import json
from pathlib import Path

import numpy as np
import pytest

from egoplex.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from egoplex.ep_body import (
    BodyModelDef,
    PoseShapeParams,
    forward_kinematics,
    make_toy_model,
    save_model,
)
from egoplex.ep_camera import FisheyeCamera
from egoplex.ep_harness import (
    DatasetHeader,
    EvalReport,
    FitResultsFile,
    HarnessConfig,
    LossesDemoReport,
    SyntheticConfig,
    Table3Report,
    apply_overrides,
    dataset_context,
    gen_synthetic,
    load_dataset,
    regression_stand_in,
    resolve_mask,
)
from egoplex.ep_undistort import PatchSidecar
from egoplex.exceptions import EmptyMask, InvariantViolation, ParseError
from egoplex.internal.images import load_image, save_image
from egoplex.internal.schemas import read_json_file


def _without_timestamp(path: Path) -> dict:
    document = json.loads(path.read_text())
    document.pop("created_at")
    return document


@pytest.fixture
def small_dataset(tmp_path: Path) -> Path:
    path = tmp_path / "data.jsonl"
    assert main(["gen-synthetic", "--out", str(path), "--num-frames", "6", "--seed", "3"]) == EXIT_OK
    return path


class TestConfig:
    def test_overrides_skip_none(self) -> None:
        config = apply_overrides(
            HarnessConfig(), {"synthetic": {"seed": 5, "num_frames": None}, "": {"mask": "body"}}
        )
        assert config.synthetic.seed == 5
        assert config.synthetic.num_frames == 64
        assert config.mask == "body"

    def test_overrides_are_validated(self) -> None:
        with pytest.raises(ValueError):
            apply_overrides(HarnessConfig(), {"table3": {"num_frames": 8}})

    def test_translation_box_in_front_of_camera(self) -> None:
        with pytest.raises(ValueError):
            SyntheticConfig(translation_min=(-0.3, -0.3, -1.0))

    def test_resolve_mask(self, wholebody22: BodyModelDef) -> None:
        assert resolve_mask(None, wholebody22) is None
        assert resolve_mask("body", wholebody22) == tuple(range(16))
        assert resolve_mask("lhand, 3, 3", wholebody22) == (3, 16, 17)
        with pytest.raises(EmptyMask):
            resolve_mask(" , ", wholebody22)
        with pytest.raises(ValueError):
            resolve_mask("tail", wholebody22)
        with pytest.raises(ValueError):
            resolve_mask("21", wholebody22)

    def test_body16_has_no_jaw_joints(self, body16: BodyModelDef) -> None:
        with pytest.raises(EmptyMask):
            resolve_mask("jaw", body16)


class TestSyntheticData:
    def test_same_seed_is_byte_identical(self, tmp_path: Path) -> None:
        config = SyntheticConfig(seed=11, num_frames=5)
        gen_synthetic(config, tmp_path / "a.jsonl")
        gen_synthetic(config, tmp_path / "b.jsonl", jobs=3)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_frames_depend_only_on_seed_and_id(self, tmp_path: Path) -> None:
        gen_synthetic(SyntheticConfig(seed=11, num_frames=2), tmp_path / "short.jsonl")
        gen_synthetic(SyntheticConfig(seed=11, num_frames=4), tmp_path / "long.jsonl")
        short = load_dataset(tmp_path / "short.jsonl")
        long = load_dataset(tmp_path / "long.jsonl")
        assert short.frames == long.frames[:2]

    def test_frames_are_consistent(
        self, tmp_path: Path, toy_camera: FisheyeCamera, body16: BodyModelDef
    ) -> None:
        config = SyntheticConfig(seed=4, num_frames=8)
        header = gen_synthetic(config, tmp_path / "data.jsonl")
        dataset = load_dataset(tmp_path / "data.jsonl")
        assert isinstance(header, DatasetHeader)
        assert header.camera_digest == toy_camera.digest()
        assert header.model_digest == body16.digest()
        assert len(dataset.frames) == 8

        low, high = np.array(config.translation_min), np.array(config.translation_max)
        for frame in dataset.frames:
            joints = np.asarray(frame.gt_joints_3d)
            params = PoseShapeParams.from_record(frame.gt_params)
            np.testing.assert_array_equal(np.asarray(frame.gt_joints_2d), toy_camera.project(joints))
            np.testing.assert_array_equal(joints, forward_kinematics(body16, params))
            assert np.all(params.translation >= low) and np.all(params.translation <= high)
            assert np.all(np.abs(params.full_pose()) <= config.pose_scale)
            assert np.all(joints[:, 2] > 0.0)

    def test_outliers_are_recorded(self, tmp_path: Path, body16: BodyModelDef) -> None:
        gen_synthetic(
            SyntheticConfig(seed=2, num_frames=6, outlier_rate=0.25), tmp_path / "data.jsonl"
        )
        dataset = load_dataset(tmp_path / "data.jsonl")
        assert any(frame.outlier_joints for frame in dataset.frames)
        for frame in dataset.frames:
            clean = forward_kinematics(body16, PoseShapeParams.from_record(frame.gt_params))
            offsets = np.linalg.norm(np.asarray(frame.gt_joints_3d) - clean, axis=1)
            outliers = np.zeros(body16.joint_count, dtype=bool)
            outliers[frame.outlier_joints] = True
            assert np.all((offsets[outliers] >= 0.5 - 1e-9) & (offsets[outliers] <= 1.5 + 1e-9))
            assert np.all(offsets[~outliers] == 0.0)

    def test_broken_line_reports_position(self, small_dataset: Path) -> None:
        lines = small_dataset.read_text().splitlines()
        lines[3] = lines[3][:-10]
        small_dataset.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as info:
            load_dataset(small_dataset)
        assert info.value.line == 4

    def test_digest_mismatch(self, small_dataset: Path) -> None:
        header = load_dataset(small_dataset).header
        with pytest.raises(InvariantViolation):
            dataset_context(header.model_copy(update={"camera_digest": "0" * 64}))
        with pytest.raises(InvariantViolation):
            dataset_context(header.model_copy(update={"model_ref": "toy:wholebody22"}))


class TestFitAndEval:
    def test_recovers_noiseless_frames(self, small_dataset: Path, tmp_path: Path) -> None:
        results_path = tmp_path / "fit.json"
        assert main(["fit", str(small_dataset), "--out", str(results_path)]) == EXIT_OK
        results = read_json_file(results_path, FitResultsFile)
        assert results.failed == 0
        assert [entry.frame_id for entry in results.frames] == list(range(6))

        prefix = tmp_path / "eval"
        assert (
            main(["eval", str(results_path), str(small_dataset), "--out", str(prefix)]) == EXIT_OK
        )
        report = read_json_file(Path(f"{prefix}.json"), EvalReport)
        assert report.pa_mpjpe.count == 6
        assert report.pa_mpjpe.mean is not None and report.pa_mpjpe.mean < 10.0
        assert report.pa_mpvpe.mean is not None
        assert report.seed == 3
        values = [row.pa_mpjpe_mm for row in report.rows]
        assert report.pa_mpjpe.mean == pytest.approx(float(np.mean(values)), rel=1e-12)
        assert report.pa_mpjpe.median == pytest.approx(float(np.median(values)), rel=1e-12)
        assert len(Path(f"{prefix}.csv").read_text().splitlines()) == 7

    def test_parallel_fit_matches_serial(self, small_dataset: Path, tmp_path: Path) -> None:
        serial, parallel = tmp_path / "serial.json", tmp_path / "parallel.json"
        assert main(["fit", str(small_dataset), "--out", str(serial)]) == EXIT_OK
        assert main(["fit", str(small_dataset), "--out", str(parallel), "--jobs", "4"]) == EXIT_OK
        assert _without_timestamp(serial) == _without_timestamp(parallel)

    def test_body_mask_on_whole_body(self, tmp_path: Path) -> None:
        data = tmp_path / "data.jsonl"
        assert (
            main(
                [
                    "gen-synthetic",
                    "--out",
                    str(data),
                    "--num-frames",
                    "2",
                    "--variant",
                    "wholebody22",
                ]
            )
            == EXIT_OK
        )
        results = tmp_path / "fit.json"
        assert main(["fit", str(data), "--out", str(results)]) == EXIT_OK
        prefix = tmp_path / "eval"
        code = main(["eval", str(results), str(data), "--out", str(prefix), "--mask", "body"])
        assert code == EXIT_OK
        report = read_json_file(Path(f"{prefix}.json"), EvalReport)
        assert report.mask == list(range(16))
        assert report.pa_mpjpe.count == 2

    def test_results_from_other_dataset(self, small_dataset: Path, tmp_path: Path) -> None:
        results = tmp_path / "fit.json"
        assert main(["fit", str(small_dataset), "--out", str(results)]) == EXIT_OK
        other = tmp_path / "other.jsonl"
        assert main(["gen-synthetic", "--out", str(other), "--num-frames", "6"]) == EXIT_OK
        code = main(["eval", str(results), str(other), "--out", str(tmp_path / "eval")])
        assert code == EXIT_FAILURE


class TestParallelRuns:
    def test_gen_synthetic(self, tmp_path: Path) -> None:
        serial, parallel = tmp_path / "serial.jsonl", tmp_path / "parallel.jsonl"
        base = ["gen-synthetic", "--num-frames", "8", "--seed", "5", "--outlier-rate", "0.1"]
        assert main([*base, "--out", str(serial)]) == EXIT_OK
        assert main([*base, "--out", str(parallel), "--jobs", "4"]) == EXIT_OK
        assert serial.read_bytes() == parallel.read_bytes()

    def test_eval(self, small_dataset: Path, tmp_path: Path) -> None:
        results = tmp_path / "fit.json"
        assert main(["fit", str(small_dataset), "--out", str(results)]) == EXIT_OK
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        base = ["eval", str(results), str(small_dataset), "--mask", "0,1,2,3,4,5,6,7"]
        assert main([*base, "--out", str(serial)]) == EXIT_OK
        assert main([*base, "--out", str(parallel), "--jobs", "4"]) == EXIT_OK
        assert _without_timestamp(Path(f"{serial}.json")) == _without_timestamp(
            Path(f"{parallel}.json")
        )
        assert Path(f"{serial}.csv").read_bytes() == Path(f"{parallel}.csv").read_bytes()

    def test_table3(self, tmp_path: Path) -> None:
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"fit": {"max_iters": 40}, "table3": {"num_frames": 32}}))
        serial, parallel = tmp_path / "serial.json", tmp_path / "parallel.json"
        base = ["table3", "--config", str(config), "--seed", "2"]
        assert main([*base, "--out", str(serial)]) == EXIT_OK
        assert main([*base, "--out", str(parallel), "--jobs", "4"]) == EXIT_OK
        assert _without_timestamp(serial) == _without_timestamp(parallel)


class TestTable3:
    def test_stand_in_perturbs_every_body_joint(
        self, wholebody22: BodyModelDef, make_params
    ) -> None:
        truth = make_params(wholebody22)
        regressed = regression_stand_in(wholebody22, truth, 0.4, seed=0, frame_id=5)
        steps = np.linalg.norm((regressed.theta_body - truth.theta_body).reshape(-1, 3), axis=1)
        np.testing.assert_allclose(steps, 0.4, rtol=1e-12)
        np.testing.assert_array_equal(regressed.theta_lhand, truth.theta_lhand)
        np.testing.assert_array_equal(regressed.beta, truth.beta)
        again = regression_stand_in(wholebody22, truth, 0.4, seed=0, frame_id=5)
        np.testing.assert_array_equal(again.theta_body, regressed.theta_body)

    @pytest.mark.slow
    def test_optimization_beats_regression(self, tmp_path: Path) -> None:
        out = tmp_path / "table3.json"
        code = main(["table3", "--out", str(out), "--num-frames", "64", "--jobs", "4"])
        assert code == EXIT_OK
        report = read_json_file(out, Table3Report)
        assert report.num_frames == 64
        assert len(report.rows) == 64
        assert report.regression.mean is not None and report.optimization.mean is not None
        assert report.regression.mean >= 5.0 * report.optimization.mean
        assert report.relative_reduction is not None and report.relative_reduction > 0.8

    def test_too_few_frames_is_usage_error(self, tmp_path: Path) -> None:
        code = main(["table3", "--out", str(tmp_path / "t.json"), "--num-frames", "8"])
        assert code == EXIT_USAGE


class TestUndistortCommand:
    @pytest.fixture
    def gray_image(self, tmp_path: Path) -> Path:
        path = tmp_path / "frame.pgm"
        save_image(path, np.full((256, 256), 77, dtype=np.uint8))
        return path

    def test_full_grid(self, gray_image: Path, tmp_path: Path) -> None:
        prefix = tmp_path / "out"
        assert main(["undistort", str(gray_image), "--out", str(prefix)]) == EXIT_OK
        mosaic = load_image(Path(f"{prefix}_mosaic.pgm"))
        assert mosaic.shape == (256, 256)
        assert np.all(mosaic == 77)
        sidecar = read_json_file(Path(f"{prefix}_patches.json"), PatchSidecar)
        assert len(sidecar.cells) == 256
        assert sidecar.grid_shape == (16, 16)

    def test_crop(self, gray_image: Path, tmp_path: Path) -> None:
        prefix = tmp_path / "out"
        code = main(["undistort", str(gray_image), "--out", str(prefix), "--crop", "2"])
        assert code == EXIT_OK
        sidecar = read_json_file(Path(f"{prefix}_patches.json"), PatchSidecar)
        assert len(sidecar.cells) == 192
        assert sidecar.first_col == 2
        assert min(cell.col for cell in sidecar.cells) == 2
        assert load_image(Path(f"{prefix}_mosaic.pgm")).shape == (256, 192)

    def test_repeat_runs_are_byte_identical(self, tmp_path: Path) -> None:
        image = tmp_path / "noise.ppm"
        save_image(image, np.random.default_rng(1).integers(0, 256, size=(256, 256, 3), dtype=np.uint8))
        for name in ("a", "b"):
            assert main(["undistort", str(image), "--out", str(tmp_path / name)]) == EXIT_OK
        for suffix in ("_mosaic.ppm", "_patches.json"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_invalid_crop_leaves_no_files(self, gray_image: Path, tmp_path: Path) -> None:
        prefix = tmp_path / "out"
        code = main(["undistort", str(gray_image), "--out", str(prefix), "--crop", "8"])
        assert code == EXIT_FAILURE
        assert not Path(f"{prefix}_mosaic.pgm").exists()
        assert not Path(f"{prefix}_patches.json").exists()

    def test_wrong_image_size(self, tmp_path: Path) -> None:
        image = tmp_path / "small.pgm"
        save_image(image, np.zeros((128, 128), dtype=np.uint8))
        assert main(["undistort", str(image), "--out", str(tmp_path / "out")]) == EXIT_FAILURE


class TestLossesDemo:
    def test_ground_truth_against_itself(self, small_dataset: Path, tmp_path: Path) -> None:
        out = tmp_path / "demo.json"
        code = main(
            ["losses-demo", str(small_dataset), "--out", str(out), "--frame", "2", "--tau", "0"]
        )
        assert code == EXIT_OK
        report = read_json_file(out, LossesDemoReport)
        assert report.against_self.total == pytest.approx(0.0, abs=1e-12)
        assert report.prior_weight == 0.1
        assert report.against_self.terms["prior"].weight == 0.1

    def test_perturbed_copy_has_positive_terms(self, small_dataset: Path, tmp_path: Path) -> None:
        out = tmp_path / "demo.json"
        code = main(
            [
                "losses-demo",
                str(small_dataset),
                "--out",
                str(out),
                "--tau",
                "0.3",
                "--progress",
                "1",
            ]
        )
        assert code == EXIT_OK
        report = read_json_file(out, LossesDemoReport)
        assert set(report.perturbed.terms) == {"pose", "shape", "joints_3d", "joints_2d", "prior"}
        assert all(term.value > 0.0 for term in report.perturbed.terms.values())
        assert report.prior_weight == 0.01
        assert report.perturbed.total > report.against_self.total

    def test_sampled_tau_is_deterministic(self, small_dataset: Path, tmp_path: Path) -> None:
        for name in ("a.json", "b.json"):
            assert main(["losses-demo", str(small_dataset), "--out", str(tmp_path / name)]) == EXIT_OK
        first, second = _without_timestamp(tmp_path / "a.json"), _without_timestamp(tmp_path / "b.json")
        assert first == second
        assert 0.05 <= first["tau"] <= 0.5

    def test_missing_frame(self, small_dataset: Path, tmp_path: Path) -> None:
        code = main(
            ["losses-demo", str(small_dataset), "--out", str(tmp_path / "d.json"), "--frame", "99"]
        )
        assert code == EXIT_USAGE


class TestExitCodes:
    def test_missing_out(self) -> None:
        assert main(["gen-synthetic"]) == EXIT_USAGE

    def test_unknown_command(self) -> None:
        assert main(["train"]) == EXIT_USAGE

    def test_bad_jobs(self, tmp_path: Path) -> None:
        code = main(["gen-synthetic", "--out", str(tmp_path / "d.jsonl"), "--jobs", "0"])
        assert code == EXIT_USAGE

    def test_invalid_config_file(self, tmp_path: Path) -> None:
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"fit": {"max_iters": -1}}))
        code = main(["gen-synthetic", "--out", str(tmp_path / "d.jsonl"), "--config", str(config)])
        assert code == EXIT_USAGE

    def test_config_file_is_applied(self, tmp_path: Path) -> None:
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"synthetic": {"num_frames": 3, "seed": 9}}))
        out = tmp_path / "d.jsonl"
        assert main(["gen-synthetic", "--out", str(out), "--config", str(config)]) == EXIT_OK
        dataset = load_dataset(out)
        assert dataset.header.num_frames == 3
        assert dataset.header.synthetic.seed == 9

    def test_missing_dataset(self, tmp_path: Path) -> None:
        code = main(["fit", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "fit.json")])
        assert code == EXIT_FAILURE

    def test_custom_model_file(self, tmp_path: Path) -> None:
        model_path = tmp_path / "model.json"
        save_model(make_toy_model("body16"), model_path)
        out = tmp_path / "d.jsonl"
        code = main(
            ["gen-synthetic", "--out", str(out), "--num-frames", "2", "--model", str(model_path)]
        )
        assert code == EXIT_OK
        assert load_dataset(out).header.model_ref == str(model_path)
