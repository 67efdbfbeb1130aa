import io
import json

import numpy as np
import pytest
from support import make_tiny_model

from splitinfer import ActivationCodec, CodecParams, Dataset
from splitinfer.errors import (
    BadMagic,
    ChecksumMismatch,
    EmptyCalibration,
    EmptyReport,
    InvalidCut,
    ShapeMismatch,
    TruncatedFile,
)
from splitinfer.harness import (
    calibrate,
    calibration_mask,
    emit_report,
    evaluate_split,
    load_grid,
    load_report_json,
    split_pipeline_logits,
    sweep,
)
from splitinfer.planner import read_points_csv
from splitinfer.profiler import cumulative_flops, raw_bytes_at_cut
from splitinfer.runtime import forward_prefix, forward_suffix, predict

# Hash-based 80/20 assignment for the first 24 indices, frozen. True = calibration.
MASK_24 = [0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0]


@pytest.fixture()
def tiny_dataset(tiny_images, tiny_labels):
    return Dataset(np.stack(list(tiny_images)), tiny_labels)


class TestCalibrationMask:
    def test_frozen_prefix(self):
        assert calibration_mask(24).astype(int).tolist() == MASK_24

    def test_prefix_stable(self):
        # membership of image i never depends on the dataset size
        assert calibration_mask(10).tolist() == calibration_mask(24)[:10].tolist()

    def test_roughly_eighty_percent(self):
        mask = calibration_mask(1000)
        assert 0.72 <= mask.mean() <= 0.88

    def test_split_partitions_dataset(self, tiny_dataset):
        cal, test = tiny_dataset.split()
        assert len(cal) + len(test) == len(tiny_dataset)
        assert len(cal) == 18 and len(test) == 6


class TestDataset:
    def test_construction_normalizes_dtypes(self):
        ds = Dataset(np.zeros((3, 1, 2, 2)), [0, 1, 2])
        assert ds.images.dtype == np.float32
        assert ds.labels.dtype == np.int64

    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeMismatch):
            Dataset(np.zeros((3, 2, 2)), [0, 1, 2])

    def test_rejects_label_count_mismatch(self):
        with pytest.raises(ShapeMismatch):
            Dataset(np.zeros((3, 1, 2, 2)), [0, 1])

    def test_save_load_round_trip(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.data"
        tiny_dataset.save(path)
        loaded = Dataset.load(path)
        assert np.array_equal(loaded.images, tiny_dataset.images)
        assert np.array_equal(loaded.labels, tiny_dataset.labels)
        assert loaded.checksum is not None

    def test_saves_byte_identical(self, tiny_dataset, tmp_path):
        p1, p2 = tmp_path / "a", tmp_path / "b"
        tiny_dataset.save(p1)
        tiny_dataset.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_detects_corruption(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.data"
        tiny_dataset.save(path)
        blob = bytearray(path.read_bytes())
        blob[40] ^= 1
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumMismatch):
            Dataset.load(path)

    def test_load_rejects_bad_magic(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.data"
        tiny_dataset.save(path)
        blob = bytearray(path.read_bytes())
        # rewrite magic and refresh the trailing checksum so only magic is wrong
        from splitinfer import binio

        body = b"WRONGMAG" + bytes(blob[8:-8])
        import struct

        path.write_bytes(body + struct.pack("<Q", binio.fnv1a64(body)))
        with pytest.raises(BadMagic):
            Dataset.load(path)

    def test_load_rejects_truncation(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.data"
        tiny_dataset.save(path)
        path.write_bytes(path.read_bytes()[:30])
        with pytest.raises((TruncatedFile, ChecksumMismatch)):
            Dataset.load(path)


class TestCalibrate:
    def test_fits_at_cut_shape(self, tiny_model, tiny_images):
        codec = calibrate(tiny_model, tiny_images, 4, CodecParams(d=4, m=2, b=4))
        assert tuple(codec.tensor_shape_) == tiny_model.cut_shape(4)
        assert codec.retained_components == 2

    def test_endpoints_have_no_codec(self, tiny_model, tiny_images):
        with pytest.raises(InvalidCut):
            calibrate(tiny_model, tiny_images, 0, CodecParams(d=1, m=1, b=4))
        with pytest.raises(InvalidCut):
            calibrate(
                tiny_model, tiny_images, tiny_model.layer_count, CodecParams(d=1, m=1, b=4)
            )

    def test_residual_interior_cut_rejected(self, tiny_model, tiny_images):
        assert not tiny_model.is_valid_cut(6)
        with pytest.raises(InvalidCut):
            calibrate(tiny_model, tiny_images, 6, CodecParams(d=4, m=2, b=4))

    def test_too_few_images(self, tiny_model, tiny_images):
        with pytest.raises(EmptyCalibration):
            calibrate(tiny_model, tiny_images[:1], 4, CodecParams(d=4, m=2, b=4))


class TestEvaluateSplit:
    def test_raw_path_matches_full_model_everywhere(
        self, tiny_model, tiny_images, tiny_labels
    ):
        # labels are the model's own argmax, so lossless transmission = 1.0
        for k in tiny_model.valid_cut_points():
            point = evaluate_split(tiny_model, tiny_images, tiny_labels, k)
            assert point.top1_accuracy == 1.0, f"cut {k}"
            assert point.k == k
            assert point.codec_config is None

    def test_raw_bytes_reported(self, tiny_model, tiny_images, tiny_labels):
        point = evaluate_split(tiny_model, tiny_images, tiny_labels, 4)
        assert point.mean_payload_bytes == raw_bytes_at_cut(tiny_model, 4)

    def test_local_flops_from_profile(self, tiny_model, tiny_images, tiny_labels):
        totals = cumulative_flops(tiny_model)
        for k in (0, 4, tiny_model.layer_count):
            point = evaluate_split(tiny_model, tiny_images, tiny_labels, k)
            assert point.local_flops == totals[k]

    def test_final_cut_ships_logits_bytes(self, tiny_model, tiny_images, tiny_labels):
        k = tiny_model.layer_count
        point = evaluate_split(tiny_model, tiny_images, tiny_labels, k)
        assert point.mean_payload_bytes == tiny_model.class_count * 4
        free = evaluate_split(
            tiny_model, tiny_images, tiny_labels, k, count_logits_bytes=False
        )
        assert free.mean_payload_bytes == 0.0

    def test_codec_point_reports_mean_bitstream_size(
        self, tiny_model, tiny_images, tiny_labels
    ):
        codec = calibrate(tiny_model, tiny_images, 4, CodecParams(d=4, m=2, b=4))
        point = evaluate_split(tiny_model, tiny_images, tiny_labels, 4, codec)
        expected = np.mean(
            [
                codec.encode(forward_prefix(tiny_model, img, 4), split_index=4).byte_size
                for img in tiny_images
            ]
        )
        assert point.mean_payload_bytes == pytest.approx(expected)
        assert point.codec_config == CodecParams(d=4, m=2, b=4)

    def test_codec_shape_mismatch_rejected(self, tiny_model, tiny_images, tiny_labels):
        codec = calibrate(tiny_model, tiny_images, 4, CodecParams(d=4, m=2, b=4))
        with pytest.raises(ShapeMismatch):
            evaluate_split(tiny_model, tiny_images, tiny_labels, 2, codec)

    def test_precomputed_activations_identical(
        self, tiny_model, tiny_images, tiny_labels
    ):
        acts = np.stack([forward_prefix(tiny_model, img, 4) for img in tiny_images])
        a = evaluate_split(tiny_model, tiny_images, tiny_labels, 4)
        b = evaluate_split(
            tiny_model, tiny_images, tiny_labels, 4, prefix_activations=acts
        )
        assert a == b

    def test_empty_images_rejected(self, tiny_model):
        with pytest.raises(EmptyCalibration):
            evaluate_split(tiny_model, np.zeros((0, 1, 8, 8), np.float32), [], 4)


GRID = [CodecParams(d=4, m=1, b=4), CodecParams(d=4, m=2, b=4)]


class TestSweep:
    def test_point_count_and_order(self, tiny_model, tiny_dataset):
        report = sweep(tiny_model, tiny_dataset, [4, 5], GRID)
        # per cut: one raw point + one per grid cell
        assert len(report.points) == 2 * (1 + len(GRID))
        assert [p.k for p in report.points] == [4, 4, 4, 5, 5, 5]
        assert report.points[0].codec_config is None
        assert report.points[1].codec_config == GRID[0]
        assert report.points[2].codec_config == GRID[1]

    def test_endpoint_cut_gets_raw_point_only(self, tiny_model, tiny_dataset):
        report = sweep(tiny_model, tiny_dataset, [0, 4], GRID)
        ks = [(p.k, p.codec_config is None) for p in report.points]
        assert ks == [(0, True), (4, True), (4, False), (4, False)]

    def test_deterministic_modulo_timestamp(self, tiny_model, tiny_dataset):
        r1 = sweep(tiny_model, tiny_dataset, [4], GRID)
        r2 = sweep(tiny_model, tiny_dataset, [4], GRID)
        assert r1.points == r2.points
        p1 = dict(r1.provenance)
        p2 = dict(r2.provenance)
        p1.pop("timestamp")
        p2.pop("timestamp")
        assert p1 == p2

    def test_matches_unbatched_evaluation(self, tiny_model, tiny_dataset):
        report = sweep(tiny_model, tiny_dataset, [4], GRID)
        cal, test = tiny_dataset.split()
        raw = evaluate_split(tiny_model, test.images, test.labels, 4)
        assert report.points[0] == raw
        codec = calibrate(tiny_model, cal.images, 4, GRID[0])
        cell = evaluate_split(tiny_model, test.images, test.labels, 4, codec)
        assert report.points[1] == cell

    def test_invalid_cut_rejected(self, tiny_model, tiny_dataset):
        with pytest.raises(InvalidCut):
            sweep(tiny_model, tiny_dataset, [6], GRID)

    def test_empty_inputs_rejected(self, tiny_model, tiny_dataset):
        with pytest.raises(EmptyReport):
            sweep(tiny_model, tiny_dataset, [], GRID)
        with pytest.raises(EmptyReport):
            sweep(tiny_model, tiny_dataset, [4], [])

    def test_dataset_too_small(self, tiny_model, tiny_dataset):
        small = Dataset(tiny_dataset.images[:2], tiny_dataset.labels[:2])
        with pytest.raises(EmptyCalibration):
            sweep(tiny_model, small, [4], GRID)

    def test_provenance_fields(self, tiny_model, tiny_dataset):
        report = sweep(tiny_model, tiny_dataset, [4], GRID)
        prov = report.provenance
        assert prov["k_list"] == [4]
        assert prov["calibration_images"] == 18
        assert prov["test_images"] == 6
        assert len(prov["grid"]) == 2
        assert "timestamp" in prov


class TestReportEmission:
    @pytest.fixture()
    def report(self, tiny_model, tiny_dataset):
        return sweep(
            tiny_model,
            tiny_dataset,
            [4, 5],
            GRID,
            baseline={"bytes": 256.0, "accuracy": 1.0},
        )

    def test_csv_has_baseline_comment_and_all_rows(self, report):
        buf = io.StringIO()
        emit_report(report, "csv", buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "# baseline_bytes=256.0 baseline_accuracy=1.0"
        assert lines[1].startswith("k,d,m,b,clip,")
        assert len(lines) == 2 + len(report.points)

    def test_csv_round_trips_points(self, report):
        buf = io.StringIO()
        emit_report(report, "csv", buf)
        back = read_points_csv(io.StringIO(buf.getvalue()))
        assert back == report.points

    def test_json_structure(self, report):
        buf = io.StringIO()
        emit_report(report, "json", buf)
        data = json.loads(buf.getvalue())
        assert set(data) == {"provenance", "baseline", "points"}
        assert data["baseline"] == {"bytes": 256.0, "accuracy": 1.0}
        assert len(data["points"]) == len(report.points)
        frontier_flags = [rec["on_frontier"] for rec in data["points"]]
        assert any(frontier_flags)

    def test_json_round_trips(self, report):
        buf = io.StringIO()
        emit_report(report, "json", buf)
        back = load_report_json(io.StringIO(buf.getvalue()))
        assert back.points == report.points
        assert back.baseline == report.baseline

    def test_empty_report_rejected(self):
        from splitinfer.harness import SweepReport

        with pytest.raises(EmptyReport):
            emit_report(SweepReport(points=[]), "csv", io.StringIO())

    def test_unknown_format_rejected(self, report):
        with pytest.raises(ValueError):
            emit_report(report, "yaml", io.StringIO())


class TestGridFile:
    def test_load_grid(self, tmp_path):
        path = tmp_path / "grid.json"
        path.write_text(
            json.dumps(
                {
                    "k_list": [4, 5],
                    "configs": [
                        {"d": 8, "m": 4, "b": 6},
                        {"d": 4, "m": 2, "b": 4, "clip": 3.0},
                    ],
                    "baseline": {"bytes": 256.0, "accuracy": 0.97},
                }
            )
        )
        k_list, configs, baseline = load_grid(path)
        assert k_list == [4, 5]
        assert configs[0] == CodecParams(d=8, m=4, b=6, clip=4.0)
        assert configs[1] == CodecParams(d=4, m=2, b=4, clip=3.0)
        assert baseline == {"bytes": 256.0, "accuracy": 0.97}

    def test_grid_without_optional_fields(self, tmp_path):
        path = tmp_path / "grid.json"
        path.write_text(json.dumps({"configs": [{"d": 2, "m": 1, "b": 4}]}))
        k_list, configs, baseline = load_grid(path)
        assert k_list is None and baseline is None
        assert configs == [CodecParams(d=2, m=1, b=4)]


class TestPipeline:
    def test_split_pipeline_matches_manual_composition(
        self, tiny_model, tiny_images
    ):
        codec = calibrate(tiny_model, tiny_images, 4, CodecParams(d=4, m=4, b=8))
        img = tiny_images[0]
        logits, bs = split_pipeline_logits(tiny_model, codec, 4, img)
        x_k = forward_prefix(tiny_model, img, 4)
        expected_bs = codec.encode(x_k, split_index=4)
        assert bs == expected_bs
        assert np.array_equal(
            logits, forward_suffix(tiny_model, codec.decode(expected_bs), 4)
        )

    def test_high_fidelity_codec_preserves_prediction(
        self, tiny_model, tiny_images, tiny_labels
    ):
        codec = calibrate(tiny_model, tiny_images, 4, CodecParams(d=8, m=8, b=16))
        for img, label in zip(tiny_images[:8], tiny_labels[:8]):
            logits, _ = split_pipeline_logits(tiny_model, codec, 4, img)
            assert int(np.argmax(logits)) == int(label)
