"""Integration tests against the committed trained-model fixtures.

The binaries under fixtures/ were produced by an independent generator
package; these tests confirm the primary implementation reads them,
reproduces their recorded numbers, and agrees with the independently
encoded codec artifacts byte-for-byte.
"""

import hashlib

import numpy as np
import pytest

from splitinfer import (
    ActivationCodec,
    CodecParams,
    forward_prefix,
    load_model,
    predict,
    profile_model,
    raw_bytes_at_cut,
)
from splitinfer.harness import calibrate, evaluate_split
from splitinfer.planner import Constraints, Objective, select_split

from support import FIXTURES_DIR


def fixture_path(name: str):
    return FIXTURES_DIR / name


class TestCommittedFiles:
    def test_hashes_match_manifest(self, toy_manifest):
        for name, digest in [
            (toy_manifest["model_file"], toy_manifest["model_sha256"]),
            (toy_manifest["dataset_file"], toy_manifest["dataset_sha256"]),
            (toy_manifest["sweep_grid_file"], toy_manifest["sweep_grid_sha256"]),
        ]:
            data = fixture_path(name).read_bytes()
            assert hashlib.sha256(data).hexdigest() == digest

    def test_model_loads_with_recorded_structure(self, toy_model, toy_manifest):
        assert toy_model.metadata.name == toy_manifest["name"]
        assert toy_model.layer_count == toy_manifest["layer_count"]
        assert toy_model.class_count == toy_manifest["class_count"]
        assert list(toy_model.input_shape) == toy_manifest["input_shape"]

    def test_shape_table(self, toy_model, toy_manifest):
        chain = [list(s) for s in toy_model.shape_chain]
        assert chain == toy_manifest["shape_table"]

    def test_residual_limits_valid_cuts(self, toy_model):
        cuts = toy_model.valid_cut_points()
        assert cuts == list(range(0, 12)) + list(range(20, 34))

    def test_flops_table(self, toy_model, toy_manifest):
        flops = [row.flops for row in profile_model(toy_model)]
        assert flops == toy_manifest["flops_table"]

    def test_dataset_counts(self, toy_dataset, toy_manifest):
        assert len(toy_dataset) == toy_manifest["dataset_count"]
        cal, test = toy_dataset.split()
        assert len(cal) == toy_manifest["calibration_count"]
        assert len(test) == toy_manifest["test_count"]


class TestRecordedNumbers:
    def test_baseline_accuracy_exact(self, toy_model, toy_dataset, toy_manifest):
        _, test = toy_dataset.split()
        preds = predict(toy_model, test.images)
        accuracy = float(np.mean(preds == test.labels))
        assert accuracy == toy_manifest["baseline_accuracy"]

    def test_first_test_image_prediction(self, toy_model, toy_dataset, toy_manifest):
        first = toy_manifest["first_test_image"]
        image = toy_dataset.images[first["index"]]
        label = int(toy_dataset.labels[first["index"]])
        assert label == first["label"]
        assert int(predict(toy_model, image[None])[0]) == first["label"]

    def test_first_dataset_item_opens_the_test_split(self, toy_dataset):
        _, test = toy_dataset.split()
        np.testing.assert_array_equal(test.images[0], toy_dataset.images[0])


class TestCommittedCodecs:
    def test_reference_grid_covers_three_cuts_four_configs(self, toy_manifest):
        grid = toy_manifest["reference_grid"]
        assert len(grid) == 12
        assert sorted({e["k"] for e in grid}) == [4, 10, 24]
        assert sorted({(e["d"], e["m"], e["b"]) for e in grid}) == [
            (8, 2, 4), (8, 4, 6), (8, 6, 8), (8, 8, 16),
        ]

    def test_codec_files_load_with_recorded_ids(self, toy_manifest, toy_model):
        for entry in toy_manifest["reference_grid"]:
            codec = ActivationCodec.load(fixture_path(entry["codec_file"]))
            assert f"{codec.codec_id_:#018x}" == entry["codec_id"]
            assert codec.tensor_shape_ == tuple(
                toy_manifest["shape_table"][entry["k"]]
            )

    def test_encoder_reproduces_committed_bitstreams(
        self, toy_manifest, toy_model, toy_dataset
    ):
        """Byte agreement with the independently implemented encoder on
        every reference cell, model ids included."""
        image = toy_dataset.images[0]
        for entry in toy_manifest["reference_grid"]:
            codec = ActivationCodec.load(fixture_path(entry["codec_file"]))
            x = forward_prefix(toy_model, image, entry["k"])
            stream = codec.encode(x, split_index=entry["k"])
            assert stream.model_id == codec.codec_id_
            committed = fixture_path(entry["bits_file"]).read_bytes()
            assert stream.to_bytes() == committed, (
                f"bitstream mismatch at k={entry['k']} "
                f"d={entry['d']} m={entry['m']} b={entry['b']}"
            )

    def test_calibrate_reproduces_committed_codec(
        self, toy_manifest, toy_model, toy_dataset, tmp_path
    ):
        entry = next(
            e for e in toy_manifest["reference_grid"]
            if (e["k"], e["d"], e["m"], e["b"]) == (24, 8, 4, 6)
        )
        cal, _ = toy_dataset.split()
        codec = calibrate(
            toy_model, cal.images, entry["k"],
            CodecParams(d=entry["d"], m=entry["m"], b=entry["b"],
                        clip=entry["clip"]),
        )
        codec.save(tmp_path / "refit.codec")
        committed = fixture_path(entry["codec_file"]).read_bytes()
        assert (tmp_path / "refit.codec").read_bytes() == committed

    def test_decoded_tensors_feed_the_suffix(
        self, toy_manifest, toy_model, toy_dataset
    ):
        entry = toy_manifest["reference_grid"][0]
        codec = ActivationCodec.load(fixture_path(entry["codec_file"]))
        x = forward_prefix(toy_model, toy_dataset.images[0], entry["k"])
        recon = codec.decode(codec.encode(x, split_index=entry["k"]))
        assert recon.shape == x.shape
        assert recon.dtype == np.float32


class TestNearLossless:
    def test_full_rank_16bit_accuracy_at_k4(
        self, toy_manifest, toy_model, toy_dataset
    ):
        """m=d with 16-bit indices holds accuracy within half a point."""
        entry = next(
            e for e in toy_manifest["reference_grid"]
            if (e["k"], e["m"], e["b"]) == (4, 8, 16)
        )
        codec = ActivationCodec.load(fixture_path(entry["codec_file"]))
        _, test = toy_dataset.split()
        lossy = evaluate_split(toy_model, test.images, test.labels, 4, codec)
        assert abs(
            lossy.top1_accuracy - toy_manifest["baseline_accuracy"]
        ) <= 0.005


class TestPlannerOnSweep:
    def test_quarter_input_budget_selects_interior_cut(
        self, toy_sweep_report, toy_model
    ):
        report, _ = toy_sweep_report
        budget = raw_bytes_at_cut(toy_model, 0) / 4
        chosen = select_split(
            report.points,
            Constraints(max_bytes=budget),
            Objective.MAX_ACCURACY,
        )
        assert 0 < chosen.k < toy_model.layer_count
        assert chosen.mean_payload_bytes <= budget

    def test_grid_file_round_trip(self, toy_manifest):
        from splitinfer.harness import load_grid

        k_list, configs, baseline = load_grid(
            fixture_path(toy_manifest["sweep_grid_file"])
        )
        assert k_list and all(
            0 < k < toy_manifest["layer_count"] for k in k_list
        )
        assert len(configs) == 4
        assert baseline["bytes"] == 4.0 * np.prod(toy_manifest["input_shape"])
        assert baseline["accuracy"] == toy_manifest["baseline_accuracy"]
