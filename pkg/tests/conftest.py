"""Shared test fixtures: small deterministic models and datasets."""

import numpy as np
import pytest

from splitinfer import ModelGraph

from support import FIXTURES_DIR, make_tiny_model


@pytest.fixture(scope="session")
def tiny_model() -> ModelGraph:
    return make_tiny_model()


@pytest.fixture(scope="session")
def tiny_images() -> np.ndarray:
    rng = np.random.default_rng(11)
    return rng.normal(0.0, 1.0, (24, 1, 8, 8)).astype(np.float32)


@pytest.fixture(scope="session")
def tiny_labels(tiny_model, tiny_images) -> np.ndarray:
    # labels = model's own predictions, so raw-path accuracy is 1.0 by design
    from splitinfer import predict

    return predict(tiny_model, tiny_images)


# ---------------------------------------------------------------------------
# Committed trained-model fixtures (see fixtures/manifest.json).
# ---------------------------------------------------------------------------


def _need_fixtures():
    if not (FIXTURES_DIR / "manifest.json").exists():
        pytest.skip("committed fixtures not present; run the fixture generator")


@pytest.fixture(scope="session")
def toy_manifest() -> dict:
    import json

    _need_fixtures()
    return json.loads((FIXTURES_DIR / "manifest.json").read_text())


@pytest.fixture(scope="session")
def toy_model(toy_manifest) -> ModelGraph:
    from splitinfer import load_model

    return load_model(FIXTURES_DIR / toy_manifest["model_file"])


@pytest.fixture(scope="session")
def toy_dataset(toy_manifest):
    from splitinfer.harness import Dataset

    return Dataset.load(FIXTURES_DIR / toy_manifest["dataset_file"])


@pytest.fixture(scope="session")
def toy_sweep_report(toy_model, toy_dataset, toy_manifest):
    """Full sweep over the committed grid; (report, wall_seconds)."""
    import time

    from splitinfer.harness import load_grid, sweep

    k_list, configs, baseline = load_grid(
        FIXTURES_DIR / toy_manifest["sweep_grid_file"]
    )
    start = time.monotonic()
    report = sweep(toy_model, toy_dataset, k_list, configs, baseline)
    return report, time.monotonic() - start
