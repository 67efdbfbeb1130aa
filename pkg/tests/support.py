"""Plain-importable test helpers (kept out of conftest.py so test modules
can import them by name regardless of how many conftest files the session
loads)."""

from pathlib import Path

import numpy as np

from splitinfer import (
    Affine,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    GlobalAvgPool,
    ModelGraph,
    ModelMetadata,
    Relu6,
    ResidualAdd,
)

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "fixtures"


def make_conv(rng, cin, cout, k=3, s=1, p=1, scale=0.3):
    return Conv2d(
        cin, cout, k, s, p,
        rng.normal(0.0, scale, (cout, cin, k, k)),
        rng.normal(0.0, 0.05, cout),
    )


def make_tiny_model(seed: int = 7) -> ModelGraph:
    """1x8x8 input, 3 classes, one residual block; covers every layer kind."""
    rng = np.random.default_rng(seed)
    layers = [
        make_conv(rng, 1, 4),                                        # 0
        Affine(4, rng.normal(1.0, 0.1, 4), rng.normal(0.0, 0.1, 4)),  # 1
        Relu6(),                                                     # 2
        make_conv(rng, 4, 8, s=2),                                   # 3 -> 8ch 4x4
        Relu6(),                                                     # 4
        make_conv(rng, 8, 8, k=1, s=1, p=0),                         # 5
        ResidualAdd(4),                                              # 6 adds x_5
        DepthwiseConv2d(8, 3, 1, 1,
                        rng.normal(0.0, 0.3, (8, 3, 3)),
                        rng.normal(0.0, 0.05, 8)),                   # 7
        GlobalAvgPool(),                                             # 8
        Dense(8, 3, rng.normal(0.0, 0.5, (3, 8)), rng.normal(0.0, 0.1, 3)),  # 9
    ]
    return ModelGraph(layers, (1, 8, 8), 3, ModelMetadata(name="tiny"))
