"""Split CNN inference with compressed activation transmission.

Run a model prefix locally, compress the cut activation with blocked
PCA + quantization + canonical Huffman coding, ship it, and finish
inference remotely; profile and plan the FLOPs/bytes/accuracy trade-off.
"""

from . import errors
from .codec import ActivationCodec, Bitstream, CodecParams, partition_blocks
from .eigen import symmetric_eig
from .harness import (
    Dataset,
    SweepReport,
    calibrate,
    emit_report,
    evaluate_split,
    sweep,
)
from .planner import (
    Constraints,
    Objective,
    TradeoffPoint,
    pareto_frontier,
    scalarized_best,
    select_split,
)
from .profiler import (
    LayerProfile,
    codec_flops,
    cumulative_flops,
    layer_cost,
    profile_model,
    raw_bytes_at_cut,
)
from .runtime import (
    Affine,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    GlobalAvgPool,
    ModelGraph,
    ModelMetadata,
    Relu6,
    ResidualAdd,
    forward,
    forward_prefix,
    forward_suffix,
    load_model,
    predict,
    save_model,
)
from .transport import SplitServer, remote_infer

__version__ = "0.1.0"

__all__ = [
    "ActivationCodec",
    "Affine",
    "Bitstream",
    "CodecParams",
    "Constraints",
    "Conv2d",
    "Dataset",
    "Dense",
    "DepthwiseConv2d",
    "GlobalAvgPool",
    "LayerProfile",
    "ModelGraph",
    "ModelMetadata",
    "Objective",
    "Relu6",
    "ResidualAdd",
    "SplitServer",
    "SweepReport",
    "TradeoffPoint",
    "calibrate",
    "codec_flops",
    "cumulative_flops",
    "emit_report",
    "errors",
    "evaluate_split",
    "forward",
    "forward_prefix",
    "forward_suffix",
    "layer_cost",
    "load_model",
    "pareto_frontier",
    "partition_blocks",
    "predict",
    "profile_model",
    "raw_bytes_at_cut",
    "remote_infer",
    "save_model",
    "scalarized_best",
    "select_split",
    "sweep",
    "symmetric_eig",
    "__version__",
]
