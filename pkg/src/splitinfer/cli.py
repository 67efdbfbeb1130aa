"""Command-line interface.

Exit codes: 0 success, 2 infeasible plan, 3 file/bitstream format error,
1 other package or I/O errors, 64 usage errors.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from .codec import ActivationCodec, CodecParams
from .errors import (
    FormatError,
    Infeasible,
    ModelMismatch,
    ShapeMismatch,
    SplitInferError,
)
from .harness import (
    Dataset,
    calibrate,
    emit_report,
    evaluate_split,
    load_grid,
    load_report_json,
    sweep,
)
from .planner import Objective


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.replace(" ", "").split(",") if part]


@click.group()
def cli():
    """Split CNN inference: profile, compress, plan, and serve."""


@cli.command()
@click.argument("model_path", metavar="MODEL")
@click.option("-o", "--output", type=click.File("w"), default="-")
def profile(model_path, output):
    """Per-layer FLOPs and raw activation bytes as CSV."""
    from .profiler import write_profile_csv
    from .runtime import load_model

    model = load_model(model_path)
    write_profile_csv(model, output)


@cli.command("calibrate")
@click.argument("model_path", metavar="MODEL")
@click.argument("data_path", metavar="DATA")
@click.option("--k", required=True, type=int, help="split index")
@click.option("--d", required=True, type=int, help="block size")
@click.option("--m", required=True, type=int, help="retained components")
@click.option("--b", required=True, type=int, help="quantizer bits")
@click.option("--clip", default=4.0, show_default=True, help="clip in sigmas")
@click.option("-o", "--output", required=True, help="codec file to write")
def calibrate_cmd(model_path, data_path, k, d, m, b, clip, output):
    """Fit a codec on the calibration split of DATA at cut K."""
    from .runtime import load_model

    model = load_model(model_path)
    dataset = Dataset.load(data_path)
    cal, _ = dataset.split()
    codec = calibrate(model, cal.images, k, CodecParams(d=d, m=m, b=b, clip=clip))
    codec.save(output)
    click.echo(f"{output}: codec_id={codec.codec_id_:#018x}")


@cli.command("eval")
@click.argument("model_path", metavar="MODEL")
@click.argument("data_path", metavar="DATA")
@click.option("--k", required=True, type=int)
@click.option("--codec", "codec_path", default=None, help="codec file (lossy path)")
@click.option("--logits-bytes/--no-logits-bytes", default=True,
              help="count logits bytes at the final cut")
def eval_cmd(model_path, data_path, k, codec_path, logits_bytes):
    """Accuracy and mean payload bytes on the test split at cut K."""
    from .planner import point_to_record
    from .runtime import load_model

    model = load_model(model_path)
    dataset = Dataset.load(data_path)
    _, test = dataset.split()
    codec = ActivationCodec.load(codec_path) if codec_path else None
    point = evaluate_split(
        model, test.images, test.labels, k, codec,
        count_logits_bytes=logits_bytes,
    )
    record = point_to_record(point, False)
    record.pop("on_frontier")
    click.echo(json.dumps(record))


@cli.command("sweep")
@click.argument("model_path", metavar="MODEL")
@click.argument("data_path", metavar="DATA")
@click.option("--grid", "grid_path", required=True, help="grid JSON file")
@click.option("--k-list", default=None, help="comma-separated cut list (overrides grid file)")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("-o", "--output", type=click.File("w"), default="-")
def sweep_cmd(model_path, data_path, grid_path, k_list, fmt, output):
    """Calibrate and evaluate every (cut, config) cell of the grid."""
    from .runtime import load_model

    model = load_model(model_path)
    dataset = Dataset.load(data_path)
    file_k_list, configs, baseline = load_grid(grid_path)
    ks = _parse_int_list(k_list) if k_list else file_k_list
    if not ks:
        raise click.UsageError("no cut list: pass --k-list or put k_list in the grid file")
    report = sweep(model, dataset, ks, configs, baseline)
    emit_report(report, fmt, output)


@cli.command("plan")
@click.argument("report_path", metavar="REPORT")
@click.option("--max-bytes", type=float, default=None)
@click.option("--max-flops", type=int, default=None)
@click.option("--min-acc", type=float, default=None)
@click.option("--objective", type=click.Choice([o.value for o in Objective]),
              default=Objective.MAX_ACCURACY.value, show_default=True)
@click.option("--weights", default=None,
              help="scalarize instead: w_flops,w_bytes,w_accuracy")
def plan_cmd(report_path, max_bytes, max_flops, min_acc, objective, weights):
    """Pick the best split from a sweep report (JSON or CSV)."""
    from .planner import (
        parse_constraints,
        point_to_record,
        read_points_csv,
        read_points_json,
        scalarized_best,
        select_split,
    )

    with open(report_path) as f:
        if report_path.endswith(".json"):
            points = read_points_json(f)
        else:
            points = read_points_csv(f)
    if weights is not None:
        w = [float(part) for part in weights.split(",")]
        if len(w) != 3:
            raise click.UsageError("--weights needs w_flops,w_bytes,w_accuracy")
        chosen = scalarized_best(points, *w)
    else:
        constraints = parse_constraints(max_bytes, max_flops, min_acc)
        chosen = select_split(points, constraints, Objective(objective))
    record = point_to_record(chosen, False)
    record.pop("on_frontier")
    click.echo(json.dumps(record))


@cli.command("serve")
@click.argument("model_path", metavar="MODEL")
@click.argument("codec_path", metavar="CODEC")
@click.option("--k", required=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=7433, show_default=True, type=int)
def serve_cmd(model_path, codec_path, k, host, port):
    """Serve the remote half: decode + forward_suffix per request."""
    from .runtime import load_model
    from .transport import SplitServer

    model = load_model(model_path)
    codec = ActivationCodec.load(codec_path)
    server = SplitServer(model, codec, k, host=host, port=port)
    click.echo(f"serving cut {k} on {server.address[0]}:{server.address[1]}", err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


@cli.command("infer")
@click.argument("model_path", metavar="MODEL")
@click.argument("codec_path", metavar="CODEC")
@click.option("--k", required=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=7433, show_default=True, type=int)
@click.option("--image", "image_path", required=True,
              help="input image: .npy tensor or a dataset file")
@click.option("--index", default=0, show_default=True,
              help="image index when --image is a dataset file")
@click.option("--timeout", default=30.0, show_default=True)
def infer_cmd(model_path, codec_path, k, host, port, image_path, index, timeout):
    """Classify one image via a running server."""
    from .runtime import load_model
    from .transport import remote_infer

    model = load_model(model_path)
    codec = ActivationCodec.load(codec_path)
    image = _load_image(image_path, index)
    label, logits, bytes_sent = remote_infer(
        model, codec, k, host, port, image, timeout=timeout
    )
    click.echo(json.dumps({
        "label": int(label),
        "logits": [float(v) for v in logits],
        "bytes_sent": int(bytes_sent),
    }))


def _load_image(path: str, index: int) -> np.ndarray:
    from .harness import DATASET_MAGIC

    with open(path, "rb") as f:
        head = f.read(8)
    if head == DATASET_MAGIC:
        return Dataset.load(path).images[index]
    return np.load(path).astype(np.float32)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 64
    except click.Abort:
        return 130
    except Infeasible as exc:
        click.echo(f"infeasible: {exc}", err=True)
        return 2
    except (FormatError, ShapeMismatch, ModelMismatch) as exc:
        click.echo(f"format error: {exc}", err=True)
        return 3
    except SplitInferError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
