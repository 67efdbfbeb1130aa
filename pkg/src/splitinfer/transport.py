"""TCP transport for the split pipeline: client prefix+encode, server decode+suffix.

Framing is a big-endian u32 byte count followed by the payload (network
byte order); everything inside a frame keeps the little-endian layout of
the file formats. One request frame carries one serialized bitstream;
the response frame is either

    class_count u16 | logits f32[class_count] LE | argmax u32

or an error frame

    0xFFFF u16 | error code u16 | UTF-8 message.

Error codes: 1 model mismatch, 2 corrupt payload, 3 trailing garbage,
4 protocol error. Framing violations (oversized or truncated frames)
close the connection; well-framed bad requests get an error frame and
the connection keeps serving.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading

import numpy as np

from .codec import ActivationCodec, Bitstream
from .errors import (
    BadMagic,
    ConnectionFailed,
    CorruptPayload,
    FormatError,
    ModelMismatch,
    RemoteTimeout,
    ServerError,
    ShapeMismatch,
    TooLarge,
    TrailingGarbage,
    TransportError,
    TruncatedFile,
    TruncatedStream,
    VersionUnsupported,
)
from .runtime import ModelGraph, forward_prefix, forward_suffix

FRAME_CAP = 1 << 26  # 64 MiB
ERROR_MARKER = 0xFFFF

CODE_MODEL_MISMATCH = 1
CODE_CORRUPT_PAYLOAD = 2
CODE_TRAILING_GARBAGE = 3
CODE_PROTOCOL_ERROR = 4


def frame_write(stream, payload: bytes) -> int:
    """Write one length-prefixed frame; returns bytes put on the wire."""
    if len(payload) > FRAME_CAP:
        raise TooLarge(f"payload of {len(payload)} bytes exceeds cap {FRAME_CAP}")
    stream.write(struct.pack(">I", len(payload)) + payload)
    stream.flush()
    return 4 + len(payload)


def frame_read(stream) -> bytes:
    """Read one frame; raises TruncatedStream at EOF, TooLarge over the cap."""
    header = _read_exact(stream, 4)
    (length,) = struct.unpack(">I", header)
    if length > FRAME_CAP:
        raise TooLarge(f"frame of {length} bytes exceeds cap {FRAME_CAP}")
    return _read_exact(stream, length)


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise TruncatedStream(f"stream ended {remaining} bytes short")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


_ERROR_CODES = {
    ModelMismatch: CODE_MODEL_MISMATCH,
    TrailingGarbage: CODE_TRAILING_GARBAGE,  # before its parent CorruptPayload check
    CorruptPayload: CODE_CORRUPT_PAYLOAD,
}


def _error_code(exc: Exception) -> int:
    for cls, code in _ERROR_CODES.items():
        if isinstance(exc, cls):
            return code
    return CODE_PROTOCOL_ERROR


def error_frame(code: int, message: str) -> bytes:
    return struct.pack("<HH", ERROR_MARKER, code) + message.encode("utf-8")


def response_frame(logits: np.ndarray) -> bytes:
    logits = np.asarray(logits, dtype=np.float32)
    return (
        struct.pack("<H", logits.size)
        + logits.astype("<f4").tobytes()
        + struct.pack("<I", int(np.argmax(logits)))
    )


def parse_response(frame: bytes) -> tuple[int, np.ndarray]:
    """Returns (argmax, logits) or raises ServerError on an error frame."""
    if len(frame) < 2:
        raise TransportError("response frame shorter than its marker")
    (first,) = struct.unpack("<H", frame[:2])
    if first == ERROR_MARKER:
        if len(frame) < 4:
            raise TransportError("error frame missing its code")
        (code,) = struct.unpack("<H", frame[2:4])
        raise ServerError(code, frame[4:].decode("utf-8", errors="replace"))
    class_count = first
    expected = 2 + 4 * class_count + 4
    if len(frame) != expected:
        raise TransportError(
            f"response frame is {len(frame)} bytes, expected {expected}"
        )
    logits = np.frombuffer(frame[2 : 2 + 4 * class_count], dtype="<f4").astype(
        np.float32
    )
    (argmax,) = struct.unpack("<I", frame[-4:])
    return int(argmax), logits


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: SplitServer = self.server.split_server  # type: ignore[attr-defined]
        while True:
            try:
                request = frame_read(self.rfile)
            except TransportError:
                return  # framing violation or clean EOF: drop the connection
            try:
                bs = Bitstream.from_bytes(request)
            except (BadMagic, VersionUnsupported, TruncatedFile):
                return  # garbage frame: close, the next connection is unaffected
            except FormatError as exc:
                reply = error_frame(_error_code(exc), str(exc))
            else:
                try:
                    x_k = server.codec.decode(bs)
                    logits = forward_suffix(server.model, x_k, server.split_index)
                    reply = response_frame(logits)
                except (FormatError, ModelMismatch, ShapeMismatch) as exc:
                    reply = error_frame(_error_code(exc), str(exc))
                except Exception as exc:  # keep other connections unaffected
                    reply = error_frame(CODE_PROTOCOL_ERROR, str(exc))
            try:
                frame_write(self.wfile, reply)
            except (TransportError, OSError):
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class SplitServer:
    """Serves forward_suffix over decoded bitstreams on a TCP port.

    Model and codec are immutable; each connection is handled on its own
    thread, so one request's failure never affects another connection.
    """

    def __init__(
        self,
        model: ModelGraph,
        codec: ActivationCodec,
        split_index: int,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        model.validate_split(split_index)
        if tuple(codec.tensor_shape_) != model.cut_shape(split_index):
            raise ShapeMismatch(
                f"codec fitted for {codec.tensor_shape_}, cut {split_index} "
                f"produces {model.cut_shape(split_index)}"
            )
        self.model = model
        self.codec = codec
        self.split_index = split_index
        self._server = _TCPServer((host, port), _Handler)
        self._server.split_server = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def start_background(self) -> "SplitServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "SplitServer":
        return self.start_background()

    def __exit__(self, *exc_info) -> None:
        self.shutdown()


def remote_infer(
    model: ModelGraph,
    codec: ActivationCodec,
    k: int,
    host: str,
    port: int,
    image: np.ndarray,
    timeout: float = 30.0,
) -> tuple[int, np.ndarray, int]:
    """Run the split pipeline against a remote server.

    Returns (label, logits, bytes_sent); bytes_sent is the request frame
    size, i.e. 4 + bitstream header + ceil(payload_bit_count / 8).
    """
    x_k = forward_prefix(model, image, k)
    bs = codec.encode(x_k, split_index=k)
    request = bs.to_bytes()
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            with sock.makefile("rwb") as stream:
                bytes_sent = frame_write(stream, request)
                try:
                    reply = frame_read(stream)
                except socket.timeout:
                    raise RemoteTimeout(f"no response within {timeout}s") from None
    except ConnectionRefusedError as exc:
        raise ConnectionFailed(f"cannot reach {host}:{port}: {exc}") from None
    except socket.timeout:
        raise RemoteTimeout(f"no response within {timeout}s") from None
    except OSError as exc:
        raise ConnectionFailed(f"cannot reach {host}:{port}: {exc}") from None
    argmax, logits = parse_response(reply)
    return argmax, logits, bytes_sent
