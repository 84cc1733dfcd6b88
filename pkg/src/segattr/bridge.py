"""Client side of the model-bridge wire protocol.

A bridge server is any subprocess that reads newline-delimited JSON requests
on stdin and answers one JSON line per request on stdout. Tensors travel as
base64-encoded little-endian float32 in row-major order with an explicit
shape array; masks travel as base64 raw bytes, one byte per pixel.

Request/response shapes:

    {"type": "hello"}
        -> {"type": "hello", "num_classes": K, "feature_shape": [C, h, w]}
    {"type": "predict", "image": TENSOR}
        -> {"type": "predict", "probs": TENSOR}
    {"type": "grad", "image": TENSOR, "class_id": c, "mask": MASK}
        -> {"type": "grad", "activations": TENSOR, "gradient": TENSOR}
    {"type": "bye"} -> {"type": "bye"}

Any malformed request yields {"type": "error", "message": ...} and the
server keeps running. Responses preserve request order.
"""

from __future__ import annotations

import base64
import json
import subprocess

import numpy as np

from .model import FeatureBundle
from .ops import InvalidInputError


class BridgeError(RuntimeError):
    """Transport failure or an error response from the bridge server."""


def encode_tensor(array: np.ndarray) -> dict:
    """Pack an array as {"shape": [...], "data": base64 of little-endian f32}."""
    array = np.ascontiguousarray(array, dtype="<f4")
    return {
        "shape": list(array.shape),
        "data": base64.b64encode(array.tobytes()).decode("ascii"),
    }


def decode_tensor(payload: dict) -> np.ndarray:
    shape = tuple(int(s) for s in payload["shape"])
    raw = base64.b64decode(payload["data"])
    expected = 4 * int(np.prod(shape)) if shape else 4
    if len(raw) != expected:
        raise InvalidInputError(
            f"tensor payload is {len(raw)} bytes, expected {expected} for shape {shape}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def encode_mask(mask: np.ndarray) -> dict:
    mask = np.ascontiguousarray(np.asarray(mask).astype(bool), dtype=np.uint8)
    return {
        "shape": list(mask.shape),
        "data": base64.b64encode(mask.tobytes()).decode("ascii"),
    }


def decode_mask(payload: dict) -> np.ndarray:
    shape = tuple(int(s) for s in payload["shape"])
    raw = base64.b64decode(payload["data"])
    if len(raw) != int(np.prod(shape)):
        raise InvalidInputError("mask payload length does not match shape")
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape).astype(bool)


class BridgeAdapter:
    """ModelAdapter implementation backed by a bridge subprocess.

    One adapter owns one server process; the harness spawns one adapter per
    worker, matching the protocol's strict request/response alternation.
    """

    def __init__(self, command):
        self._command = list(command)
        self._proc = subprocess.Popen(
            self._command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        hello = self._request({"type": "hello"})
        self.num_classes = int(hello["num_classes"])
        self._feature_shape = tuple(int(v) for v in hello["feature_shape"])

    def _request(self, message: dict) -> dict:
        proc = self._proc
        if proc.poll() is not None:
            raise BridgeError(f"bridge process exited with code {proc.returncode}")
        try:
            proc.stdin.write(json.dumps(message) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"bridge write failed: {exc}") from exc
        line = proc.stdout.readline()
        if not line:
            raise BridgeError("bridge closed its output stream")
        response = json.loads(line)
        if response.get("type") == "error":
            raise BridgeError(response.get("message", "bridge error"))
        if response.get("type") != message["type"]:
            raise BridgeError(f"out-of-order response {response.get('type')!r}")
        return response

    def feature_shape(self, height: int, width: int) -> tuple[int, int, int]:
        # reported by the server for its configured nominal input size
        return self._feature_shape

    def predict(self, image: np.ndarray) -> np.ndarray:
        response = self._request({"type": "predict", "image": encode_tensor(image)})
        return decode_tensor(response["probs"])

    def features_and_gradient(self, image, class_id, mask) -> FeatureBundle:
        response = self._request(
            {
                "type": "grad",
                "image": encode_tensor(image),
                "class_id": int(class_id),
                "mask": encode_mask(mask),
            }
        )
        return FeatureBundle(
            activations=decode_tensor(response["activations"]),
            gradient=decode_tensor(response["gradient"]),
        )

    def close(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            try:
                self._request({"type": "bye"})
            except BridgeError:
                pass
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
