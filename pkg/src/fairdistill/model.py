"""Rectifier MLP classifiers with an exposed penultimate layer, plus checkpoints."""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from . import tensor as tg
from .errors import FormatError, ParameterError, ShapeError

_MAGIC = b"FDCK"
_VERSION = 1
_PREFIX = struct.Struct("<4sIII")  # magic, version, header length, payload crc32


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``[d_in, h_1, ..., h_k, n_classes]``; rectifier on hidden layers."""

    layer_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 3:
            raise ParameterError("an MLP needs at least one hidden layer")
        if min(dims) < 1:
            raise ParameterError("all layer widths must be positive")
        object.__setattr__(self, "layer_dims", dims)

    @classmethod
    def default(cls, d_in: int, n_classes: int) -> "MlpSpec":
        return cls((d_in, 64, 64, n_classes))

    @property
    def d_in(self):
        return self.layer_dims[0]

    @property
    def n_classes(self):
        return self.layer_dims[-1]

    @property
    def penultimate_dim(self):
        return self.layer_dims[-2]

    def param_shapes(self):
        shapes = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes


def init_params(spec: MlpSpec, seed: int) -> List[np.ndarray]:
    """Glorot-uniform weights, zero biases, as ``[W1, b1, W2, b2, ...]``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 7])))
    params = []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def mlp_forward(params: Sequence, X):
    """Return ``(features, logits)``; features are the last hidden activations."""
    X = tg.as_tensor(X)
    d_in = tg.as_tensor(params[0]).shape[0]
    if X.data.ndim != 2 or X.shape[1] != d_in:
        raise ShapeError(f"input of shape {X.shape} does not match first layer width {d_in}")
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        h = tg.relu(tg.matmul(h, params[2 * i]) + params[2 * i + 1])
    logits = tg.matmul(h, params[-2]) + params[-1]
    return h, logits


def predict_logits(params: Sequence[np.ndarray], X: np.ndarray) -> np.ndarray:
    """Graph-free forward pass for evaluation."""
    h = np.asarray(X, dtype=np.float64)
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        h = np.maximum(h @ params[2 * i] + params[2 * i + 1], 0.0)
    return h @ params[-2] + params[-1]


def predict_features(params: Sequence[np.ndarray], X: np.ndarray) -> np.ndarray:
    h = np.asarray(X, dtype=np.float64)
    for i in range(len(params) // 2 - 1):
        h = np.maximum(h @ params[2 * i] + params[2 * i + 1], 0.0)
    return h


@dataclass
class ModelCheckpoint:
    """Spec, weights and free-form metadata. Weights are stored as float32."""

    spec: MlpSpec
    params: List[np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.spec.param_shapes()
        if len(shapes) != len(self.params):
            raise ShapeError("parameter count does not match the spec")
        params = []
        for p, shape in zip(self.params, shapes):
            p = np.asarray(p, dtype="<f4")
            if p.shape != shape:
                raise ShapeError(f"parameter shape {p.shape} != expected {shape}")
            params.append(p)
        self.params = params

    def float_params(self) -> List[np.ndarray]:
        return [p.astype(np.float64) for p in self.params]

    def save(self, path) -> None:
        header = json.dumps(
            {"layer_dims": list(self.spec.layer_dims), "metadata": self.metadata},
            sort_keys=True,
        ).encode("utf-8")
        payload = b"".join(p.tobytes() for p in self.params)
        with open(path, "wb") as fh:
            fh.write(_PREFIX.pack(_MAGIC, _VERSION, len(header), zlib.crc32(payload)))
            fh.write(header)
            fh.write(payload)

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        raw = Path(path).read_bytes()
        if len(raw) < _PREFIX.size:
            raise FormatError(f"{path}: truncated checkpoint")
        magic, version, n_header, crc = _PREFIX.unpack_from(raw)
        if magic != _MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        start = _PREFIX.size
        try:
            header = json.loads(raw[start:start + n_header].decode("utf-8"))
            spec = MlpSpec(tuple(header["layer_dims"]))
        except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: unreadable header") from exc
        payload = raw[start + n_header:]
        shapes = spec.param_shapes()
        expected = 4 * sum(int(np.prod(s)) for s in shapes)
        if len(payload) != expected:
            raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
        if zlib.crc32(payload) != crc:
            raise FormatError(f"{path}: payload checksum mismatch")
        params, offset = [], 0
        for shape in shapes:
            count = int(np.prod(shape))
            params.append(np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
                          .reshape(shape).copy())
            offset += 4 * count
        return cls(spec, params, header.get("metadata", {}))
