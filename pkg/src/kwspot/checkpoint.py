"""Binary model checkpoints with a JSON sidecar.

Layout (all little-endian)::

    magic    4 bytes  b"KWSM"
    version  u32
    kind     u32      0 = LSTM, 1 = DNN
    left     u32      context frames on the left
    right    u32      context frames on the right
    ndims    u32
    dims     ndims x u32   LSTM: (n_i, n_c, n_r, n_o); DNN: layer sizes
    tensors  float32, row-major, in this order:
             norm_mean (20), norm_std (20), then the model tensors
             (LSTM: model.LSTM_TENSORS order; DNN: W0, b0, W1, b1, ...)

The sidecar ``<file>.json`` repeats the dims and holds parameter counts and
training metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureNorm, FeatureSequence, stack_context
from .model import (DnnParams, LstmParams, count_params, dnn_forward,
                    lstm_forward, PosteriorTrace)

MAGIC = b"KWSM"
VERSION = 1
KINDS = {"lstm": 0, "dnn": 1}
_HEAD = struct.Struct("<4sIIIII")


class CheckpointError(ValueError):
    pass


@dataclass
class KwsModel:
    """A trained acoustic model with its input pipeline settings."""

    kind: str
    params: object
    left: int
    right: int
    norm: FeatureNorm
    metadata: dict = field(default_factory=dict)

    def stacked(self, feat) -> np.ndarray:
        return stack_context(self.norm.apply(feat), self.left, self.right).vectors

    def posteriors(self, feat: FeatureSequence) -> PosteriorTrace:
        uid = getattr(feat, "utterance_id", "")
        X = self.stacked(feat)
        if self.kind == "lstm":
            return lstm_forward(self.params, X, uid)[0]
        return dnn_forward(self.params, X, uid)

    def param_counts(self) -> dict:
        if self.kind == "lstm":
            n_i, n_c, n_r, n_o = self.params.dims
            return {"formula": count_params(n_c, n_r, n_i, n_o),
                    "allocated": self.params.num_scalars}
        return {"formula": self.params.num_scalars, "allocated": self.params.num_scalars}


def _tensor_list(model: KwsModel):
    return [model.norm.mean, model.norm.std] + list(model.params.tensors().values())


def to_bytes(model: KwsModel) -> bytes:
    dims = list(model.params.dims)
    parts = [_HEAD.pack(MAGIC, VERSION, KINDS[model.kind], model.left, model.right, len(dims)),
             struct.pack(f"<{len(dims)}I", *dims)]
    for t in _tensor_list(model):
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes, metadata=None) -> KwsModel:
    if len(data) < _HEAD.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, kind, left, right, ndims = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind_name = {v: k for k, v in KINDS.items()}.get(kind)
    if kind_name is None:
        raise CheckpointError(f"unknown model kind {kind}")
    off = _HEAD.size
    dims = struct.unpack_from(f"<{ndims}I", data, off)
    off += 4 * ndims

    template = LstmParams.zeros(*dims) if kind_name == "lstm" else DnnParams.zeros(dims)
    n_feat = dims[0] // (left + right + 1)
    shapes = [(n_feat,), (n_feat,)] + [t.shape for t in template.tensors().values()]
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        if off + 4 * n > len(data):
            raise CheckpointError("checkpoint truncated inside tensor data")
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape))
        off += 4 * n
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after tensors")
    norm = FeatureNorm(arrays[0].astype(np.float32), arrays[1].astype(np.float32))
    tensors = [a.astype(np.float64) for a in arrays[2:]]
    if kind_name == "lstm":
        params = LstmParams(*tensors)
    else:
        params = DnnParams(tensors[0::2], tensors[1::2])
    return KwsModel(kind_name, params, left, right, norm, dict(metadata or {}))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save(path, model: KwsModel) -> str:
    """Write checkpoint and sidecar; returns the sha256 of the binary."""
    path = Path(path)
    data = to_bytes(model)
    path.write_bytes(data)
    digest = hashlib.sha256(data).hexdigest()
    side = {
        "kind": model.kind,
        "dims": list(model.params.dims),
        "left": model.left,
        "right": model.right,
        "param_count": model.param_counts(),
        "tensor_order": ["norm_mean", "norm_std"] + list(model.params.tensors()),
        "sha256": digest,
        "metadata": model.metadata,
    }
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return digest


def load(path) -> KwsModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text()).get("metadata", {})
    return from_bytes(path.read_bytes(), meta)


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
