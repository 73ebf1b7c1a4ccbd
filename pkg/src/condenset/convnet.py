"""The embedding/classification ConvNet.

D blocks of (3x3 conv, instance norm, ReLU, 2x2 average pool) followed by a
linear classifier. Features are the flattened output of the last pooling
layer; the classifier exists for queue training and the class-aware
regularizer. Parameters are plain named tensors, checkpointable to a compact
binary format (JSON header + little-endian float32 payload).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataFormatError, ShapeError


@dataclass(frozen=True)
class ConvNetConfig:
    depth: int = 3
    width: int = 128
    in_channels: int = 3
    input_hw: int = 32
    num_classes: int = 10

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.in_channels < 1 or self.num_classes < 1:
            raise ConfigError(f"all ConvNet extents must be positive: {self}")
        if self.input_hw % (1 << self.depth) != 0:
            raise ConfigError(
                f"input_hw={self.input_hw} must be divisible by 2^depth={1 << self.depth}"
            )

    @property
    def feature_dim(self) -> int:
        side = self.input_hw >> self.depth
        return self.width * side * side


class ConvNetParams:
    """Named parameter tensors for one network instance."""

    def __init__(self, config: ConvNetConfig, tensors: dict[str, T.Tensor]):
        self.config = config
        self.tensors = tensors

    def parameters(self) -> list[T.Tensor]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def named(self) -> list[tuple[str, T.Tensor]]:
        return [(k, self.tensors[k]) for k in sorted(self.tensors)]

    def copy(self) -> "ConvNetParams":
        return ConvNetParams(
            self.config,
            {k: T.Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()},
        )


def init_params(config: ConvNetConfig, seed: int, dtype=np.float32) -> ConvNetParams:
    """He-normal conv/linear weights, zero biases, identity norm affine."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, T.Tensor] = {}

    def param(name, arr):
        tensors[name] = T.Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)

    c_in = config.in_channels
    for i in range(config.depth):
        fan_in = c_in * 9
        param(f"block{i}.conv.w", rng.normal(0.0, np.sqrt(2.0 / fan_in), (config.width, c_in, 3, 3)))
        param(f"block{i}.conv.b", np.zeros(config.width))
        param(f"block{i}.norm.gamma", np.ones(config.width))
        param(f"block{i}.norm.beta", np.zeros(config.width))
        c_in = config.width
    f = config.feature_dim
    param("fc.w", rng.normal(0.0, np.sqrt(2.0 / f), (f, config.num_classes)))
    param("fc.b", np.zeros(config.num_classes))
    return ConvNetParams(config, tensors)


def embed(params: ConvNetParams, batch: T.Tensor) -> T.Tensor:
    """[B,C,H,W] -> [B,F] features from the last pooling layer, flattened."""
    cfg = params.config
    if batch.data.ndim != 4 or batch.shape[1] != cfg.in_channels:
        raise ShapeError(f"expected [B,{cfg.in_channels},H,W], got {batch.shape}")
    if batch.shape[2] != cfg.input_hw or batch.shape[3] != cfg.input_hw:
        raise ShapeError(
            f"spatial extent {batch.shape[2]}x{batch.shape[3]} != configured {cfg.input_hw}"
        )
    # channels-last internally: keeps the conv GEMMs free of layout copies
    h = T.to_nhwc(batch)
    for i in range(cfg.depth):
        t = params.tensors
        h = T.conv2d_nhwc(h, t[f"block{i}.conv.w"], t[f"block{i}.conv.b"])
        h = T.instance_norm2d_nhwc(h, t[f"block{i}.norm.gamma"], t[f"block{i}.norm.beta"])
        h = T.relu(h)
        h = T.avg_pool2d_nhwc(h)
    return T.reshape(h, (h.shape[0], cfg.feature_dim))


def classify(params: ConvNetParams, features: T.Tensor) -> T.Tensor:
    return T.linear(features, params.tensors["fc.w"], params.tensors["fc.b"])


def logits(params: ConvNetParams, batch: T.Tensor) -> T.Tensor:
    return classify(params, embed(params, batch))


def train_step(params: ConvNetParams, state: T.SgdState, images: np.ndarray, labels) -> float:
    """One cross-entropy SGD step on a real batch; returns the loss value."""
    x = T.Tensor(images)
    loss = T.softmax_cross_entropy(logits(params, x), labels)
    plist = params.parameters()
    T.zero_grads(plist)
    T.backward(loss)
    T.sgd_update(plist, [p.grad for p in plist], state)
    T.zero_grads(plist)
    return loss.item()


def predict_logits(params: ConvNetParams, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Graph-free forward pass over a (possibly large) image array."""
    outs = []
    with T.frozen(params.parameters()):
        for lo in range(0, len(images), batch_size):
            out = logits(params, T.Tensor(images[lo : lo + batch_size]))
            outs.append(out.data)
    return np.concatenate(outs, axis=0)


def accuracy(params: ConvNetParams, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 128) -> float:
    """Fraction of correct argmax predictions."""
    if len(images) == 0:
        raise ShapeError("accuracy on an empty split")
    pred = predict_logits(params, images, batch_size).argmax(axis=1)
    return float((pred == np.asarray(labels)).mean())


def embed_array(params: ConvNetParams, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Graph-free feature extraction."""
    outs = []
    with T.frozen(params.parameters()):
        for lo in range(0, len(images), batch_size):
            outs.append(embed(params, T.Tensor(images[lo : lo + batch_size])).data)
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# checkpoint I/O: one JSON header line, then float32 little-endian payload

_CKPT_FORMAT = "condenset/convnet-v1"


def save_params(path, params: ConvNetParams) -> None:
    names = [name for name, _ in params.named()]
    header = {
        "format": _CKPT_FORMAT,
        "config": asdict(params.config),
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for n in names:
            fh.write(params.tensors[n].data.astype("<f4").tobytes())


def load_params(path) -> ConvNetParams:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"bad checkpoint header in {path}: {exc}") from exc
        if header.get("format") != _CKPT_FORMAT:
            raise DataFormatError(f"unexpected checkpoint format {header.get('format')!r}")
        config = ConvNetConfig(**header["config"])
        payload = fh.read()
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(payload):
            raise DataFormatError(f"truncated checkpoint payload in {path}")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = T.Tensor(arr.astype(np.float32), requires_grad=True)
        offset += nbytes
    if offset != len(payload):
        raise DataFormatError(f"trailing bytes in checkpoint {path}")
    return ConvNetParams(config, tensors)
