"""Desk-scale classifiers, SGD with momentum, and the binary checkpoint format."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ARCHS = ("mlp", "small_cnn")
CKPT_MAGIC = b"ADAGATCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    """Named trainable tensors for one classifier.

    Entry order is insertion order and defines the checkpoint layout.
    """

    arch: str
    entries: dict[str, Tensor]

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unsupported architecture {self.arch!r}; expected one of {ARCHS}")

    def parameters(self) -> list[Tensor]:
        return list(self.entries.values())

    def zero_grad(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def frozen(self) -> "ModelParams":
        """Constant view sharing the parameter arrays; builds no gradient path to them."""
        return ModelParams(self.arch, {k: Tensor(v.data) for k, v in self.entries.items()})

    def snapshot(self) -> "ModelParams":
        """Deep copy that requires grad, safe to hand to another thread."""
        return ModelParams(
            self.arch, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.entries.items()}
        )

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.entries.items()}

    @property
    def num_classes(self) -> int:
        return self.entries[_last_weight(self)].shape[1]


def _last_weight(model: ModelParams) -> str:
    return [k for k in model.entries if k.endswith(".weight")][-1]


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(
    arch: str,
    input_dims,
    num_classes: int,
    seed: int,
    width: int | None = None,
) -> ModelParams:
    """Initialize a classifier deterministically from ``seed``.

    ``mlp``: flat input of size prod(input_dims), two hidden ReLU layers of
    ``width`` units (default 64).  ``small_cnn``: input (C, H, W); two 3x3
    conv + ReLU + 2x2 mean-pool blocks with ``width`` and ``2*width``
    channels (default 16/32), then a linear head.
    """
    if arch not in ARCHS:
        raise ValueError(f"unsupported architecture {arch!r}; expected one of {ARCHS}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    dims = (int(input_dims),) if np.isscalar(input_dims) else tuple(int(d) for d in input_dims)
    rng = np.random.default_rng(seed)
    entries: dict[str, Tensor] = {}

    def param(name, arr):
        entries[name] = Tensor(arr, requires_grad=True)

    if arch == "mlp":
        width = 64 if width is None else int(width)
        sizes = [int(np.prod(dims)), width, width, num_classes]
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            param(f"fc{i}.weight", _kaiming_uniform(rng, (fi, fo), fi))
            param(f"fc{i}.bias", np.zeros(fo))
    else:
        if len(dims) != 3:
            raise ValueError(f"small_cnn expects input_dims (C, H, W), got {dims}")
        c, h, w = dims
        if h < 4 or w < 4:
            raise ValueError(f"small_cnn needs H, W >= 4, got {h}x{w}")
        width = 16 if width is None else int(width)
        c1, c2 = width, 2 * width
        param("conv1.weight", _kaiming_uniform(rng, (c1, c, 3, 3), c * 9))
        param("conv1.bias", np.zeros(c1))
        param("conv2.weight", _kaiming_uniform(rng, (c2, c1, 3, 3), c1 * 9))
        param("conv2.bias", np.zeros(c2))
        flat = c2 * (h // 2 // 2) * (w // 2 // 2)
        param("fc.weight", _kaiming_uniform(rng, (flat, num_classes), flat))
        param("fc.bias", np.zeros(num_classes))
    return ModelParams(arch, entries)


def forward(model: ModelParams, x) -> Tensor:
    """Logits of shape (batch, K)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    p = model.entries
    if model.arch == "mlp":
        h = ad.reshape(x, (x.shape[0], -1))
        w1 = p["fc1.weight"]
        if h.shape[1] != w1.shape[0]:
            raise ad.ShapeError("forward", x.shape, w1.shape)
        n_layers = sum(1 for k in p if k.endswith(".weight"))
        for i in range(1, n_layers + 1):
            h = ad.add(ad.matmul(h, p[f"fc{i}.weight"]), p[f"fc{i}.bias"])
            if i < n_layers:
                h = ad.relu(h)
        return h
    if x.data.ndim != 4 or x.shape[1] != p["conv1.weight"].shape[1]:
        raise ad.ShapeError("forward", x.shape, p["conv1.weight"].shape)
    h = ad.avg_pool2d(ad.relu(ad.conv2d(x, p["conv1.weight"], p["conv1.bias"], padding=1)))
    h = ad.avg_pool2d(ad.relu(ad.conv2d(h, p["conv2.weight"], p["conv2.bias"], padding=1)))
    h = ad.reshape(h, (h.shape[0], -1))
    if h.shape[1] != p["fc.weight"].shape[0]:
        raise ad.ShapeError("forward", x.shape, p["fc.weight"].shape)
    return ad.add(ad.matmul(h, p["fc.weight"]), p["fc.bias"])


def predict(model: ModelParams, x: np.ndarray) -> np.ndarray:
    return forward(model.frozen(), x).data.argmax(axis=1)


@dataclass
class SGD:
    """SGD with heavy-ball momentum and L2 weight decay folded into the buffer."""

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def step(self, model: ModelParams) -> None:
        missing = [k for k, t in model.entries.items() if t.grad is None]
        if missing:
            raise ValueError(f"missing gradient for parameter(s): {', '.join(missing)}")
        for name, t in model.entries.items():
            buf = self.buffers.get(name)
            if buf is None:
                buf = np.zeros_like(t.data)
            d = t.grad + self.weight_decay * t.data if self.weight_decay else t.grad
            buf = self.momentum * buf + d
            self.buffers[name] = buf
            t.data = t.data - self.lr * buf
            t.grad = None


# -- checkpoints --------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps(model: ModelParams) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    buf.write(_pack_str(model.arch))
    buf.write(struct.pack("<I", len(model.entries)))
    for name, t in model.entries.items():
        buf.write(_pack_str(name))
        buf.write(struct.pack("<I", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}Q", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(raw: bytes) -> ModelParams:
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("checkpoint truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    def u32():
        return struct.unpack("<I", take(4))[0]

    def string():
        return bytes(take(u32())).decode("utf-8")

    if bytes(take(8)) != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version = u32()
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = string()
    entries = {}
    for _ in range(u32()):
        name = string()
        rank = u32()
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        entries[name] = Tensor(data, requires_grad=True)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return ModelParams(arch, entries)


def save(model: ModelParams, path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path) -> ModelParams:
    return loads(Path(path).read_bytes())
