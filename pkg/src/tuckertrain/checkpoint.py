"""Binary checkpoint format "TKTR" version 1.

Little-endian throughout; parameters and buffers are float32.  The file
fully describes the architecture (layer kinds plus structural config), so
a decomposed model round-trips with its chain layers intact and loading
never consults the original model id.

Layout:
    magic "TKTR" | version u32 | epoch u32
    rng state: PCG64 state/inc as 16-byte LE ints, has_uint32 u32, uinteger u32
    model name (str16) | input shape 3 x u32 | layer count u32
    per layer: name str16 | kind str16 | config count u32 + i64 values
               | param section | buffer section
    optimizer buffer count u32, each: layer str16 | param str16 | tensor
Tensor encoding: ndim u32, dims u32 each, float32 data.  Strings are
u16 length + utf-8 bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .nn.layers import AvgPool2d, BatchNorm2d, Conv2d, Layer, Linear, MaxPool2d, ReLU
from .nn.model import Model
from .tucker import ConvSpec

MAGIC = b"TKTR"
VERSION = 1


@dataclass
class Checkpoint:
    model: Model
    epoch: int
    rng: np.random.Generator
    velocity: dict[tuple[str, str], np.ndarray]


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_tensor(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f4")
    head = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def _pack_rng(rng: np.random.Generator) -> bytes:
    state = rng.bit_generator.state
    if state.get("bit_generator") != "PCG64":
        raise FormatError(f"only PCG64 rng state is supported, got {state.get('bit_generator')}")
    inner = state["state"]
    return (
        int(inner["state"]).to_bytes(16, "little")
        + int(inner["inc"]).to_bytes(16, "little")
        + struct.pack("<II", int(state["has_uint32"]), int(state["uinteger"]))
    )


def save_checkpoint(path: str, model: Model, epoch: int, rng: np.random.Generator,
                    velocity: dict[tuple[str, str], np.ndarray] | None = None) -> None:
    velocity = velocity or {}
    parts = [MAGIC, struct.pack("<II", VERSION, epoch), _pack_rng(rng)]
    parts.append(_pack_str(model.name))
    parts.append(struct.pack("<3I", *model.input_shape))
    parts.append(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        parts.append(_pack_str(layer.name))
        parts.append(_pack_str(layer.kind))
        cfg = layer.config()
        parts.append(struct.pack("<I", len(cfg)) + struct.pack(f"<{len(cfg)}q", *cfg))
        for section in (layer.params, layer.buffers):
            parts.append(struct.pack("<I", len(section)))
            for name, tensor in section.items():
                parts.append(_pack_str(name))
                parts.append(_pack_tensor(tensor))
    parts.append(struct.pack("<I", len(velocity)))
    for (lname, pname), tensor in velocity.items():
        parts.append(_pack_str(lname))
        parts.append(_pack_str(pname))
        parts.append(_pack_tensor(tensor))
    try:
        with open(path, "wb") as f:
            f.write(b"".join(parts))
    except OSError as e:
        raise FormatError(f"cannot write checkpoint {path}: {e}") from e


class _Reader:
    def __init__(self, path: str):
        self.path = path
        try:
            with open(path, "rb") as f:
                self.buf = f.read()
        except OSError as e:
            raise FormatError(f"cannot read checkpoint {path}: {e}") from e
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        n = struct.unpack("<H", self.take(2))[0]
        return self.take(n).decode("utf-8")

    def tensor(self) -> np.ndarray:
        ndim = self.u32()
        dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4")
        return data.reshape(dims).copy()

    def config(self) -> tuple:
        n = self.u32()
        return struct.unpack(f"<{n}q", self.take(8 * n))


def _build_layer(name: str, kind: str, cfg: tuple) -> Layer:
    if kind == "conv":
        if len(cfg) != 7:
            raise FormatError(f"conv layer {name}: bad config {cfg}")
        spec = ConvSpec(
            c_in=cfg[0], c_out=cfg[1], kh=cfg[2], kw=cfg[3],
            stride=cfg[4], padding=cfg[5], has_bias=bool(cfg[6]),
        )
        return Conv2d(name, spec)
    if kind == "batchnorm":
        return BatchNorm2d(name, cfg[0])
    if kind == "relu":
        return ReLU(name)
    if kind == "maxpool":
        return MaxPool2d(name)
    if kind == "avgpool":
        return AvgPool2d(name)
    if kind == "linear":
        return Linear(name, cfg[0], cfg[1])
    raise FormatError(f"unknown layer kind {kind!r}")


def load_checkpoint(path: str) -> Checkpoint:
    r = _Reader(path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a TKTR checkpoint")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    epoch = r.u32()
    rng_state = int.from_bytes(r.take(16), "little")
    rng_inc = int.from_bytes(r.take(16), "little")
    has_uint32, uinteger = struct.unpack("<II", r.take(8))
    model_name = r.string()
    input_shape = struct.unpack("<3I", r.take(12))
    layers = []
    for _ in range(r.u32()):
        name = r.string()
        kind = r.string()
        layer = _build_layer(name, kind, r.config())
        for section in (layer.params, layer.buffers):
            for _ in range(r.u32()):
                tname = r.string()
                tensor = r.tensor()
                if tname not in section or section[tname].shape != tensor.shape:
                    raise FormatError(f"{path}: unexpected tensor {name}/{tname}")
                section[tname] = tensor
        layers.append(layer)
    velocity = {}
    for _ in range(r.u32()):
        lname = r.string()
        pname = r.string()
        velocity[(lname, pname)] = r.tensor()
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": rng_state, "inc": rng_inc},
        "has_uint32": int(has_uint32),
        "uinteger": int(uinteger),
    }
    model = Model(layers, input_shape, name=model_name)
    return Checkpoint(model=model, epoch=epoch, rng=rng, velocity=velocity)
