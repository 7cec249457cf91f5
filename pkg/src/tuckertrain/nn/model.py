"""Sequential model container, graph surgery, and the two desk models.

Surgery means swapping one conv for its three-conv Tucker chain and the
inverse merge.  Both directions check that the replacement preserves the
activation shapes end to end before touching the layer list; everything
not named is left byte-identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import GraphError, ShapeError
from ..tucker import ConvSpec, TuckerFactors, reconstruct_conv
from .layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    softmax_cross_entropy,
)

CHAIN_SUFFIXES = (".first", ".core", ".last")


class Model:
    """Ordered layer stack ending in a linear head; the loss is softmax
    cross-entropy over the head's logits."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], name: str = "model"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.name = name
        self.threads = 1
        self._executor = None
        self._validate()

    def _validate(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise GraphError("layer names must be unique")
        if not self.layers or self.layers[-1].kind != "linear":
            raise GraphError("model must end in a linear classifier head")
        self.shape_trace()

    def shape_trace(self) -> list[tuple]:
        """Per-layer output shapes from the declared input shape."""
        shape = self.input_shape
        trace = []
        for layer in self.layers:
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise GraphError(f"shape break at {layer.name}: {e}") from e
            trace.append(shape)
        return trace

    def set_threads(self, threads: int):
        """Worker threads for the chunked conv paths.  The chunking itself
        is fixed, so results do not depend on this number."""
        self.threads = max(1, int(threads))
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.threads)
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                layer.executor = self._executor

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def train_step_grads(self, x: np.ndarray, labels: np.ndarray) -> float:
        """Forward in training mode, backprop the cross-entropy; gradients
        land in each layer's grads dict.  Returns the batch loss."""
        logits = self.forward(x, training=True)
        loss, grad = softmax_cross_entropy(logits, labels)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss

    def parameter_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def flops_estimate(self) -> int:
        """Per-sample forward FLOPs for the current architecture."""
        shape = self.input_shape
        total = 0
        for layer in self.layers:
            total += layer.flops(shape)
            shape = layer.out_shape(shape)
        return total

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise GraphError(f"no layer named {name!r}")

    def conv_layers(self) -> list[Conv2d]:
        return [l for l in self.layers if isinstance(l, Conv2d)]

    def replace(self, name: str, replacement: list[Layer]) -> None:
        """Swap one layer for a list of layers with identical end-to-end
        shape behavior.  Parameters of every other layer are untouched."""
        if not replacement:
            raise GraphError("replacement must contain at least one layer")
        idx = self.layer_index(name)
        trace = self.shape_trace()
        in_shape = self.input_shape if idx == 0 else trace[idx - 1]
        out_shape = trace[idx]
        shape = in_shape
        for layer in replacement:
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise GraphError(f"replacement breaks shapes at {layer.name}: {e}") from e
        if shape != out_shape:
            raise GraphError(
                f"replacement maps {in_shape} to {shape}, original gave {out_shape}"
            )
        new_names = [l.name for l in replacement]
        existing = {l.name for l in self.layers} - {name}
        if len(set(new_names)) != len(new_names) or existing & set(new_names):
            raise GraphError(f"replacement names collide: {new_names}")
        self.layers[idx : idx + 1] = replacement
        if self._executor is not None:
            for layer in replacement:
                if isinstance(layer, Conv2d):
                    layer.executor = self._executor

    def chains(self) -> list[list[str]]:
        """Name triples of decomposed convolutions, in layer order."""
        found = []
        for i in range(len(self.layers) - 2):
            names = [self.layers[i + j].name for j in range(3)]
            bases = {n.rsplit(".", 1)[0] for n in names}
            suffixes = tuple("." + n.rsplit(".", 1)[1] for n in names if "." in n)
            if len(bases) == 1 and suffixes == CHAIN_SUFFIXES:
                found.append(names)
        return found

    def merge_chain(self, chain_names: list[str]) -> str:
        """Contract a three-conv chain back into one conv, in place.

        Returns the merged layer's name (the chain's common base name).
        """
        if len(chain_names) != 3:
            raise GraphError(f"a chain has exactly 3 layers, got {len(chain_names)}")
        idx = self.layer_index(chain_names[0])
        layers = self.layers[idx : idx + 3]
        if [l.name for l in layers] != list(chain_names):
            raise GraphError(f"{chain_names} are not consecutive layers")
        if any(not isinstance(l, Conv2d) for l in layers):
            raise GraphError(f"{chain_names} is not a conv chain")
        first, core, last = layers
        base = chain_names[1].rsplit(".", 1)[0]
        spec = ConvSpec(
            c_in=first.spec.c_in,
            c_out=last.spec.c_out,
            kh=core.spec.kh,
            kw=core.spec.kw,
            stride=core.spec.stride,
            padding=core.spec.padding,
            has_bias=last.spec.has_bias,
        )
        factors = TuckerFactors(
            first=first.params["weight"],
            core=core.params["weight"],
            last=last.params["weight"],
            bias=last.params.get("bias"),
        )
        weight, bias = reconstruct_conv(factors, spec)
        merged = Conv2d.from_weights(base, spec, weight, bias)
        self.layers[idx : idx + 3] = [merged]
        if self._executor is not None:
            merged.executor = self._executor
        self.shape_trace()
        return base


def chain_layers(base_name: str, spec: ConvSpec, factors: TuckerFactors) -> list[Conv2d]:
    """Build the three conv layers realizing a TuckerFactors chain.

    The 1x1 reduction and expansion run at stride 1 without padding; the
    core carries the original stride and padding, and the bias rides on
    the expansion.
    """
    ranks = factors.ranks
    first_spec = ConvSpec(c_in=spec.c_in, c_out=ranks.k1, kh=1, kw=1, has_bias=False)
    core_spec = ConvSpec(
        c_in=ranks.k1,
        c_out=ranks.k2,
        kh=spec.kh,
        kw=spec.kw,
        stride=spec.stride,
        padding=spec.padding,
        has_bias=False,
    )
    last_spec = ConvSpec(c_in=ranks.k2, c_out=spec.c_out, kh=1, kw=1, has_bias=spec.has_bias)
    return [
        Conv2d.from_weights(base_name + ".first", first_spec, factors.first),
        Conv2d.from_weights(base_name + ".core", core_spec, factors.core),
        Conv2d.from_weights(base_name + ".last", last_spec, factors.last, factors.bias),
    ]


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray, batch: int = 256) -> float:
    """Top-1 accuracy in inference mode (batchnorm uses running stats)."""
    if images.shape[0] != labels.shape[0]:
        raise ShapeError(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    correct = 0
    for i in range(0, images.shape[0], batch):
        logits = model.forward(images[i : i + batch], training=False)
        correct += int(np.sum(logits.argmax(axis=1) == labels[i : i + batch]))
    return correct / images.shape[0]


def predict_logits(model: Model, images: np.ndarray, batch: int = 256) -> np.ndarray:
    chunks = [
        model.forward(images[i : i + batch], training=False)
        for i in range(0, images.shape[0], batch)
    ]
    return np.concatenate(chunks, axis=0)


def _conv_block(name, c_in, c_out, rng, stride=1):
    spec = ConvSpec(c_in=c_in, c_out=c_out, kh=3, kw=3, stride=stride, padding=1)
    return [
        Conv2d(name, spec, rng=rng),
        BatchNorm2d("bn_" + name, c_out),
        ReLU("relu_" + name),
    ]


def build_vgg_mini(rng, in_channels=3, num_classes=10, input_hw=(32, 32)) -> Model:
    """Six 3x3 conv blocks (64,64,128,128,256,256) with BN + ReLU and a
    max-pool after blocks 2, 4, and 6, then a linear head."""
    layers = []
    widths = [64, 64, 128, 128, 256, 256]
    c = in_channels
    for i, width in enumerate(widths, start=1):
        layers += _conv_block(f"conv{i}", c, width, rng)
        if i % 2 == 0:
            layers.append(MaxPool2d(f"pool{i // 2}"))
        c = width
    h, w = input_hw[0] // 8, input_hw[1] // 8
    layers.append(Linear("fc", c * h * w, num_classes, rng=rng))
    return Model(layers, (in_channels,) + tuple(input_hw), name="vgg-mini")


def build_convnet_small(rng, in_channels=1, num_classes=10, input_hw=(28, 28)) -> Model:
    """Three conv blocks for MNIST-sized inputs."""
    layers = []
    widths = [32, 64, 64]
    c = in_channels
    hw = list(input_hw)
    for i, width in enumerate(widths, start=1):
        layers += _conv_block(f"conv{i}", c, width, rng)
        layers.append(MaxPool2d(f"pool{i}"))
        hw = [hw[0] // 2, hw[1] // 2]
        c = width
    layers.append(Linear("fc", c * hw[0] * hw[1], num_classes, rng=rng))
    return Model(layers, (in_channels,) + tuple(input_hw), name="convnet-small")


MODEL_BUILDERS = {
    "vgg-mini": build_vgg_mini,
    "convnet-small": build_convnet_small,
}
