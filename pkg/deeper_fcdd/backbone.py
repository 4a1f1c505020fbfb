"""Define configurable fully convolutional backbones."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, replace
from functools import cached_property
import threading
from typing import Any, Iterator, Optional, Sequence, Union

import numpy as np

from deeper_fcdd.const import DEFAULT_INPUT_SIZE, LOGGER
from deeper_fcdd.errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    RejectedInputError,
    SpecError,
)
from deeper_fcdd.model.geometry import FieldGeometry
from deeper_fcdd.numerics import (
    KIND_CONV2D,
    KIND_LEAKY_RELU,
    ForwardContext,
    LayerParams,
    LayerSpec,
    Tensor4,
    backward,
    check_tensor4,
    forward_layer,
)


def _conv(out_channels: int, kernel_size: int = 3, padding: int = 1) -> dict:
    return {
        "kind": KIND_CONV2D,
        "out_channels": out_channels,
        "kernel_size": kernel_size,
        "stride": 1,
        "padding": padding,
    }


_RELU = {"kind": KIND_LEAKY_RELU}
_POOL = {"kind": "max_pool2d", "kernel_size": 2, "stride": 2}


def _blocks(widths: Sequence[int], convs_per_block: int = 1) -> list[dict]:
    layers: list[dict] = []
    for width in widths:
        for _ in range(convs_per_block):
            layers.extend([_conv(width), _RELU])
        layers.append(_POOL)
    return layers


# The final 1x1 projection is appended by BackboneSpec.from_dict.
BACKBONE_PRESETS: dict[str, dict[str, Any]] = {
    "cnn-desk": {"input_size": [224, 224], "layers": _blocks((16, 32, 64))},
    "cnn-desk-small": {"input_size": [64, 64], "layers": _blocks((8, 16, 32))},
    "cnn-deep": {"input_size": [224, 224], "layers": _blocks((16, 32, 64), 2)},
}


@dataclass(frozen=True)
class BackboneSpec:
    """Define an ordered layer chain ending in a 1x1 score projection."""

    name: str
    layers: tuple[LayerSpec, ...]
    input_size: tuple[int, int] = DEFAULT_INPUT_SIZE
    out_channels: int = 1
    in_channels: int = 3

    def __post_init__(self) -> None:
        """Shape-check the whole chain."""
        self.shapes()

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], *, leaky_alpha: Optional[float] = None
    ) -> "BackboneSpec":
        """Create a spec from an inline config block.

        When ``projection`` is absent or true, the final 1x1 projection is appended
        from ``out_channels``; ``leaky_alpha`` overrides every leaky_relu slope.
        """
        unknown = set(data) - {
            "name",
            "layers",
            "input_size",
            "out_channels",
            "in_channels",
            "projection",
        }
        if unknown:
            raise SpecError(f"Unknown backbone keys: {sorted(unknown)}")

        out_channels = int(data.get("out_channels", 1))
        raw_layers = list(data.get("layers", []))
        if data.get("projection", True):
            raw_layers.append(_conv(out_channels, kernel_size=1, padding=0))

        layers = []
        for index, raw in enumerate(raw_layers):
            try:
                layer = LayerSpec.from_dict(raw)
                if layer.kind == KIND_LEAKY_RELU and leaky_alpha is not None:
                    layer = replace(layer, alpha=leaky_alpha)
            except SpecError as err:
                raise SpecError(str(err), layer_index=index) from err
            layers.append(layer)

        return cls(
            name=data.get("name", "inline"),
            layers=tuple(layers),
            input_size=tuple(data.get("input_size", DEFAULT_INPUT_SIZE)),
            out_channels=out_channels,
            in_channels=int(data.get("in_channels", 3)),
        )

    @classmethod
    def from_config(
        cls,
        value: Union[str, dict[str, Any]],
        *,
        input_size: Optional[Sequence[int]] = None,
        in_channels: Optional[int] = None,
        leaky_alpha: Optional[float] = None,
    ) -> "BackboneSpec":
        """Create a spec from a preset name or an inline block."""
        if isinstance(value, str):
            if value not in BACKBONE_PRESETS:
                choices = sorted(BACKBONE_PRESETS)
                raise ConfigError(
                    f"Unknown backbone '{value}'; choose from {choices}"
                )
            data = {"name": value, **BACKBONE_PRESETS[value]}
        else:
            data = dict(value)
        if input_size is not None:
            data["input_size"] = list(input_size)
        if in_channels is not None:
            data["in_channels"] = in_channels
        return cls.from_dict(data, leaky_alpha=leaky_alpha)

    def as_dict(self) -> dict[str, Any]:
        """Return the inline config block, projection included."""
        return {
            "name": self.name,
            "input_size": list(self.input_size),
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "projection": False,
            "layers": [layer.as_dict() for layer in self.layers],
        }

    def shapes(self) -> list[tuple[int, int, int]]:
        """Return the (c, h, w) after every layer, input first.

        Raises SpecError naming the first layer whose output is empty or whose final
        projection is malformed.
        """
        if not self.layers:
            raise SpecError("Backbone has no layers")
        height, width = self.input_size
        if height < 1 or width < 1 or self.in_channels < 1:
            raise SpecError(f"Invalid input size {self.input_size}")

        shapes = [(self.in_channels, height, width)]
        for index, layer in enumerate(self.layers):
            shape = layer.output_shape(*shapes[-1])
            if shape[1] < 1 or shape[2] < 1:
                raise SpecError(
                    f"{layer.kind} maps {shapes[-1]} to empty dims {shape}",
                    layer_index=index,
                )
            shapes.append(shape)

        last = self.layers[-1]
        if (
            last.kind != KIND_CONV2D
            or last.kernel_size != 1
            or last.stride != 1
            or last.padding != 0
            or last.out_channels != self.out_channels
        ):
            raise SpecError(
                f"Final layer must be a 1x1 conv with {self.out_channels} channels",
                layer_index=len(self.layers) - 1,
            )
        return shapes

    @property
    def out_dims(self) -> tuple[int, int]:
        """Return the spatial dims (u, v) of the score map."""
        _, height, width = self.shapes()[-1]
        return height, width


def receptive_field(spec: BackboneSpec) -> FieldGeometry:
    """Return the receptive-field geometry of every output cell of a spec."""
    jump = 1
    extent = 1
    start = 0.0
    for layer in spec.layers:
        if layer.kind == KIND_LEAKY_RELU:
            continue
        k, s, p = layer.kernel_size, layer.stride, layer.padding
        extent += (k - 1) * jump
        start += ((k - 1) / 2 - p) * jump
        jump *= s

    return FieldGeometry(
        jump=(jump, jump),
        extent=(extent, extent),
        start=(start, start),
        out_dims=spec.out_dims,
        in_dims=tuple(spec.input_size),
    )


class Backbone:
    """Define a built network: a spec plus its trainable parameters."""

    def __init__(self, spec: BackboneSpec, layers: list[LayerParams]) -> None:
        """Initialize."""
        self.spec = spec
        self.layers = layers
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        """Return the representation."""
        return (
            f"<{type(self).__name__} name={self.spec.name} "
            f"out_dims={self.spec.out_dims}>"
        )

    @cached_property
    def geometry(self) -> FieldGeometry:
        """Return the receptive-field geometry."""
        return receptive_field(self.spec)

    @property
    def dtype(self) -> np.dtype:
        """Return the parameter precision."""
        weights = (layer.weight for layer in self.layers if layer.weight is not None)
        return next(weights).dtype

    def parameters(self) -> dict[str, np.ndarray]:
        """Return the trainable arrays keyed ``layers.<index>.<weight|bias>``."""
        params: dict[str, np.ndarray] = {}
        for index, layer in enumerate(self.layers):
            if layer.weight is not None:
                params[f"layers.{index}.weight"] = layer.weight
                params[f"layers.{index}.bias"] = layer.bias
        return params

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        """Replace trainable arrays; names and dims must match."""
        current = self.parameters()
        if set(params) != set(current):
            raise RejectedInputError(
                f"Parameter names {sorted(params)} != {sorted(current)}"
            )
        for name, value in params.items():
            if np.shape(value) != current[name].shape:
                raise RejectedInputError(
                    f"Parameter '{name}' dims {np.shape(value)} "
                    f"!= {current[name].shape}"
                )
            _, index, kind = name.split(".")
            setattr(
                self.layers[int(index)],
                kind,
                np.array(value, dtype=current[name].dtype),
            )

    def _check_batch(self, batch: Tensor4) -> Tensor4:
        batch = check_tensor4(batch, "batch")
        expected = (self.spec.in_channels, *self.spec.input_size)
        if batch.shape[1:] != expected:
            raise RejectedInputError(
                f"Batch dims {batch.shape} do not match (n, {expected[0]}, "
                f"{expected[1]}, {expected[2]})"
            )
        return batch

    def forward(self, batch: Tensor4) -> Tensor4:
        """Return the n x C x u x v score map."""
        out, _ = self.forward_with_context(batch)
        return out

    def forward_with_context(
        self, batch: Tensor4
    ) -> tuple[Tensor4, list[ForwardContext]]:
        """Return the score map and the per-layer contexts backward needs."""
        out = self._check_batch(batch).astype(self.dtype, copy=False)
        contexts = []
        for layer in self.layers:
            out, context = forward_layer(out, layer)
            contexts.append(context)
        return out, contexts

    def backward(
        self, contexts: list[ForwardContext], upstream: Tensor4
    ) -> tuple[Tensor4, dict[str, np.ndarray]]:
        """Return the input gradient and every parameter gradient."""
        if len(contexts) != len(self.layers):
            raise ContractViolation(
                f"Got {len(contexts)} forward contexts for {len(self.layers)} layers"
            )
        grads: dict[str, np.ndarray] = {}
        grad = upstream
        for index in reversed(range(len(self.layers))):
            grad, layer_grads = backward(self.layers[index], contexts[index], grad)
            for kind, value in layer_grads.items():
                grads[f"layers.{index}.{kind}"] = value
        return grad, grads

    @contextmanager
    def exclusive(self) -> Iterator["Backbone"]:
        """Hold the backbone for a training run; a second holder is rejected."""
        if not self._lock.acquire(blocking=False):
            raise ContractViolation(f"{self!r} is already being trained")
        try:
            yield self
        finally:
            self._lock.release()

    def to_blobs(self) -> dict[str, np.ndarray]:
        """Return float64 copies of every parameter."""
        return {
            name: np.array(value, dtype=np.float64)
            for name, value in self.parameters().items()
        }

    @classmethod
    def from_blobs(
        cls,
        spec: BackboneSpec,
        blobs: dict[str, np.ndarray],
        dtype: Union[str, np.dtype] = np.float64,
    ) -> "Backbone":
        """Create a backbone from stored parameters of a matching spec."""
        backbone = build(spec, seed=0, dtype=dtype)
        names = set(backbone.parameters())
        missing = names - set(blobs)
        if missing:
            raise CheckpointError(f"Checkpoint lacks parameters {sorted(missing)}")
        try:
            backbone.set_parameters({name: blobs[name] for name in names})
        except RejectedInputError as err:
            raise CheckpointError(f"Checkpoint does not fit spec: {err}") from err
        return backbone


def build(
    spec: BackboneSpec, seed: int, dtype: Union[str, np.dtype] = np.float64
) -> Backbone:
    """Build a backbone with He-uniform kernels and zero biases drawn from a seed.

    The final 1x1 projection draws from the non-negative half of its range, so a
    fresh map already reads as the activation energy of each cell.
    """
    shapes = spec.shapes()
    rng = np.random.default_rng(seed)
    layers = []
    for index, layer in enumerate(spec.layers):
        in_channels = shapes[index][0]
        if layer.kind != KIND_CONV2D:
            layers.append(LayerParams(layer, in_channels))
            continue
        k = layer.kernel_size
        bound = np.sqrt(6.0 / (in_channels * k * k))
        shape = (layer.out_channels, in_channels, k, k)
        low = 0.0 if index == len(spec.layers) - 1 else -bound
        weight = rng.uniform(low, bound, size=shape)
        layers.append(
            LayerParams(
                layer,
                in_channels,
                weight=weight.astype(dtype),
                bias=np.zeros(layer.out_channels, dtype=dtype),
            )
        )

    LOGGER.debug(
        "Built backbone %s: %d layers, out dims %s",
        spec.name,
        len(layers),
        spec.out_dims,
    )
    return Backbone(spec, layers)
