"""Define dense rank-4 tensor layers with exact analytic gradients.

Every tensor is a numpy array laid out (batch, channel, height, width). Layers are
pure functions over owned data: a forward call returns its output together with a
``ForwardContext`` holding exactly what the matching backward call needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from numpy.typing import NDArray

from deeper_fcdd.const import DEFAULT_LEAKY_ALPHA
from deeper_fcdd.errors import ContractViolation, RejectedInputError, SpecError

Tensor4 = NDArray[np.floating]

KIND_CONV2D = "conv2d"
KIND_LEAKY_RELU = "leaky_relu"
KIND_MAX_POOL2D = "max_pool2d"
LAYER_KINDS = (KIND_CONV2D, KIND_LEAKY_RELU, KIND_MAX_POOL2D)


def check_tensor4(value: Any, name: str = "input") -> Tensor4:
    """Return the value as a rank-4 array or raise."""
    array = np.asarray(value)
    if array.ndim != 4:
        raise RejectedInputError(
            f"{name} must be rank 4 (n, c, h, w), got dims {array.shape}"
        )
    return array


def _output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """Return the output length of a sliding window along one axis."""
    return (size + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class LayerSpec:
    """Define the hyperparameters of one layer in a backbone chain."""

    kind: str
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    out_channels: Optional[int] = None
    alpha: float = DEFAULT_LEAKY_ALPHA

    def __post_init__(self) -> None:
        """Validate the hyperparameters."""
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"Unknown layer kind '{self.kind}'")
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise SpecError(
                f"Invalid window k={self.kernel_size} s={self.stride} p={self.padding}"
            )
        if self.kind == KIND_CONV2D and (
            self.out_channels is None or self.out_channels < 1
        ):
            raise SpecError("conv2d layers need out_channels >= 1")
        if self.kind == KIND_LEAKY_RELU and not 0 <= self.alpha < 1:
            raise SpecError(f"leaky_relu alpha must lie in [0, 1), got {self.alpha}")
        if self.kind == KIND_LEAKY_RELU and (
            self.kernel_size,
            self.stride,
            self.padding,
        ) != (1, 1, 0):
            raise SpecError("leaky_relu is elementwise; it takes no window")
        if self.kind == KIND_MAX_POOL2D and self.padding:
            raise SpecError("max_pool2d does not pad")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LayerSpec":
        """Create an instance from a config block."""
        known = {
            "kind",
            "kernel_size",
            "stride",
            "padding",
            "out_channels",
            "alpha",
        }
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"Unknown layer keys: {sorted(unknown)}")
        kind = data.get("kind")
        kernel_size = data.get("kernel_size", 1)
        return cls(
            kind=kind,
            kernel_size=kernel_size,
            stride=data.get(
                "stride", kernel_size if kind == KIND_MAX_POOL2D else 1
            ),
            padding=data.get("padding", 0),
            out_channels=data.get("out_channels"),
            alpha=data.get("alpha", DEFAULT_LEAKY_ALPHA),
        )

    def as_dict(self) -> dict[str, Any]:
        """Return the config block for this layer."""
        data: dict[str, Any] = {"kind": self.kind}
        if self.kind == KIND_LEAKY_RELU:
            data["alpha"] = self.alpha
            return data
        data.update(
            kernel_size=self.kernel_size, stride=self.stride, padding=self.padding
        )
        if self.kind == KIND_CONV2D:
            data["out_channels"] = self.out_channels
        return data

    def output_shape(
        self, channels: int, height: int, width: int
    ) -> tuple[int, int, int]:
        """Return the (c, h, w) this layer produces from a (c, h, w) input."""
        if self.kind == KIND_LEAKY_RELU:
            return channels, height, width
        out_h = _output_extent(height, self.kernel_size, self.stride, self.padding)
        out_w = _output_extent(width, self.kernel_size, self.stride, self.padding)
        if self.kind == KIND_CONV2D:
            assert self.out_channels is not None
            return self.out_channels, out_h, out_w
        return channels, out_h, out_w


@dataclass
class LayerParams:
    """Define one layer: its hyperparameters plus trainable weights."""

    spec: LayerSpec
    in_channels: int
    weight: Optional[Tensor4] = None
    bias: Optional[NDArray[np.floating]] = None

    def __post_init__(self) -> None:
        """Validate that weight shapes agree with the declared channels."""
        if self.spec.kind != KIND_CONV2D:
            return
        k = self.spec.kernel_size
        expected = (self.spec.out_channels, self.in_channels, k, k)
        if self.weight is None or self.weight.shape != expected:
            got = None if self.weight is None else self.weight.shape
            raise RejectedInputError(f"conv2d weight dims {got} != {expected}")
        if self.bias is None or self.bias.shape != (self.spec.out_channels,):
            got = None if self.bias is None else self.bias.shape
            raise RejectedInputError(
                f"conv2d bias dims {got} != ({self.spec.out_channels},)"
            )

    @property
    def kind(self) -> str:
        """Return the layer kind."""
        return self.spec.kind


@dataclass
class ForwardContext:
    """Define what a backward pass needs from its forward pass."""

    kind: str
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    saved: dict[str, np.ndarray] = field(default_factory=dict)


def _conv2d(x: Tensor4, params: LayerParams) -> tuple[Tensor4, Tensor4]:
    """Return the convolution output and the zero-padded input."""
    x = check_tensor4(x)
    spec = params.spec
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise RejectedInputError(
            f"conv2d expects {params.in_channels} input channels, got dims {x.shape}"
        )
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    out_h = _output_extent(h, k, s, p)
    out_w = _output_extent(w, k, s, p)
    if out_h < 1 or out_w < 1:
        raise RejectedInputError(
            f"conv2d window k={k} s={s} p={p} does not fit input dims {x.shape}"
        )

    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    weight = params.weight
    assert weight is not None and params.bias is not None
    out = np.zeros(
        (n, out_h, out_w, spec.out_channels), dtype=np.result_type(x, weight)
    )

    # Shift-and-accumulate over kernel offsets; the summation order is fixed.
    for i in range(k):
        for j in range(k):
            rows = slice(i, i + s * (out_h - 1) + 1, s)
            cols = slice(j, j + s * (out_w - 1) + 1, s)
            out += np.tensordot(
                padded[:, :, rows, cols], weight[:, :, i, j], axes=([1], [1])
            )

    out = out.transpose(0, 3, 1, 2) + params.bias[None, :, None, None]
    return np.ascontiguousarray(out), padded


def conv2d_forward(x: Tensor4, params: LayerParams) -> Tensor4:
    """Return the cross-correlation of the input with the layer's kernels plus bias."""
    out, _ = _conv2d(x, params)
    return out


def leaky_relu_forward(x: Tensor4, alpha: float = DEFAULT_LEAKY_ALPHA) -> Tensor4:
    """Return x where x >= 0 and alpha * x elsewhere."""
    if not 0 <= alpha < 1:
        raise RejectedInputError(f"alpha must lie in [0, 1), got {alpha}")
    x = np.asarray(x)
    return np.where(x >= 0, x, alpha * x)


def max_pool2d_forward(
    x: Tensor4, k: int, s: int
) -> tuple[Tensor4, NDArray[np.int64]]:
    """Return the per-window maxima and their flat indices in each input plane.

    Ties resolve to the lowest flat index, so the backward routing is deterministic.
    """
    x = check_tensor4(x)
    if k < 1 or s < 1:
        raise RejectedInputError(f"Invalid pooling window k={k} s={s}")
    n, c, h, w = x.shape
    if k > h or k > w:
        raise RejectedInputError(f"Pooling window {k} larger than input dims {x.shape}")
    out_h = _output_extent(h, k, s, 0)
    out_w = _output_extent(w, k, s, 0)

    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::s, ::s].reshape(n, c, out_h, out_w, k * k)
    local = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]

    rows = np.arange(out_h)[:, None] * s + local // k
    cols = np.arange(out_w)[None, :] * s + local % k
    return np.ascontiguousarray(out), rows * w + cols


def forward_layer(x: Tensor4, params: LayerParams) -> tuple[Tensor4, ForwardContext]:
    """Run one layer and return its output with the context for backward."""
    x = check_tensor4(x)
    spec = params.spec

    if spec.kind == KIND_CONV2D:
        out, padded = _conv2d(x, params)
        saved = {"padded": padded}
    elif spec.kind == KIND_LEAKY_RELU:
        out = leaky_relu_forward(x, spec.alpha)
        saved = {"input": x}
    else:
        out, argmax = max_pool2d_forward(x, spec.kernel_size, spec.stride)
        saved = {"argmax": argmax}

    return out, ForwardContext(spec.kind, x.shape, out.shape, saved)


def backward(
    params: LayerParams, context: Optional[ForwardContext], upstream: Tensor4
) -> tuple[Tensor4, dict[str, np.ndarray]]:
    """Return the input gradient and parameter gradients for one layer."""
    if context is None or context.kind != params.kind:
        raise ContractViolation(
            f"backward on {params.kind} needs the context of its forward pass"
        )
    upstream = check_tensor4(upstream, "upstream gradient")
    if upstream.shape != context.output_shape:
        raise RejectedInputError(
            f"Upstream gradient dims {upstream.shape} != forward output dims "
            f"{context.output_shape}"
        )

    if params.kind == KIND_LEAKY_RELU:
        x = context.saved["input"]
        return np.where(x >= 0, upstream, params.spec.alpha * upstream), {}

    if params.kind == KIND_MAX_POOL2D:
        n, c, h, w = context.input_shape
        planes = np.arange(n * c).reshape(n, c, 1, 1) * (h * w)
        flat = (context.saved["argmax"] + planes).ravel()
        grad = np.bincount(flat, weights=upstream.ravel(), minlength=n * c * h * w)
        return grad.reshape(context.input_shape).astype(upstream.dtype, copy=False), {}

    return _conv2d_backward(params, context, upstream)


def _conv2d_backward(
    params: LayerParams, context: ForwardContext, upstream: Tensor4
) -> tuple[Tensor4, dict[str, np.ndarray]]:
    """Return the vector-Jacobian product of a convolution."""
    spec = params.spec
    weight = params.weight
    assert weight is not None
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    padded = context.saved["padded"]
    _, _, out_h, out_w = upstream.shape
    h, w = context.input_shape[2:]

    grad_weight = np.zeros_like(weight, dtype=np.result_type(upstream, padded))
    grad_padded = np.zeros(padded.shape, dtype=np.result_type(upstream, weight))
    for i in range(k):
        for j in range(k):
            rows = slice(i, i + s * (out_h - 1) + 1, s)
            cols = slice(j, j + s * (out_w - 1) + 1, s)
            grad_weight[:, :, i, j] = np.tensordot(
                upstream, padded[:, :, rows, cols], axes=([0, 2, 3], [0, 2, 3])
            )
            grad_padded[:, :, rows, cols] += np.tensordot(
                upstream, weight[:, :, i, j], axes=([1], [0])
            ).transpose(0, 3, 1, 2)

    grad_input = grad_padded[:, :, p : p + h, p : p + w]
    grads = {"weight": grad_weight, "bias": upstream.sum(axis=(0, 2, 3))}
    return np.ascontiguousarray(grad_input), grads
