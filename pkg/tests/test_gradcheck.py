"""Define tests for the finite-difference verifier."""
import numpy as np
import pytest

from deeper_fcdd.backbone import BackboneSpec, build
from deeper_fcdd.errors import RejectedInputError
from deeper_fcdd.gradcheck import finite_diff_check
from deeper_fcdd.objective import fcdd_loss_terms, pseudo_huber, pseudo_huber_backward

# No pooling; with positive weights and inputs every activation stays positive,
# so no perturbation crosses a kink.
STRIDED_CONV = {
    "kind": "conv2d",
    "out_channels": 4,
    "kernel_size": 3,
    "stride": 2,
    "padding": 1,
}
STRIDED_BACKBONE = {
    "name": "strided",
    "input_size": [16, 16],
    "layers": [
        STRIDED_CONV,
        {"kind": "leaky_relu"},
        STRIDED_CONV,
        {"kind": "leaky_relu"},
    ],
}


def quadratic(params):
    """Return sum(a * x²) and its gradient."""
    x = params["x"]
    scale = np.arange(1.0, x.size + 1).reshape(x.shape)
    return float(np.sum(scale * x * x)), {"x": 2 * scale * x}


def test_exact_gradient(rng):
    """Test that a correct gradient reports a tiny error."""
    params = {"x": rng.uniform(1.0, 2.0, size=(2, 3))}
    assert finite_diff_check(quadratic, params) < 1e-7


def test_wrong_gradient_is_reported(rng):
    """Test that a scaled gradient is caught."""

    def wrong(params):
        loss, grads = quadratic(params)
        return loss, {"x": 1.1 * grads["x"]}

    assert finite_diff_check(wrong, {"x": rng.normal(size=4) + 3.0}) > 0.04


def test_rejects_bad_step():
    """Test that the step must be positive."""
    with pytest.raises(RejectedInputError):
        finite_diff_check(quadratic, {"x": np.ones(2)}, h=0.0)


def test_composed_loss_gradient(rng):
    """Test backbone, pseudo-Huber map and loss gradients end to end."""
    backbone = build(BackboneSpec.from_dict(STRIDED_BACKBONE), seed=5)
    params = {
        name: np.abs(value) if name.endswith("weight") else np.full_like(value, 0.05)
        for name, value in backbone.parameters().items()
    }
    params["layers.4.weight"] = params["layers.4.weight"] * 0.06
    images = np.concatenate(
        [
            rng.uniform(0.05, 0.3, size=(3, 3, 16, 16)),
            rng.uniform(0.8, 1.0, size=(1, 3, 16, 16)),
        ]
    )
    labels = [0, 0, 0, 1]

    def loss_fn(values):
        backbone.set_parameters(values)
        score_map, contexts = backbone.forward_with_context(images)
        terms = fcdd_loss_terms(pseudo_huber(score_map), labels)
        _, grads = backbone.backward(
            contexts, pseudo_huber_backward(score_map, terms.grad)
        )
        return terms.loss, grads

    assert finite_diff_check(loss_fn, params) < 1e-4
