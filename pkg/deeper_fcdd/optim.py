"""Define the Adam optimizer over named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from deeper_fcdd.const import (
    DEFAULT_ADAM_EPSILON,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_LR,
)
from deeper_fcdd.errors import RejectedInputError

Params = dict[str, np.ndarray]


@dataclass
class AdamState:
    """Define the moment accumulators and hyperparameters of Adam."""

    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_ADAM_EPSILON
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, **hyper: Any) -> "AdamState":
        """Create a zeroed state shaped like the given parameters."""
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
            **hyper,
        )

    def hyper(self) -> dict[str, Any]:
        """Return the scalar part of the state."""
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step": self.step,
        }


def _check_shapes(params: Params, grads: Params, state: AdamState) -> None:
    """Raise if parameters, gradients and moments disagree."""
    if set(params) != set(grads):
        raise RejectedInputError(
            f"Gradient names {sorted(grads)} != parameter names {sorted(params)}"
        )
    for name, value in params.items():
        for label, other in (
            ("gradient", grads[name]),
            ("first moment", state.m.get(name)),
            ("second moment", state.v.get(name)),
        ):
            if other is None or other.shape != value.shape:
                got = None if other is None else other.shape
                raise RejectedInputError(
                    f"{label} dims {got} != parameter '{name}' dims {value.shape}"
                )


def adam_step(
    params: Params, grads: Params, state: AdamState
) -> tuple[Params, AdamState]:
    """Return parameters and state after one bias-corrected Adam update."""
    if state.step < 0:
        raise RejectedInputError(f"Adam step must be >= 0, got {state.step}")
    _check_shapes(params, grads, state)

    step = state.step + 1
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step

    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for name, value in params.items():
        grad = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (grad * grad)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v

    return new_params, AdamState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        step=step,
        m=new_m,
        v=new_v,
    )
