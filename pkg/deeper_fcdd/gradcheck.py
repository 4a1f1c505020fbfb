"""Define a central finite-difference gradient verifier."""
from __future__ import annotations

from typing import Callable

import numpy as np

from deeper_fcdd.errors import RejectedInputError

Params = dict[str, np.ndarray]
LossFn = Callable[[Params], tuple[float, Params]]


def finite_diff_check(
    loss_fn: LossFn, params: Params, h: float = 1e-5, *, floor: float = 1e-6
) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    ``loss_fn`` maps a parameter dict to ``(loss, analytic_grads)``. Every scalar
    of every parameter is perturbed by ±h; the error of one scalar is
    |analytic − numeric| / max(|analytic| + |numeric|, floor).
    """
    if h <= 0:
        raise RejectedInputError(f"Step h must be > 0, got {h}")

    base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    _, analytic = loss_fn(base)

    worst = 0.0
    for name, value in base.items():
        flat = value.reshape(-1)
        expected = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + h
            loss_plus, _ = loss_fn(base)
            flat[index] = original - h
            loss_minus, _ = loss_fn(base)
            flat[index] = original

            numeric = (loss_plus - loss_minus) / (2.0 * h)
            denominator = max(abs(expected[index]) + abs(numeric), floor)
            worst = max(worst, abs(expected[index] - numeric) / denominator)

    return worst
