"""Fixed-step gradient ascent on the input, with optional semantic regularization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, ObjectiveError
from .network import Network, Objective, objective_and_gradient

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AscentConfig:
    eta: float = 1.0
    steps: int = 256
    regularization: str = "none"  # "none" | "semantic"
    l2_decay: float = 0.05
    blur_every: int = 1
    blur_sigma: float = 1.0
    value_box: tuple[float, float] | None = (0.0, 1.0)

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.regularization not in ("none", "semantic"):
            raise ValueError(f"unknown regularization {self.regularization!r}")
        if self.regularization == "semantic" and self.blur_every < 1:
            raise ValueError("blur_every must be >= 1 with semantic regularization")
        if self.value_box is not None and not self.value_box[0] < self.value_box[1]:
            raise ValueError(f"empty value box {self.value_box}")


@dataclass
class AscentResult:
    x: np.ndarray
    history: list[float]
    warning: bool = False  # final objective below initial


def gaussian_kernel1d(sigma):
    radius = max(1, int(np.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(x, sigma):
    """Separable Gaussian blur over the last two axes, reflect-padded."""
    if sigma <= 0 or x.ndim < 2:
        return x
    k = gaussian_kernel1d(sigma).astype(x.dtype)
    r = len(k) // 2
    out = x
    for axis in (-2, -1):
        n = out.shape[axis]
        if n == 1:
            continue
        pad = [(0, 0)] * out.ndim
        pad[axis] = (min(r, n - 1), min(r, n - 1))
        padded = np.pad(out, pad, mode="reflect")
        if pad[axis][0] < r:  # axis shorter than the kernel: fall back to edge padding
            extra = [(0, 0)] * out.ndim
            extra[axis] = (r - pad[axis][0], r - pad[axis][0])
            padded = np.pad(padded, extra, mode="edge")
        acc = np.zeros_like(out)
        for j, kj in enumerate(k):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(j, j + n)
            acc += kj * padded[tuple(sl)]
        out = acc
    return out


ObjectiveFn = Callable[[np.ndarray], tuple]


def _evaluate(net, objective, x):
    if isinstance(objective, Objective):
        if net is None:
            raise ObjectiveError("a network is required for a layer objective")
        value, grad = objective_and_gradient(net, x, objective, batched=False)
    else:
        value, grad = objective(x)
    value = float(value)
    if not np.isfinite(value) or not np.isfinite(grad).all():
        raise DivergenceError(f"non-finite objective {value}")
    return value, np.asarray(grad)


def gradient_ascent(net: Network | None, x0, objective, config: AscentConfig) -> AscentResult:
    """Iterate ``x <- x + eta * d(objective)/dx`` for ``config.steps`` steps.

    ``objective`` is an :class:`Objective` evaluated through ``net``, or any
    callable ``x -> (value, gradient)``. With semantic regularization each step
    also decays ``x`` toward zero and every ``blur_every`` steps blurs it.
    The history holds the objective at the start of every step plus the final value.
    """
    dtype = np.dtype(net.dtype if net is not None else np.asarray(x0).dtype)
    if not np.issubdtype(dtype, np.floating):
        dtype = np.dtype(np.float64)
    x = np.array(x0, dtype=dtype, copy=True)
    box = config.value_box
    if box is not None:
        x = np.clip(x, *box)
    history = []
    semantic = config.regularization == "semantic"
    for step in range(config.steps):
        value, grad = _evaluate(net, objective, x)
        history.append(value)
        x = x + dtype.type(config.eta) * grad.astype(dtype, copy=False)
        if semantic:
            x = x * (1.0 - config.l2_decay)
            if (step + 1) % config.blur_every == 0:
                x = gaussian_blur(x, config.blur_sigma)
        if box is not None:
            x = np.clip(x, *box)
        x = x.astype(dtype, copy=False)
    final, _ = _evaluate(net, objective, x)
    history.append(final)
    warning = final < history[0]
    if warning:
        logger.warning("gradient ascent ended below its starting objective (%g < %g)",
                       final, history[0])
    return AscentResult(x, history, warning)
