"""Activation maximization over single neurons, with and without semantic regularization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ascent import AscentConfig, gradient_ascent
from .metrics import last_conv_distribution
from .network import Network, Objective

__all__ = ["AscentConfig", "AMResult", "activation_maximization", "maximize_last_conv",
           "last_conv_distribution"]


@dataclass
class AMResult:
    pattern: np.ndarray
    mean_activation: float
    history: list


def _initial_pattern(shape, box, seed, dtype):
    rng = np.random.default_rng(seed)
    lo, hi = box if box is not None else (-1.0, 1.0)
    u = rng.random(shape)
    return (lo + (hi - lo) * (0.25 + 0.5 * u)).astype(dtype)


def activation_maximization(net: Network, neuron, config: AscentConfig, seed=0) -> AMResult:
    """Gradient-ascend the input to maximize the spatial-mean activation of ``neuron``.

    ``neuron`` is an :class:`Objective` or a ``(layer, channel)`` pair. The
    start point is seeded uniform noise over the middle half of the value box.
    """
    objective = neuron if isinstance(neuron, Objective) else Objective(*neuron)
    objective.check(net)
    x0 = _initial_pattern(net.input_shape, config.value_box, seed, net.dtype)
    res = gradient_ascent(net, x0, objective, config)
    return AMResult(res.x, res.history[-1], res.history)


def maximize_last_conv(net: Network, config: AscentConfig, seed=0, channels=None):
    """Run AM on every (or the listed) last-conv channel.

    Returns ``(results, aggregate)`` where aggregate is the mean achieved
    activation over the optimized channels. Channel ``k`` uses seed ``seed + k``.
    """
    k_total = net.last_conv_shape[0]
    channels = range(k_total) if channels is None else channels
    results = {k: activation_maximization(net, Objective.last_conv(net, k), config, seed + k)
               for k in channels}
    aggregate = float(np.mean([r.mean_activation for r in results.values()]))
    return results, aggregate


def regularization_contrast(net: Network, config: AscentConfig, seed=0, channels=None):
    """Achieved activations without vs. with semantic regularization (same seeds and steps)."""
    plain, plain_mean = maximize_last_conv(net, replace(config, regularization="none"), seed, channels)
    sem, sem_mean = maximize_last_conv(net, replace(config, regularization="semantic"), seed, channels)
    per_channel = {k: (plain[k].mean_activation, sem[k].mean_activation) for k in plain}
    return per_channel, plain_mean, sem_mean
