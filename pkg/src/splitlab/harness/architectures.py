"""Named model families, each a full network plus a default cut index.

``build(name, input_shape, classes, g)`` returns the whole network; the
client is ``layers[:cut]`` and the server the rest. The attack helpers build
the encoder, decoder and discriminator used by the hijacking server.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from splitlab import nn


def _flat(shape) -> int:
    return int(math.prod(shape))


def dense(input_shape, classes, g, width=64):
    return [nn.Flatten(), nn.Dense.init(_flat(input_shape), width, g),
            nn.ReLU(), nn.Dense.init(width, classes, g)]


def conv2(input_shape, classes, g, channels=4, k=3):
    c, h, w = input_shape
    hh, ww = h - 2 * (k - 1), w - 2 * (k - 1)
    return [nn.Conv2d.init(c, channels, k, g), nn.ReLU(), nn.Conv2d.init(channels, channels, k, g),
            nn.Flatten(), nn.ReLU(), nn.Dense.init(channels * hh * ww, classes, g)]


def mlp(input_shape, classes, g, hidden=256, cut_width=128):
    return [nn.Flatten(), nn.Dense.init(_flat(input_shape), hidden, g), nn.ReLU(),
            nn.Dense.init(hidden, cut_width, g), nn.ReLU(), nn.Dense.init(cut_width, classes, g)]


ARCHITECTURES: dict[str, tuple[Callable, int]] = {
    "dense": (dense, 2),
    "conv2": (conv2, 4),
    "mlp": (mlp, 4),
}


def build(name: str, input_shape, classes: int, g: np.random.Generator):
    if name not in ARCHITECTURES:
        raise KeyError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}")
    fn, _ = ARCHITECTURES[name]
    return fn(tuple(input_shape), classes, g)


def default_cut(name: str) -> int:
    return ARCHITECTURES[name][1]


def split(name: str, input_shape, classes: int, g: np.random.Generator, cut: int | None = None):
    """``(client, server)`` networks for architecture ``name`` cut at ``cut``."""
    layers = build(name, input_shape, classes, g)
    cut = default_cut(name) if cut is None else cut
    if not 1 <= cut < len(layers):
        raise ValueError(f"cut {cut} outside 1..{len(layers) - 1} for {name!r}")
    return nn.Network(layers[:cut]), nn.Network(layers[cut:])


def client_factory(name: str, input_shape, classes: int, cut: int | None = None):
    """Builder ``g -> client network``, as a model-inversion attacker would use."""
    return lambda g: split(name, input_shape, classes, g, cut)[0]


def fsha_encoder(input_shape, g, channels=4, k=3):
    c = input_shape[0]
    return nn.Network([nn.Conv2d.init(c, channels, k, g), nn.ReLU(),
                       nn.Conv2d.init(channels, channels, k, g), nn.Flatten()])


def fsha_decoder(width, input_shape, g, hidden=128):
    return nn.Network([nn.Dense.init(width, hidden, g), nn.ReLU(),
                       nn.Dense.init(hidden, _flat(input_shape), g), nn.Sigmoid(),
                       nn.Reshape(tuple(input_shape))])


def fsha_discriminator(width, g, hidden=64):
    return nn.Network([nn.Dense.init(width, hidden, g), nn.ReLU(), nn.Dense.init(hidden, 1, g)])
