"""Built-in architectures.

``usps`` and ``fashionmnist`` are the full-size layouts; ``usps-mini``
is a narrow variant for fast runs. The CIFAR-10,
STL-10 and SVHN layouts are provided for completeness but are far too slow
for this pure-numpy engine at full data size.
"""
import numpy as np

from ..errors import ConfigurationError
from ..numerics import BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d, Network, ReLU, Softmax


def _conv_block(cin, cout, padding, pool=False, dropout=None):
    layers = [Conv2d(cin, cout, 3, 1, padding), BatchNorm2d(cout), ReLU()]
    if dropout is not None:
        layers.append(Dropout(dropout))
    if pool:
        layers.append(MaxPool2d(2, 2))
    return layers


def usps(dropout=0.25, classes=10):
    return [
        *_conv_block(1, 32, 1, pool=True),
        *_conv_block(32, 64, 0, pool=True),
        Linear(576, 144),
        Dropout(dropout),
        Linear(144, classes),
        Softmax(),
    ], (1, 16, 16)


def usps_mini(dropout=0.25, classes=10):
    return [
        *_conv_block(1, 16, 1, pool=True),
        *_conv_block(16, 32, 0, pool=True),
        Linear(288, 64),
        Dropout(dropout),
        Linear(64, classes),
        Softmax(),
    ], (1, 16, 16)


def fashionmnist(dropout=0.25, classes=10):
    return [
        *_conv_block(1, 32, 1, pool=True),
        *_conv_block(32, 64, 0, pool=True),
        Linear(2304, 600),
        Dropout(dropout),
        Linear(600, 120),
        Linear(120, classes),
        Softmax(),
    ], (1, 28, 28)


def cifar10(dropout=0.0, classes=10):
    return [
        *_conv_block(3, 128, 1), *_conv_block(128, 128, 1, pool=True),
        *_conv_block(128, 256, 1), *_conv_block(256, 256, 1, pool=True),
        *_conv_block(256, 512, 1), *_conv_block(512, 512, 1, pool=True),
        *_conv_block(512, 1024, 0, pool=True),
        Linear(1024, classes),
        Softmax(),
    ], (3, 32, 32)


def stl10(dropout=0.0, classes=10):
    return [
        *_conv_block(3, 32, 1, pool=True), *_conv_block(32, 64, 1, pool=True),
        *_conv_block(64, 128, 1, pool=True), *_conv_block(128, 128, 1, pool=True),
        *_conv_block(128, 256, 0), *_conv_block(256, 256, 0, pool=True),
        Linear(256, classes),
        Softmax(),
    ], (3, 96, 96)


def svhn(dropout=0.3, classes=10):
    d = dropout
    return [
        *_conv_block(3, 32, 1, dropout=d), *_conv_block(32, 32, 1, pool=True, dropout=d),
        *_conv_block(32, 64, 1, dropout=d), *_conv_block(64, 64, 1, pool=True, dropout=d),
        *_conv_block(64, 128, 1, dropout=d), *_conv_block(128, 128, 1, pool=True, dropout=d),
        *_conv_block(128, 256, 0, pool=True, dropout=d),
        Linear(256, classes),
        Softmax(),
    ], (3, 32, 32)


PRESETS = {
    "usps": usps,
    "usps-mini": usps_mini,
    "fashionmnist": fashionmnist,
    "cifar10": cifar10,
    "stl10": stl10,
    "svhn": svhn,
}
LONG_RUNNING = {"fashionmnist", "cifar10", "stl10", "svhn"}

# hyperparameters per dataset (learning rate, momentum, dropout, thresholds, window, batch)
TRAINING_DEFAULTS = {
    "cifar10": dict(lr=0.01, momentum=0.9, dropout=0.0, g1=2.0, g2=0.99, window=100, batch_size=500),
    "fashionmnist": dict(lr=0.01, momentum=0.9, dropout=0.25, g1=2.0, g2=0.99, window=100, batch_size=100),
    "stl10": dict(lr=0.01, momentum=0.9, dropout=0.0, g1=2.0, g2=0.99, window=4000, batch_size=200),
    "svhn": dict(lr=0.01, momentum=0.9, dropout=0.3, g1=2.0, g2=0.99, window=200, batch_size=200),
    "usps": dict(lr=0.01, momentum=0.9, dropout=0.25, g1=5.0, g2=0.99, window=90, batch_size=60),
}
TRAINING_DEFAULTS["usps-mini"] = TRAINING_DEFAULTS["usps"]


def build(name, seed=0, dropout=None, classes=10, dtype=np.float32, input_shape=None):
    """Instantiate preset ``name``; ``dropout=None`` uses the preset's default."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown architecture {name!r}; choose from {sorted(PRESETS)}") from None
    kwargs = {"classes": classes}
    if dropout is not None:
        kwargs["dropout"] = dropout
    layers, shape = factory(**kwargs)
    if input_shape is not None and tuple(input_shape) != shape:
        raise ConfigurationError(f"{name} expects input {shape}, dataset provides {tuple(input_shape)}")
    return Network(layers, shape, seed=seed, dtype=dtype)
