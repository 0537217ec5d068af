"""Sequential network container plus the forward and backward passes."""
import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractViolation, NumericError
from .layers import Linear, Softmax, make_layer


class Network:
    """Ordered layers, their parameters and per-parameter momentum buffers.

    Args:
        layers: layer instances in forward order.
        input_shape: per-sample input shape, e.g. ``(1, 16, 16)``.
        seed: seed for parameter initialisation.
        dtype: ``np.float32`` for training, ``np.float64`` for verification.
    """

    def __init__(self, layers, input_shape, seed=0, dtype=np.float32):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.rng_seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(layer.output_shape(self.shapes[-1]))
        rng = np.random.default_rng(self.rng_seed)
        for layer, shape in zip(self.layers, self.shapes):
            layer.init_params(shape, rng, self.dtype)
        self.opt_state = {key: np.zeros_like(p) for key, p in self.parameters()}

    @classmethod
    def from_specs(cls, specs, input_shape, seed=0, dtype=np.float32):
        """Build from ``[{"kind": "conv2d", ...hyperparameters}, ...]``."""
        layers = []
        for spec in specs:
            spec = dict(spec)
            layers.append(make_layer(spec.pop("kind"), **spec))
        return cls(layers, input_shape, seed=seed, dtype=dtype)

    @property
    def output_shape(self):
        return self.shapes[-1]

    def parameters(self):
        """Yield ``("<layer index>.<name>", array)`` in a fixed order."""
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{name}", value

    def buffers(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.buffers.items():
                yield f"{i}.{name}", value

    def get(self, key):
        i, name = key.split(".", 1)
        layer = self.layers[int(i)]
        return layer.params[name] if name in layer.params else layer.buffers[name]

    def set(self, key, value):
        i, name = key.split(".", 1)
        layer = self.layers[int(i)]
        target = layer.params if name in layer.params else layer.buffers
        if target[name].shape != value.shape:
            raise ContractViolation(f"{key}: shape {value.shape} != {target[name].shape}")
        target[name] = value

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        """Return a copy with every parameter, buffer and momentum cast to ``dtype``."""
        net = self.copy()
        net.dtype = np.dtype(dtype)
        for layer in net.layers:
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
            layer.buffers = {k: v.astype(dtype) for k, v in layer.buffers.items()}
        net.opt_state = {k: v.astype(dtype) for k, v in net.opt_state.items()}
        return net

    def __repr__(self):
        body = "\n".join(f"  ({i}) {layer!r}" for i, layer in enumerate(self.layers))
        return f"Network(input_shape={self.input_shape},\n{body}\n)"


@dataclass
class ForwardTrace:
    """Per-layer activations of one mini-batch.

    ``inputs[k]`` / ``outputs[k]`` are the input and output of layer ``k``;
    ``caches[k]`` holds what that layer's backward needs (dropout mask,
    batchnorm batch statistics, pooling argmax, ...).
    """

    inputs: list
    outputs: list
    caches: list
    mode: str

    @property
    def output(self):
        return self.outputs[-1]


@dataclass
class Gradients:
    """Parameter gradients keyed like ``Network.parameters`` plus per-layer errors.

    ``deltas[k]`` is the loss gradient with respect to the output of layer
    ``k``; it is ``None`` for a softmax whose backward was fused into the loss.
    """

    params: dict
    deltas: list = field(default_factory=list)
    input_grad: np.ndarray = None


def network_forward(net, batch, mode="train", rng=None):
    """Run ``batch`` through every layer and keep all intermediate activations."""
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    batch = np.asarray(batch)
    if batch.ndim != len(net.input_shape) + 1 or tuple(batch.shape[1:]) != net.input_shape:
        raise ConfigurationError(
            f"batch shape {batch.shape} does not match network input {net.input_shape}")
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng(net.rng_seed)
    x = batch.astype(net.dtype, copy=False)
    inputs, outputs, caches = [], [], []
    for k, layer in enumerate(net.layers):
        inputs.append(x)
        x, cache = layer.forward(x, train, rng)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite activation in layer {k} ({layer.kind})", layer=k)
        outputs.append(x)
        caches.append(cache)
    return ForwardTrace(inputs, outputs, caches, mode)


def network_backward(net, trace, dloss, from_logits=True):
    """Backpropagate ``dloss`` through the network.

    With ``from_logits`` and a trailing softmax, ``dloss`` is taken as the
    gradient with respect to the softmax input (as returned by
    ``softmax_cross_entropy``) and the softmax backward is skipped.
    Otherwise ``dloss`` is the gradient with respect to the network output.
    """
    n_layers = len(net.layers)
    if trace.mode != "train":
        raise ContractViolation("backward requires a train-mode trace")
    if len(trace.caches) != n_layers or len(trace.outputs) != n_layers:
        raise ContractViolation(
            f"trace has {len(trace.caches)} entries for a {n_layers}-layer network")
    deltas = [None] * n_layers
    start = n_layers - 1
    if from_logits and isinstance(net.layers[-1], Softmax):
        start -= 1
    grad = np.asarray(dloss, dtype=net.dtype)
    params = {}
    for k in range(start, -1, -1):
        layer = net.layers[k]
        deltas[k] = grad
        grad, layer_grads = layer.backward(grad, trace.caches[k])
        for name, g in layer_grads.items():
            params[f"{k}.{name}"] = g
    ordered = {key: params[key] for key, _ in net.parameters()}
    return Gradients(ordered, deltas, grad)


def last_linear_index(net):
    """Index of the final linear layer when the network ends linear -> softmax."""
    layers = net.layers
    if len(layers) < 2 or not isinstance(layers[-1], Softmax) or not isinstance(layers[-2], Linear):
        raise ConfigurationError("network must end with a linear layer followed by softmax")
    return len(layers) - 2
