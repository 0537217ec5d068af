"""Central finite-difference check of the analytic backward pass."""
import numpy as np

from ..errors import ConfigurationError
from .layers import BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d, ReLU, Softmax
from .loss import softmax_cross_entropy
from .network import Network, network_backward, network_forward


def _objective(net, labels, proj):
    if isinstance(net.layers[-1], Softmax):
        def loss(out):
            value, grad = softmax_cross_entropy(out, labels)
            return value, grad, True
    else:
        def loss(out):
            return float((out * proj).sum()), proj, False
    return loss


def grad_check(net, batch, labels, eps=1e-6, max_entries=30, seed=0, include_input=True):
    """Largest relative error between analytic and numeric gradients.

    The loss is softmax cross-entropy when the network ends in softmax,
    otherwise a fixed random linear functional of the output. Dropout masks
    are frozen by reseeding the forward RNG identically for every
    evaluation. Up to ``max_entries`` entries per parameter (and of the
    input, if ``include_input``) are probed.

    Returns ``max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    if net.dtype != np.float64:
        raise ConfigurationError("grad_check needs a float64 network")
    if not 1e-6 <= eps <= 1e-4:
        raise ConfigurationError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    # salted so the probe never coincides with a caller's data stream
    rng = np.random.default_rng([int(seed), 0x6C6B])
    x = np.array(batch, dtype=np.float64)
    proj = rng.standard_normal((x.shape[0],) + tuple(net.output_shape))
    loss_fn = _objective(net, labels, proj)
    saved_buffers = {k: v.copy() for k, v in net.buffers()}
    fwd_seed = int(rng.integers(2**32))

    def evaluate(inp):
        trace = network_forward(net, inp, "train", np.random.default_rng(fwd_seed))
        return trace, loss_fn(trace.output)

    trace, (_, dloss, from_logits) = evaluate(x)
    grads = network_backward(net, trace, dloss, from_logits=from_logits)

    targets = [(key, param, grads.params[key]) for key, param in net.parameters()]
    if include_input:
        targets.append(("input", x, grads.input_grad))

    worst = 0.0
    for _, arr, analytic in targets:
        flat = arr.reshape(-1)
        n = flat.size
        picks = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        for idx in picks:
            old = flat[idx]
            flat[idx] = old + eps
            lp = evaluate(x)[1][0]
            flat[idx] = old - eps
            lm = evaluate(x)[1][0]
            flat[idx] = old
            numeric = (lp - lm) / (2 * eps)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)

    for key, value in saved_buffers.items():
        net.set(key, value)
    return worst


def _case(layers, shape):
    return lambda: (layers(), shape)


# one small network per layer kind; the kind under test is never preceded by
# a layer that makes its parameters unidentifiable (e.g. conv bias before batchnorm)
LAYER_KIND_CASES = {
    "conv2d": _case(lambda: [Conv2d(1, 2, 3)], (1, 5, 5)),
    "conv2d-strided": _case(lambda: [Conv2d(2, 3, 3, stride=2, padding=1)], (2, 6, 6)),
    "batchnorm2d": _case(lambda: [BatchNorm2d(2)], (2, 3, 3)),
    "relu": _case(lambda: [ReLU()], (2, 3, 3)),
    "maxpool2d": _case(lambda: [MaxPool2d(2)], (2, 4, 4)),
    "dropout": _case(lambda: [Dropout(0.3)], (2, 3, 3)),
    "linear": _case(lambda: [Linear(6, 4), Softmax()], (6,)),
    "softmax": _case(lambda: [Softmax()], (5,)),
}
TOLERANCE = {"linear": 1e-6, "softmax": 1e-6}
DEFAULT_TOLERANCE = 1e-4


def check_layer_kinds(seeds=100, eps=1e-5, batch=4, kinds=None):
    """Worst relative error per layer kind over ``seeds`` random 64-bit instances."""
    worst = {}
    for kind in kinds or LAYER_KIND_CASES:
        worst[kind] = 0.0
        for seed in range(seeds):
            layers, shape = LAYER_KIND_CASES[kind]()
            net = Network(layers, shape, seed=seed, dtype=np.float64)
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((batch,) + shape)
            classes = net.output_shape[0] if len(net.output_shape) == 1 else 1
            labels = rng.integers(0, classes, batch)
            worst[kind] = max(worst[kind], grad_check(net, x, labels, eps=eps, seed=seed))
    return worst
