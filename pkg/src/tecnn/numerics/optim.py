import numpy as np

from ..errors import ConfigurationError, NumericError


def sgd_momentum_step(net, grads, lr, momentum):
    """Classical momentum: ``v <- momentum * v + g``; ``p <- p - lr * v``.

    Updates every parameter of ``net`` in place (biases included).
    """
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigurationError(f"momentum must lie in [0, 1), got {momentum}")
    lr_t = net.dtype.type(lr)
    mu_t = net.dtype.type(momentum)
    for key, param in net.parameters():
        g = grads.params[key]
        v = net.opt_state[key]
        v *= mu_t
        v += g
        param -= lr_t * v
        if not np.isfinite(param).all():
            raise NumericError(f"non-finite parameter {key} after SGD step")
