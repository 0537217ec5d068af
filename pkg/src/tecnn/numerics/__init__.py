from .gradcheck import grad_check
from .layers import BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d, ReLU, Softmax, make_layer
from .loss import softmax_cross_entropy
from .network import ForwardTrace, Gradients, Network, last_linear_index, network_backward, network_forward
from .optim import sgd_momentum_step

__all__ = [
    "BatchNorm2d", "Conv2d", "Dropout", "Linear", "MaxPool2d", "ReLU", "Softmax", "make_layer",
    "ForwardTrace", "Gradients", "Network", "last_linear_index", "network_backward",
    "network_forward", "softmax_cross_entropy", "sgd_momentum_step", "grad_check",
]
