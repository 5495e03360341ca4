from hsaw.autodiff.conv import conv2d, deconv2d
from hsaw.autodiff.optim import AdamState, adam_step
from hsaw.autodiff.tensor import (
    Parameter,
    Tensor,
    bce_loss,
    bce_with_logits,
    concat_channels,
    instance_norm,
    l1_loss,
    leaky_relu,
    mean_all,
    no_grad,
    relu,
    sigmoid,
    sum_all,
    tanh,
)

__all__ = [
    "AdamState",
    "Parameter",
    "Tensor",
    "adam_step",
    "bce_loss",
    "bce_with_logits",
    "concat_channels",
    "conv2d",
    "deconv2d",
    "instance_norm",
    "l1_loss",
    "leaky_relu",
    "mean_all",
    "no_grad",
    "relu",
    "sigmoid",
    "sum_all",
    "tanh",
]
