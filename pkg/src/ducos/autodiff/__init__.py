"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from .nn import SGD, Adam, Conv2d, ConvTranspose2d, Module, Parameter, init_kaiming_uniform, kaiming_bound
from .spatial import (
    bilinear_matrix,
    central_diff,
    conv2d,
    conv_transpose2d,
    pad_replicate,
    resample,
    resize_bilinear,
)
from .tensor import (
    DEFAULT_DTYPE,
    Tape,
    Tensor,
    abs_,
    add,
    amax,
    amin,
    backward,
    clip,
    concat,
    div,
    elementwise,
    exp,
    mean,
    mul,
    no_grad,
    reduce,
    relu,
    reshape,
    sigmoid,
    sqrt,
    square,
    std,
    sub,
    sum_,
    tensor,
    where_const,
)

deconv2d = conv_transpose2d
