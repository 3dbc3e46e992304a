"""Dense float64 tensors with reverse-mode autodiff and the primitives the model needs."""

from .conv import (
    avg_pool2d_padded,
    conv1d_depthwise,
    conv2d,
    conv_output_extent,
    conv_transpose2d,
    pixel_shuffle,
    pixel_unshuffle,
)
from .fft import dft2_magnitude, fft2, fft_axis, is_power_of_two
from .gradcheck import away_from_kinks, grad_check
from .ops import (
    activation,
    add,
    batch_norm,
    concat,
    div,
    exp,
    gelu,
    getitem,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sigmoid,
    softmax,
    softmax_lastdim,
    softplus,
    split,
    sqrt,
    square,
    sub,
    sum,
    tanh,
    transpose,
)
from .tape import Tape, Tensor, Var, active_tape, as_tensor, backward, zero_grad

__all__ = [name for name in dir() if not name.startswith("_")]
