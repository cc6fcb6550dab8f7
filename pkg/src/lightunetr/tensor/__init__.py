"""Minimal dense tensor library with reverse-mode autodiff."""
from lightunetr.tensor.core import (
    Tensor,
    as_tensor,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)
from lightunetr.tensor import ops
from lightunetr.tensor.ops import (
    activation,
    avg_pool3d,
    batch_norm,
    concat,
    conv3d,
    conv3d_transposed,
    gelu,
    layer_norm,
    matmul,
    sigmoid,
    softmax,
    split,
    trilinear_resize,
)
from lightunetr.tensor.optim import SGD, cosine_lr
from lightunetr.tensor.gradcheck import check_gradients, numeric_grad, relative_error

__all__ = [
    "Tensor", "as_tensor", "default_dtype", "get_default_dtype", "is_grad_enabled", "no_grad",
    "set_default_dtype", "ops", "activation", "avg_pool3d", "batch_norm", "concat", "conv3d",
    "conv3d_transposed", "gelu", "layer_norm", "matmul", "sigmoid", "softmax", "split",
    "trilinear_resize", "SGD", "cosine_lr", "check_gradients", "numeric_grad", "relative_error",
]
