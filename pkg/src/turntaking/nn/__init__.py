"""Small float64 autodiff kernel: tensors, layers, Adam, gradient checking."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradientCheckError, gradient_check
from .layers import (
    BatchNorm,
    Conv2d,
    Dropout,
    Embedding,
    LayerNorm,
    Linear,
    Module,
    Parameter,
)
from .optim import AdamState, adam_step
from .tensor import (
    NumericError,
    Tensor,
    add,
    backward,
    batch_norm,
    binary_cross_entropy,
    clip,
    concat,
    conv2d,
    cosine_similarity,
    dropout,
    embedding,
    exp,
    global_avg_pool,
    index,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    signed_sqrt,
    softmax,
    sqrt,
    stack,
    sum_,
    tanh,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
