from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .init import InitScheme, init_linear, truncated_normal, xavier_bound
from .optim import OptimState, adam_step, clip_by_global_norm, global_norm
from .tensor import (
    SUPPORTED_OPS,
    NonFiniteError,
    Tensor,
    UnsupportedOpError,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    default_dtype,
    div,
    exp,
    expand_dims,
    grad_enabled,
    layer_norm,
    linear,
    log,
    log_sigmoid,
    log_softmax,
    logsumexp,
    matmul,
    max_,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    sub,
    sum_,
    transpose,
)
