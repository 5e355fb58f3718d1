from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import ParamStore, adam_step, sgd_step
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    add,
    concat,
    embedding,
    fold_time,
    grouped_xent,
    gru_recurrence,
    gru_cell,
    linear,
    matmul,
    mul,
    no_grad,
    param,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_xent,
    sub,
    take,
    tanh,
    total,
    weighted_sum,
)
