"""
Numeric core: float64 tensors, closed-form gradients, finite-difference oracle, Adam
"""

from .tensor import (
    Tensor,
    Rng,
    Param,
    ModelParams,
    as_tensor,
    make_rng,
    derive_rng,
    draw_seed,
    tensor_checksum,
)
from .ops import (
    matvec,
    matvec_backward,
    matmul_rows,
    matmul_rows_backward,
    row_norms,
    cosine_sim,
    cosine_sim_backward,
    cosine_matrix,
    cosine_matrix_backward,
    softmax,
    log_softmax,
    logsumexp,
)
from .gradcheck import GradCheckResult, finite_diff_grad, relative_error, check_gradient
from .optim import Adam, AdamState, adam_step

__all__ = [
    'Tensor', 'Rng', 'Param', 'ModelParams', 'as_tensor', 'make_rng', 'derive_rng',
    'draw_seed', 'tensor_checksum',
    'matvec', 'matvec_backward', 'matmul_rows', 'matmul_rows_backward', 'row_norms',
    'cosine_sim', 'cosine_sim_backward', 'cosine_matrix', 'cosine_matrix_backward',
    'softmax', 'log_softmax', 'logsumexp',
    'GradCheckResult', 'finite_diff_grad', 'relative_error', 'check_gradient',
    'Adam', 'AdamState', 'adam_step',
]
