"""
Differentiable primitives with closed-form backward passes

Every forward function has a `*_backward` companion that maps the gradient of
a scalar objective w.r.t. the output onto gradients w.r.t. each operand.
"""
from typing import Tuple

import numpy as np

from config import EPSILON_NORM
from numeric.tensor import Tensor
from utils.error_handler import DegenerateVectorError, DimensionMismatchError, NumericalError


def _check_finite(x: Tensor, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what} contains non-finite entries")


# ============================================================================
# Linear algebra
# ============================================================================

def matvec(m: Tensor, v: Tensor) -> Tensor:
    """Matrix-vector product m @ v."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionMismatchError("matvec", m.shape, v.shape)
    return m @ v


def matvec_backward(m: Tensor, v: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor]:
    return np.outer(grad_out, v), m.T @ grad_out


def matmul_rows(x: Tensor, m: Tensor) -> Tensor:
    """Apply `m` to every row of `x`: rows of x @ m.T."""
    if x.ndim != 2 or m.ndim != 2 or x.shape[1] != m.shape[1]:
        raise DimensionMismatchError("matmul_rows", x.shape, m.shape)
    return x @ m.T


def matmul_rows_backward(x: Tensor, m: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor]:
    return grad_out @ m, grad_out.T @ x


# ============================================================================
# Cosine similarity
# ============================================================================

def row_norms(x: Tensor) -> Tensor:
    """L2 norm of every row; raises on rows below EPSILON_NORM."""
    norms = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(norms <= EPSILON_NORM):
        raise DegenerateVectorError(
            f"vector norm below {EPSILON_NORM}: cosine similarity is undefined"
        )
    return norms


def cosine_sim(a: Tensor, b: Tensor) -> float:
    """a.b / (|a||b|), clipped to [-1, 1]."""
    if a.ndim != 1 or a.shape != b.shape or a.shape[0] < 1:
        raise DimensionMismatchError("cosine_sim", a.shape, b.shape)
    na, nb = row_norms(a), row_norms(b)
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_sim_backward(a: Tensor, b: Tensor, grad_out: float) -> Tuple[Tensor, Tensor]:
    na, nb = row_norms(a), row_norms(b)
    a_hat, b_hat = a / na, b / nb
    s = float(np.dot(a_hat, b_hat))
    da = grad_out * (b_hat - s * a_hat) / na
    db = grad_out * (a_hat - s * b_hat) / nb
    return da, db


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """S[i, j] = cosine(a[i], b[j])."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatchError("cosine_matrix", a.shape, b.shape)
    a_hat = a / row_norms(a)[:, None]
    b_hat = b / row_norms(b)[:, None]
    return np.clip(a_hat @ b_hat.T, -1.0, 1.0)


def _normalize_backward(x_hat: Tensor, norms: Tensor, grad_hat: Tensor) -> Tensor:
    # d(x/|x|) = (I - x_hat x_hat^T) / |x|
    radial = np.sum(grad_hat * x_hat, axis=1, keepdims=True)
    return (grad_hat - radial * x_hat) / norms[:, None]


def cosine_matrix_backward(a: Tensor, b: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor]:
    na, nb = row_norms(a), row_norms(b)
    a_hat, b_hat = a / na[:, None], b / nb[:, None]
    da = _normalize_backward(a_hat, na, grad_out @ b_hat)
    db = _normalize_backward(b_hat, nb, grad_out.T @ a_hat)
    return da, db


# ============================================================================
# Softmax family
# ============================================================================

def logsumexp(logits: Tensor) -> Tensor:
    """Stable log-sum-exp over the last axis."""
    peak = np.max(logits, axis=-1, keepdims=True)
    return np.squeeze(peak, axis=-1) + np.log(np.sum(np.exp(logits - peak), axis=-1))


def log_softmax(logits: Tensor) -> Tensor:
    peak = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - peak
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 1:
        raise DimensionMismatchError("softmax", logits.shape, (1,))
    _check_finite(logits, "softmax logits")
    peak = np.max(logits, axis=-1, keepdims=True)
    e = np.exp(logits - peak)
    return e / np.sum(e, axis=-1, keepdims=True)
