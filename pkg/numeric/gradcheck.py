"""
Finite-difference gradient oracle
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Union

import numpy as np

from config import GRADCHECK_ATOL, GRADCHECK_RTOL, GRADCHECK_STEP
from numeric.tensor import ModelParams, Param, Tensor
from utils.error_handler import ConfigError, NumericalError


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    passed: bool


def _evaluate(f: Callable[[], float]) -> float:
    value = float(f())
    if not math.isfinite(value):
        raise NumericalError(f"objective evaluated to {value} during finite differencing")
    return value


def finite_diff_grad(
    f: Callable[[], float],
    params: Union[ModelParams, Iterable[Param]],
    step: float = GRADCHECK_STEP,
) -> Dict[str, Tensor]:
    """
    Central-difference gradient of `f` w.r.t. every entry of every parameter.

    `f` closes over the parameters and must be deterministic. Each entry is
    perturbed in place and restored bitwise afterwards.

    Args:
        f: Zero-argument scalar objective
        params: Parameters to differentiate against
        step: Perturbation h; the estimate is (f(p+h) - f(p-h)) / 2h

    Returns:
        Mapping from parameter name to numeric gradient
    """
    if step <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {step}")

    grads: Dict[str, Tensor] = {}
    for param in params:
        flat = param.value.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = _evaluate(f)
            flat[i] = original - step
            f_minus = _evaluate(f)
            flat[i] = original
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        grads[param.name] = numeric.reshape(param.value.shape)
    return grads


def relative_error(analytic: Tensor, numeric: Tensor, atol: float = GRADCHECK_ATOL) -> float:
    """
    Max elementwise relative error; entries agreeing within `atol` count as exact.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise NumericalError(f"gradient shapes differ: {analytic.shape} vs {numeric.shape}")
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    errors = np.where(diff <= atol, 0.0, diff / np.maximum(scale, atol))
    return float(np.max(errors)) if errors.size else 0.0


def check_gradient(
    name: str,
    f: Callable[[], float],
    analytic: Dict[str, Tensor],
    params: Union[ModelParams, Iterable[Param]],
    step: float = GRADCHECK_STEP,
    rtol: float = GRADCHECK_RTOL,
) -> GradCheckResult:
    """Compare analytic gradients against `finite_diff_grad`."""
    numeric = finite_diff_grad(f, params, step)
    worst = 0.0
    for param_name, estimate in numeric.items():
        worst = max(worst, relative_error(analytic[param_name], estimate))
    return GradCheckResult(name=name, max_rel_error=worst, passed=worst < rtol)
