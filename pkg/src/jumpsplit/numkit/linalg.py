"""Ridge-regularized symmetric positive definite solves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import ParameterError, SingularSystemError

ESCALATION_START = 1e-8
ESCALATION_LIMIT = 1e-2
_REFINE_STEPS = 2


@dataclass
class SpdSystem:
    """Normal-equation carrier: solve (gram + ridge*I) y = rhs."""

    gram: np.ndarray
    rhs: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        k = self.gram.shape[0]
        if self.gram.shape != (k, k) or self.rhs.shape != (k,):
            raise ParameterError("gram must be KxK and rhs length K")
        if self.ridge < 0 or not np.isfinite(self.ridge):
            raise ParameterError("ridge must be finite and non-negative")


def _try_solve(gram, rhs, ridge):
    a = gram + ridge * np.eye(gram.shape[0])
    try:
        fac = linalg.cho_factor(a, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(fac[0])) or np.any(np.diag(fac[0]) <= 0):
        return None
    y = linalg.cho_solve(fac, rhs, check_finite=False)
    for _ in range(_REFINE_STEPS):
        res = rhs - a @ y
        y = y + linalg.cho_solve(fac, res, check_finite=False)
    res = np.linalg.norm(a @ y - rhs)
    if not np.isfinite(res) or res > 1e-8 * (1.0 + np.linalg.norm(rhs)):
        return None
    return y


def cholesky_solve(system: SpdSystem) -> tuple[np.ndarray, float]:
    """Solve the ridge-augmented system by Cholesky factorization.

    If the factorization fails (or the residual check does not pass), the
    ridge is raised to ``1e-8 * trace/K`` and then multiplied by 10 until it
    reaches ``1e-2 * trace/K``.

    Returns
    -------
    y : ndarray
        Solution vector.
    ridge : float
        The ridge actually used.
    """
    gram, rhs = system.gram, system.rhs
    y = _try_solve(gram, rhs, system.ridge)
    if y is not None:
        return y, float(system.ridge)
    k = gram.shape[0]
    scale = np.trace(gram) / k
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    rho = max(ESCALATION_START * scale, system.ridge)
    limit = ESCALATION_LIMIT * scale * (1 + 1e-12)
    while rho <= limit:
        y = _try_solve(gram, rhs, rho)
        if y is not None:
            return y, float(rho)
        rho *= 10.0
    raise SingularSystemError(
        f"Cholesky factorization failed up to ridge {rho / 10.0:.3e}", ridge=rho / 10.0
    )
