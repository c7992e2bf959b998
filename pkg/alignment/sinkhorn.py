# alignment/sinkhorn.py
"""
Entropic optimal transport by log-domain Sinkhorn scaling.

With finite ``rho`` the marginal constraints are relaxed into KL penalties of
strength ``rho`` and each potential update is damped by rho / (rho + epsilon);
``rho = inf`` recovers the balanced problem.
"""
import math

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from schemas.alignment.schemas import TokenWeights, TransportPlan
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)

SIMPLEX_TOL = 1e-6


def _check_simplex(mass: np.ndarray, name: str) -> None:
    require(
        mass.ndim == 1 and mass.size >= 1 and bool((mass >= 0).all()) and abs(mass.sum() - 1.0) <= SIMPLEX_TOL,
        LabErrorReason.NON_SIMPLEX,
        f"marginal {name} is not on the probability simplex",
        marginal=name,
    )


def _log(mass: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(mass)


def sinkhorn(
    C: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    epsilon: float,
    max_iter: int = 1000,
    tol: float = 1e-6,
    rho: float = math.inf,
) -> TransportPlan:
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require(epsilon > 0, LabErrorReason.INVALID_ARGUMENT, "epsilon must be positive", epsilon=epsilon)
    require(rho > 0, LabErrorReason.INVALID_ARGUMENT, "rho must be positive", rho=rho)
    require(C.ndim == 2 and C.shape == (a.size, b.size), LabErrorReason.SHAPE_MISMATCH, "cost shape mismatch")
    require(bool(np.isfinite(C).all()) and bool((C >= 0).all()), LabErrorReason.INVALID_ARGUMENT, "cost must be finite and >= 0")
    _check_simplex(a, "a")
    _check_simplex(b, "b")

    balanced = math.isinf(rho)
    damping = 1.0 if balanced else rho / (rho + epsilon)
    log_a, log_b = _log(a), _log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    kernel = -C / epsilon

    def log_plan(f: np.ndarray, g: np.ndarray) -> np.ndarray:
        return kernel + (f[:, None] + g[None, :]) / epsilon

    converged = False
    iterations = 0
    violation = math.inf
    for iterations in range(1, max_iter + 1):
        f_prev, g_prev = f, g
        f = damping * epsilon * (log_a - logsumexp(kernel + g[None, :] / epsilon, axis=1))
        g = damping * epsilon * (log_b - logsumexp(kernel + f[:, None] / epsilon, axis=0))
        coupling = np.exp(log_plan(f, g))
        violation = max(np.abs(coupling.sum(axis=1) - a).max(), np.abs(coupling.sum(axis=0) - b).max())
        if balanced:
            converged = violation <= tol
        else:
            # relaxed marginals never match a, b; stop when the potentials settle
            change = max(np.abs(f - f_prev).max(), np.abs(g - g_prev).max())
            converged = bool(np.isfinite(change)) and change <= tol
        if converged:
            break
    if not converged:
        logger.debug("sinkhorn stopped at max_iter=%d with violation %.3g", max_iter, violation)
    log_coupling = log_plan(f, g)
    return TransportPlan(
        coupling=np.exp(log_coupling),
        log_coupling=log_coupling,
        a=a,
        b=b,
        epsilon=float(epsilon),
        rho=float(rho),
        iterations=iterations,
        converged=bool(converged),
        max_violation=float(violation),
    )


def squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return cdist(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), metric="sqeuclidean")


def otpo_weights(
    hidden_c: np.ndarray,
    hidden_r: np.ndarray,
    epsilon: float,
    rho: float = 1.0,
    max_iter: int = 1000,
    tol: float = 1e-9,
) -> TokenWeights:
    """
    Token weights for a chosen/rejected pair from the entropic plan between their
    hidden states under squared Euclidean cost and uniform masses.

    The weights are the plan's row and column sums, each rescaled to sum to 1.
    A balanced plan (``rho = inf``) has exactly uniform marginals, so the KL-relaxed
    plan is the default: its marginals move mass toward tokens that sit close to
    the other response.
    """
    hidden_c = np.asarray(hidden_c, dtype=np.float64)
    hidden_r = np.asarray(hidden_r, dtype=np.float64)
    n_c, n_r = hidden_c.shape[0], hidden_r.shape[0]
    require(n_c >= 1 and n_r >= 1, LabErrorReason.EMPTY_INPUT, "response without tokens", n_c=n_c, n_r=n_r)
    result = sinkhorn(
        squared_distances(hidden_c, hidden_r),
        np.full(n_c, 1.0 / n_c),
        np.full(n_r, 1.0 / n_r),
        epsilon,
        max_iter=max_iter,
        tol=tol,
        rho=rho,
    )
    # marginals in log space; far-apart hidden states underflow the plan itself
    log_rows = logsumexp(result.log_coupling, axis=1)
    log_cols = logsumexp(result.log_coupling, axis=0)
    return TokenWeights(
        w_c=np.exp(log_rows - logsumexp(log_rows)),
        w_r=np.exp(log_cols - logsumexp(log_cols)),
    )
