"""Generic M-estimation: stacked estimating equations, sandwich covariance,
and delta-method variance propagation.

An EstimatingSystem bundles a per-record evaluator U(record, theta) -> p-vector
with optional per-record equation weights and frequency counts. The solved
equation is sum_i count_i * weight_i * U(O_i, theta) = 0, and the empirical
sandwich treats psi_i = weight_i * U(O_i, theta) as the per-record
contribution:

    A = (1/n) sum_i count_i * d(psi_i)/d(theta),
    B = (1/n) sum_i count_i * psi_i psi_i^T,
    cov(theta_hat) = A^{-1} B A^{-T} / n,     n = sum_i count_i.

Rows of U that are constant across records act as deterministic constraints
(their contribution to B vanishes at the solution while A carries their
Jacobian), which is how derived parameters are given delta-method-consistent
variances inside one stacked system.

All reductions use math.fsum, so results are independent of record order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConvergenceError, SingularSystemError

FD_REL_STEP = 1e-6


@dataclass
class EstimatingSystem:
    dim: int
    evaluate: Callable[[Any, np.ndarray], Sequence[float]]
    init: Sequence[float]
    weight: Callable[[Any], float] | None = None
    count: Callable[[Any], float] | None = None


def _contributions(system: EstimatingSystem, records, theta):
    """Yield (count_i, psi_i) with psi_i = weight_i * U_i(theta)."""
    for rec in records:
        u = np.asarray(system.evaluate(rec, theta), dtype=float)
        if u.shape != (system.dim,):
            raise ValueError(
                f"evaluator returned shape {u.shape}, expected ({system.dim},)")
        if system.weight is not None:
            u = u * system.weight(rec)
        c = system.count(rec) if system.count is not None else 1.0
        yield c, u


def _mean_equation(system: EstimatingSystem, records, theta) -> np.ndarray:
    cols = [[] for _ in range(system.dim)]
    total = 0.0
    for c, u in _contributions(system, records, theta):
        total += c
        for j in range(system.dim):
            cols[j].append(c * u[j])
    if total <= 0:
        raise ValueError("records must be nonempty with positive total count")
    return np.array([math.fsum(col) for col in cols]) / total


def _fd_step(scale: float) -> float:
    """Step of size about FD_REL_STEP * scale, rounded to a power of two so
    that x +/- h and the difference (x+h) - (x-h) stay exact for linear
    maps (keeps Newton exact on linear systems)."""
    return 2.0 ** round(math.log2(FD_REL_STEP * max(1.0, scale)))


def _fd_jacobian(f: Callable[[np.ndarray], np.ndarray], theta: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian, step h_j ~ FD_REL_STEP * max(1, |theta_j|)."""
    p = theta.size
    jac = np.empty((p, p))
    for j in range(p):
        h = _fd_step(abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        jac[:, j] = (f(tp) - f(tm)) / (tp[j] - tm[j])
    return jac


@dataclass
class FitResult:
    theta: np.ndarray
    cov: np.ndarray
    residual_norm: float
    iterations: int


def solve_system(system: EstimatingSystem, records, tol: float = 1e-10,
                 max_iter: int = 100) -> FitResult:
    """Solve the stacked estimating equations by damped Newton.

    The Jacobian is numeric (central differences); step halving guards
    against overshoot, and scalar systems fall back to bisection on an
    expanding bracket when Newton stalls. Deterministic given inputs.
    """
    if system.dim < 1:
        raise ValueError("system dimension must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    records = list(records)
    if not records:
        raise ValueError("records must be nonempty")

    def F(t):
        return _mean_equation(system, records, t)

    theta = np.asarray(system.init, dtype=float).copy()
    if theta.shape != (system.dim,):
        raise ValueError("init must have length equal to the system dimension")
    fval = F(theta)
    it = 0
    while float(np.max(np.abs(fval))) > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"no convergence after {max_iter} iterations "
                f"(residual {float(np.max(np.abs(fval))):.3e})",
                theta=theta, residual=float(np.max(np.abs(fval))))
        jac = _fd_jacobian(F, theta)
        try:
            cond = np.linalg.cond(jac)
            if not np.isfinite(cond) or cond > 1e14:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(jac, fval)
        except np.linalg.LinAlgError:
            if system.dim == 1:
                try:
                    theta = np.array([_bisect_scalar(lambda x: F(np.array([x]))[0],
                                                     theta[0], tol)])
                except ConvergenceError as exc:
                    raise ConvergenceError(
                        str(exc), theta=theta,
                        residual=float(np.max(np.abs(fval)))) from None
                fval = F(theta)
                it += 1
                continue
            raise SingularSystemError(
                f"singular Jacobian at iteration {it} "
                f"(cond ~ {np.linalg.cond(jac):.3e})", theta=theta)
        # damping: halve until the residual norm does not increase
        scale = 1.0
        base = float(np.max(np.abs(fval)))
        for _ in range(30):
            cand = theta - scale * step
            fcand = F(cand)
            if float(np.max(np.abs(fcand))) < base:
                theta, fval = cand, fcand
                break
            scale *= 0.5
        else:
            raise ConvergenceError("damped Newton stalled", theta=theta,
                                   residual=base)
        it += 1
    cov = sandwich_cov(system, records, theta)
    return FitResult(theta=theta, cov=cov,
                     residual_norm=float(np.max(np.abs(fval))), iterations=it)


def _bisect_scalar(f, x0, tol, lo=-20.0, hi=20.0):
    def safe(x):
        try:
            return f(x)
        except OverflowError:
            return math.inf

    flo, fhi = safe(lo), safe(hi)
    span = 1.0
    while flo * fhi > 0 and span < 1e6:
        lo -= span
        hi += span
        span *= 2.0
        flo, fhi = safe(lo), safe(hi)
    if flo * fhi > 0:
        raise ConvergenceError("scalar bisection fallback found no bracket",
                               theta=np.array([x0]))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = safe(mid)
        if abs(fm) <= tol or (hi - lo) < 1e-15:
            return mid
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def sandwich_cov(system: EstimatingSystem, records, theta_hat) -> np.ndarray:
    """Empirical sandwich A^{-1} B A^{-T} / n at theta_hat.

    Counts and weights enter exactly as in the solved equation: the bread
    averages count * d(weight*U)/d(theta) and the meat averages
    count * (weight*U)(weight*U)^T. The result is symmetrized to suppress
    round-off asymmetry.
    """
    records = list(records)
    theta_hat = np.asarray(theta_hat, dtype=float)
    p = system.dim
    total = 0.0
    meat_cols = [[] for _ in range(p * p)]
    for c, u in _contributions(system, records, theta_hat):
        total += c
        outer = np.outer(u, u).ravel()
        for k in range(p * p):
            meat_cols[k].append(c * outer[k])
    meat = np.array([math.fsum(col) for col in meat_cols]).reshape(p, p) / total

    def F(t):
        return _mean_equation(system, records, t)

    bread = _fd_jacobian(F, theta_hat)
    try:
        cond = np.linalg.cond(bread)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
        binv = np.linalg.inv(bread)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            f"singular bread matrix (cond ~ {np.linalg.cond(bread):.3e})",
            theta=theta_hat) from None
    cov = binv @ meat @ binv.T / total
    return 0.5 * (cov + cov.T)


def delta_method(g: Callable[[np.ndarray], float], theta_hat, cov) -> tuple[float, float]:
    """Value and variance of a smooth scalar map of theta_hat.

    The gradient is computed by central finite differences with the same
    relative step as the system Jacobians; variance = grad^T cov grad,
    floored at zero against round-off.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    cov = np.asarray(cov, dtype=float)
    value = float(g(theta_hat))
    if not math.isfinite(value):
        raise ValueError("g is not finite at theta_hat")
    p = theta_hat.size
    grad = np.empty(p)
    for j in range(p):
        h = _fd_step(abs(theta_hat[j]))
        tp, tm = theta_hat.copy(), theta_hat.copy()
        tp[j] += h
        tm[j] -= h
        gp, gm = float(g(tp)), float(g(tm))
        if not (math.isfinite(gp) and math.isfinite(gm)):
            raise ValueError("g is not finite in a neighborhood of theta_hat")
        grad[j] = (gp - gm) / (tp[j] - tm[j])
    var = float(grad @ cov @ grad)
    return value, max(var, 0.0)
