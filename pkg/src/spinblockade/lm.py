"""Levenberg-Marquardt least squares.

A small, dependency-free (numpy only) implementation with Marquardt
diagonal scaling, central-difference Jacobians and a covariance estimate
from the damped normal equations at the optimum.  All fitting in the
package goes through :func:`levenberg_marquardt` so tolerances and
diagnostics are uniform.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ComputationError, DegenerateFitError

DEFAULT_MAX_ITERATIONS = 200
DEFAULT_STEP_TOLERANCE = 1e-9
DEFAULT_GRADIENT_TOLERANCE = 1e-8


@dataclass
class LMResult:
    x: np.ndarray
    covariance: np.ndarray
    cost: float
    residuals: np.ndarray
    jacobian: np.ndarray
    iterations: int
    converged: bool
    reason: str
    gradient_norm: float
    cost_history: list = field(default_factory=list)


def numerical_jacobian(fun, x, f0=None, rel_step=1e-6):
    """Central-difference Jacobian of ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((fun(xp) - fun(xm)) / (2.0 * h))
    return np.column_stack(cols)


def _null_space_members(jac, names, rtol=1e-10):
    """Names of parameters with weight in the (near) null space of ``jac``."""
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms == 0):
        return [n for n, v in zip(names, norms) if v == 0]
    _, s, vt = np.linalg.svd(jac / norms, full_matrices=False)
    small = s < rtol * s[0]
    if not small.any():
        return []
    weight = np.abs(vt[small]).max(axis=0)
    return [n for n, w in zip(names, weight) if w > 0.1]


def levenberg_marquardt(
    fun,
    x0,
    jac=None,
    names=None,
    max_iterations=DEFAULT_MAX_ITERATIONS,
    step_tolerance=DEFAULT_STEP_TOLERANCE,
    gradient_tolerance=DEFAULT_GRADIENT_TOLERANCE,
    initial_damping=1e-3,
    scale_covariance=True,
):
    """Minimise ``0.5 * ||fun(x)||^2``.

    Parameters
    ----------
    fun : callable
        Residual vector as a function of the parameter vector.
    x0 : array_like
        Starting point.
    jac : callable, optional
        Analytic Jacobian; central differences are used otherwise.
    names : sequence of str, optional
        Parameter names used in degeneracy diagnostics.
    scale_covariance : bool
        Multiply the inverse curvature by the reduced chi-square.

    Returns
    -------
    LMResult
        ``converged`` is False when ``max_iterations`` ran out; the best
        point found is still returned.

    Raises
    ------
    DegenerateFitError
        If the Jacobian at the start or at the optimum is rank deficient.
    """
    x = np.array(x0, dtype=float)
    names = list(names) if names is not None else [f"x{i}" for i in range(x.size)]
    jac_fn = jac if jac is not None else (lambda p: numerical_jacobian(fun, p))

    r = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ComputationError("residuals not finite at the starting point", code="lm.nonfinite_start")
    cost = 0.5 * float(r @ r)
    history = [cost]
    mu = initial_damping
    converged = False
    reason = "max_iterations"
    iterations = 0
    J = jac_fn(x)
    _check_rank(J, names)

    while iterations < max_iterations:
        iterations += 1
        g = J.T @ r
        JTJ = J.T @ J
        diag = np.diag(JTJ).copy()
        diag[diag == 0] = 1.0
        rnorm = np.sqrt(2.0 * cost)
        if rnorm == 0.0:
            converged, reason = True, "zero_residual"
            break
        gnorm = float(np.max(np.abs(g) / (np.sqrt(diag) * rnorm)))
        if gnorm <= gradient_tolerance:
            converged, reason = True, "gradient"
            break

        accepted = False
        while not accepted:
            A = JTJ + mu * np.diag(diag)
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                if mu > 1e16:
                    break
                continue
            x_new = x + step
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new <= cost:
                accepted = True
            else:
                mu *= 10.0
                if mu > 1e16:
                    break
        if not accepted:
            converged, reason = True, "no_descent"
            break

        # step measured in the curvature-scaled metric, as in MINPACK
        scale = np.sqrt(diag)
        rel_step = np.linalg.norm(scale * step) / (np.linalg.norm(scale * x) + step_tolerance)
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        mu = max(mu / 10.0, 1e-12)
        J = jac_fn(x)
        if rel_step <= step_tolerance:
            converged, reason = True, "step"
            break

    g = J.T @ r
    JTJ = J.T @ J
    diag = np.diag(JTJ).copy()
    diag[diag == 0] = 1.0
    rnorm = np.sqrt(2.0 * cost)
    gnorm = 0.0 if rnorm == 0 else float(np.max(np.abs(g) / (np.sqrt(diag) * rnorm)))
    _check_rank(J, names)
    # D^-1 (D^-1 JTJ D^-1)^-1 D^-1 keeps the inverse well conditioned across scales
    d = 1.0 / np.sqrt(diag)
    cov = d[:, None] * np.linalg.inv(d[:, None] * JTJ * d[None, :]) * d[None, :]
    if scale_covariance:
        dof = max(r.size - x.size, 1)
        cov = cov * (2.0 * cost / dof)
    cov = 0.5 * (cov + cov.T)
    return LMResult(
        x=x,
        covariance=cov,
        cost=cost,
        residuals=r,
        jacobian=J,
        iterations=iterations,
        converged=converged,
        reason=reason,
        gradient_norm=gnorm,
        cost_history=history,
    )


def _check_rank(J, names):
    degenerate = _null_space_members(J, names)
    if degenerate:
        raise DegenerateFitError(
            f"Jacobian is rank deficient in parameters {degenerate}", parameters=degenerate
        )
