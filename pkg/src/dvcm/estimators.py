"""Point estimators: target-only (G)LR, pooled (G)DVCM, penalized transfer.

All three reduce to minimising a weighted sum of convex per-observation
losses, optionally plus a quadratic penalty ``0.5 ||alpha - c||_Q^2``;
:func:`newton_weighted` is the shared solver.  For the Gaussian family
every problem is a linear system, solved exactly by symmetric
positive-definite factorisation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .design import DomainSample, LocalDesign, build_local_design
from .errors import SingularSystemError
from .families import ModelFamily

__all__ = ["LocalFit", "TLFit", "newton_weighted", "fit_target_only", "fit_dvcm", "fit_tl"]

NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 100
NEWTON_MAX_HALVINGS = 30


@dataclass(frozen=True)
class LocalFit:
    """Fitted stacked coefficients of a local-polynomial regression.

    ``theta`` is the first ``p``-block of ``alpha`` (the action of the
    selector ``[I_p, 0]``).
    """

    alpha: np.ndarray
    theta: np.ndarray
    design: LocalDesign
    converged: bool
    iterations: int


@dataclass(frozen=True)
class TLFit:
    """Ridge-penalised fine-tuning estimate and its ingredients."""

    theta_tl: np.ndarray
    theta_pilot: np.ndarray
    q: np.ndarray
    converged: bool


def _solve_spd(mat: np.ndarray, rhs: np.ndarray, jitter: bool = False) -> np.ndarray:
    """Solve a symmetric positive-definite system, optionally jittered.

    Raises SingularSystemError when the factorisation fails and jitter is
    off (singularity is a hard error by default: silent regularisation
    would mask data problems).
    """
    try:
        return cho_solve(cho_factor(mat, lower=True), rhs)
    except LinAlgError:
        if jitter:
            eps = 1e-10 * np.trace(mat) / mat.shape[0]
            if eps <= 0:
                eps = 1e-10
            try:
                return cho_solve(cho_factor(mat + eps * np.eye(mat.shape[0]), lower=True), rhs)
            except LinAlgError:
                pass
        raise SingularSystemError(
            "symmetric system is not positive definite",
            cond=float(np.linalg.cond(mat)),
        ) from None


def newton_weighted(
    design_rows: np.ndarray,
    weights: np.ndarray,
    y: np.ndarray,
    family: ModelFamily,
    init: np.ndarray,
    penalty: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    jitter: bool = False,
) -> tuple[np.ndarray, bool, int]:
    """Minimise ``sum_i w_i l(z_i' a, y_i) [+ 0.5 ||a - c||_Q^2]``.

    Newton iterations with backtracking step halving (factor 1/2, up to
    30 halvings) whenever the objective fails to decrease; convergence is
    declared on gradient max-norm <= ``tol``.  For the Gaussian family the
    first step solves the normal equations exactly.

    Returns ``(solution, converged, iterations)``; when ``max_iter`` is
    exhausted the best iterate is returned with ``converged=False``.
    """
    z = np.asarray(design_rows, dtype=float)
    w = np.asarray(weights, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    alpha = np.asarray(init, dtype=float).copy()
    q, center = (None, None) if penalty is None else penalty
    if q is not None:
        q = np.asarray(q, dtype=float)
        center = np.asarray(center, dtype=float)

    def objective(a):
        val = float(np.sum(w * family.loss(z @ a, y)))
        if q is not None:
            d = a - center
            val += 0.5 * float(d @ q @ d)
        return val

    obj = objective(alpha)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = z @ alpha
        s1, s2, _ = family.loss_derivatives(eta, y)
        grad = z.T @ (w * s1)
        hess = (z * (w * s2)[:, None]).T @ z
        if q is not None:
            grad = grad + q @ (alpha - center)
            hess = hess + q
        if np.max(np.abs(grad)) <= tol:
            return alpha, True, iterations - 1
        step = _solve_spd(hess, grad, jitter=jitter)
        # backtracking: halve until the objective decreases; if no scale
        # helps (round-off floor), keep the current iterate
        accepted = False
        scale = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            candidate = alpha - scale * step
            cand_obj = objective(candidate)
            if cand_obj <= obj:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        alpha = candidate
        obj = cand_obj

    eta = z @ alpha
    s1, _, _ = family.loss_derivatives(eta, y)
    grad = z.T @ (w * s1)
    if q is not None:
        grad = grad + q @ (alpha - center)
    return alpha, bool(np.max(np.abs(grad)) <= tol), iterations


def fit_target_only(
    target: DomainSample, family: ModelFamily, *, jitter: bool = False
) -> np.ndarray:
    """Unpenalised target-domain estimate: OLS (Gaussian) or GLM MLE."""
    x, y = target.x, target.y
    if family.kind == "gaussian":
        return _solve_spd(x.T @ x, x.T @ y, jitter=jitter)
    w = np.full(target.n, 1.0 / target.n)
    alpha, _, _ = newton_weighted(x, w, y, family, np.zeros(target.p), jitter=jitter)
    return alpha


def fit_dvcm(
    domains: Sequence[DomainSample],
    u0: float,
    h: float,
    l: int,
    family: ModelFamily,
    *,
    jitter: bool = False,
) -> LocalFit:
    """Pooled local-polynomial fit of order ``l`` at ``u0`` with bandwidth ``h``.

    Gaussian solves the weighted normal equations in closed form; other
    families run the weighted Newton solver, initialised with the
    target-only estimate of the nearest domain in the leading block.
    """
    design = build_local_design(domains, u0, h, l)
    z, w, y = design.z, design.weights, design.y
    dim = z.shape[1]
    if family.kind == "gaussian":
        zw = z * w[:, None]
        alpha = _solve_spd(zw.T @ z, zw.T @ y, jitter=jitter)
        converged, iterations = True, 0
    else:
        init = np.zeros(dim)
        nearest = min(domains, key=lambda d: abs(d.u - u0))
        try:
            init[: design.p] = fit_target_only(nearest, family, jitter=jitter)
        except SingularSystemError:
            pass
        alpha, converged, iterations = newton_weighted(
            z, w, y, family, init, jitter=jitter
        )
    return LocalFit(
        alpha=alpha,
        theta=alpha[: design.p].copy(),
        design=design,
        converged=converged,
        iterations=iterations,
    )


def fit_tl(
    target_finetune: DomainSample,
    theta_pilot: np.ndarray,
    q: np.ndarray,
    family: ModelFamily,
    *,
    jitter: bool = False,
) -> TLFit:
    """Fine-tune a pilot estimate by ridge-penalised regression on the target.

    Minimises ``(1/n0) sum_i l(x_i' a, y_i) + 0.5 ||a - pilot||_Q^2``;
    for the Gaussian family this is the closed form
    ``(X'X/n0 + Q)^{-1} (X'y/n0 + Q pilot)``.
    """
    theta_pilot = np.asarray(theta_pilot, dtype=float)
    q = np.asarray(q, dtype=float)
    x, y = target_finetune.x, target_finetune.y
    n0 = target_finetune.n
    if family.kind == "gaussian":
        theta = _solve_spd(x.T @ x / n0 + q, x.T @ y / n0 + q @ theta_pilot, jitter=jitter)
        converged = True
    else:
        w = np.full(n0, 1.0 / n0)
        theta, converged, _ = newton_weighted(
            x, w, y, family, theta_pilot.copy(), penalty=(q, theta_pilot), jitter=jitter
        )
    return TLFit(theta_tl=theta, theta_pilot=theta_pilot, q=q, converged=converged)
