"""Data-driven shrinkage matrix for the transfer-learning fine-tune step.

The penalty ``Q_hat = delta * (nu_hat / n0) * M_hat^{-1}`` mimics the
oracle inverse-MSE weighting of the pilot estimator, where
``M_hat = bias bias' + V_hat`` combines a plug-in bias estimate with a
sandwich variance estimate.  The scale ``nu_hat`` comes from Pearson
residuals of the target-only fit on the pilot split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .design import DomainSample, domain_distances, poly_features, uniform_kernel
from .errors import DegenerateVarianceError, SingularSystemError
from .estimators import LocalFit, fit_dvcm, fit_target_only
from .families import ModelFamily

__all__ = [
    "PenaltyEstimate",
    "estimate_scale",
    "zeta_hat",
    "estimate_derivative",
    "estimate_bias",
    "estimate_variance_sandwich",
    "estimate_q",
]


@dataclass(frozen=True)
class PenaltyEstimate:
    """Shrinkage matrix with the ingredients it was assembled from.

    The definitional identity ``q @ (bias bias' + var) = delta*scale/n0 * I``
    holds to solver precision.
    """

    q: np.ndarray
    scale: float
    bias_vec: np.ndarray
    var_mat: np.ndarray
    delta: float
    n0: int
    diagnostics: dict = field(default_factory=dict)


def estimate_scale(
    target: DomainSample, theta_hat: np.ndarray, family: ModelFamily
) -> float:
    """Mean squared Pearson residual of the target-only fit.

    ``r_i^2 = (y_i - b'(x_i' theta))^2 / b''(x_i' theta)``; for the
    Gaussian family this is the plain mean squared residual.
    """
    eta = target.x @ np.asarray(theta_hat, dtype=float)
    mu = family.b1(eta)
    var = family.b2(eta)
    if np.any(var <= 0):
        raise DegenerateVarianceError(
            "b'' vanishes at an observation; Pearson residuals undefined"
        )
    r2 = (target.y - mu) ** 2 / var
    return float(np.mean(r2))


def zeta_hat(
    domains: Sequence[DomainSample], u0: float, h: float, l: int, r: int, s: int
) -> np.ndarray:
    """Sample moment matrix (nh)^{-1} sum_k n_k Phi_l(t_k) Phi_l(t_k)' t_k^r W(t_k)^s.

    ``n`` counts every observation in ``domains``; domains outside the
    kernel window contribute nothing, so the zero matrix is a legal
    output.
    """
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    n = sum(d.n for d in domains)
    out = np.zeros((l + 1, l + 1))
    for dom in domains:
        t = (dom.u - u0) / h
        w = float(uniform_kernel(t))
        if w == 0.0:
            continue
        phi = poly_features(t, l)
        out += dom.n * (t**r) * (w**s) * np.outer(phi, phi)
    return out / (n * h)


def _distinct_in_window(domains: Sequence[DomainSample], u0: float, h: float) -> int:
    us = {dom.u for dom in domains if abs(dom.u - u0) <= h}
    return len(us)


def estimate_derivative(
    domains: Sequence[DomainSample],
    u0: float,
    h: float,
    beta: int,
    family: ModelFamily,
) -> np.ndarray:
    """Estimate the beta-th derivative of theta at u0 by an order-beta local fit.

    Extracts the last ``p``-block of the stacked coefficients, rescaled by
    ``h^{-beta}``.  The fit needs at least ``beta + 1`` distinct domain
    identifiers inside the window; fit errors propagate.
    """
    if beta < 1 or int(beta) != beta:
        raise ValueError(f"derivative order must be a positive integer, got {beta}")
    beta = int(beta)
    fit = fit_dvcm(domains, u0, h, beta, family)
    p = fit.design.p
    return fit.alpha[beta * p :] / h**beta


def estimate_bias(
    domains: Sequence[DomainSample],
    u0: float,
    h: float,
    l: int,
    beta: int,
    family: ModelFamily,
    *,
    deriv_bandwidth: float | None = None,
) -> np.ndarray:
    """Plug-in bias of the order-``l`` pooled fit under smoothness ``beta``.

    ``[zeta_{0,1}^{-1} zeta_{beta,1}]_{1,1} * theta^(beta)(u0) * h^beta / beta!``
    with the zeta moments of the main fit.  The derivative fit reuses the
    main bandwidth unless ``deriv_bandwidth`` overrides it; when the
    window holds fewer than ``beta + 1`` distinct identifiers the
    derivative bandwidth is widened to the smallest feasible distance.
    """
    if int(beta) != beta or beta < 1:
        raise ValueError(f"bias estimation needs a positive integer beta, got {beta}")
    beta = int(beta)
    z01 = zeta_hat(domains, u0, h, l, 0, 1)
    zb1 = zeta_hat(domains, u0, h, l, beta, 1)
    rhs = zb1[:, 0]
    try:
        factor = float(cho_solve(cho_factor(z01, lower=True), rhs)[0])
    except LinAlgError:
        # singular moment matrix: a zero first column still has the exact
        # solution 0 (single-domain-at-center case); otherwise hard error
        if np.max(np.abs(rhs)) <= 1e-14 * max(1.0, np.max(np.abs(z01))):
            factor = 0.0
        else:
            raise SingularSystemError(
                "zeta_{0,1} moment matrix is singular",
                cond=float(np.linalg.cond(z01)),
            ) from None
    p = domains[0].p
    if factor == 0.0:
        return np.zeros(p)

    h_d = deriv_bandwidth if deriv_bandwidth is not None else h
    if _distinct_in_window(domains, u0, h_d) < beta + 1:
        us = sorted({abs(dom.u - u0) for dom in domains})
        if len(us) < beta + 1:
            raise SingularSystemError(
                f"derivative of order {beta} needs {beta + 1} distinct domain "
                f"identifiers; only {len(us)} available"
            )
        h_d = us[beta] * (1.0 + 1e-9)
    deriv = estimate_derivative(domains, u0, h_d, beta, family)
    return factor * deriv * h**beta / math.factorial(beta)


def estimate_variance_sandwich(fit: LocalFit, family: ModelFamily) -> np.ndarray:
    """Sandwich variance of the pooled local fit, on the estimator scale.

    ``A Lambda^{-1} Delta Lambda^{-1} A'`` with
    ``Delta = (nh)^{-2} sum s1^2 Z Z' W^2`` and
    ``Lambda = (nh)^{-1} sum s2 Z Z' W``, evaluated at the fitted stacked
    coefficients; ``A`` selects the leading ``p x p`` block.
    """
    design = fit.design
    z, y, kw = design.z, design.y, design.kernel_values
    nh = design.n_total * design.bandwidth
    s1, s2, _ = family.loss_derivatives(z @ fit.alpha, y)
    delta = (z * ((s1 * kw) ** 2)[:, None]).T @ z / nh**2
    lam = (z * (s2 * kw)[:, None]).T @ z / nh
    try:
        c = cho_factor(lam, lower=True)
    except LinAlgError:
        raise SingularSystemError(
            "sandwich bread matrix Lambda is singular",
            cond=float(np.linalg.cond(lam)),
        ) from None
    inner = cho_solve(c, cho_solve(c, delta).T)
    p = design.p
    v = inner[:p, :p]
    return 0.5 * (v + v.T)


def estimate_q(
    domains: Sequence[DomainSample],
    target_pilot_split: DomainSample,
    u0: float,
    h: float,
    l: int,
    beta: int,
    delta: float,
    family: ModelFamily,
    *,
    n0: int | None = None,
    deriv_bandwidth: float | None = None,
    pilot_fit: LocalFit | None = None,
    theta_glr: np.ndarray | None = None,
) -> PenaltyEstimate:
    """Assemble the data-driven shrinkage matrix from the pilot split.

    Parameters
    ----------
    domains : sequence of DomainSample
        Source domains; the pooled pilot fit uses them plus
        ``target_pilot_split``.
    target_pilot_split : DomainSample
        Target observations reserved for the pilot step; they feed the
        scale estimate so the penalty stays independent of the
        fine-tuning data.
    n0 : int, optional
        Sample size entering the ``scale / n0`` factor; defaults to the
        pilot-split size (the fine-tune split has the same size under the
        even-split protocol).
    deriv_bandwidth : float, optional
        Bandwidth of the order-``beta`` derivative fit inside the bias
        plug-in.  Defaults to ``h``; callers sweeping ``h`` should pass a
        rate-optimal bandwidth here, since the derivative of theta at
        ``u0`` is a local quantity independent of the sweep.
    pilot_fit, theta_glr : optional
        Reuse of already-computed ingredients; recomputed when omitted.
    """
    if not 0.5 < delta < 2.0:
        raise ValueError(f"delta must lie in (0.5, 2), got {delta}")
    pooled = [target_pilot_split, *domains]
    if pilot_fit is None:
        pilot_fit = fit_dvcm(pooled, u0, h, l, family)
    if theta_glr is None:
        theta_glr = fit_target_only(target_pilot_split, family)
    if n0 is None:
        n0 = target_pilot_split.n

    scale = estimate_scale(target_pilot_split, theta_glr, family)
    diagnostics: dict = {}
    if int(beta) != beta:
        # no plug-in bias form exists for fractional smoothness
        bias = np.zeros(target_pilot_split.p)
        diagnostics["bias_skipped_noninteger_beta"] = float(beta)
    else:
        bias = estimate_bias(pooled, u0, h, l, int(beta), family,
                             deriv_bandwidth=deriv_bandwidth)
    var = estimate_variance_sandwich(pilot_fit, family)

    m_hat = np.outer(bias, bias) + var
    m_hat = 0.5 * (m_hat + m_hat.T)
    try:
        m_inv = cho_solve(cho_factor(m_hat, lower=True), np.eye(m_hat.shape[0]))
    except LinAlgError:
        raise SingularSystemError(
            "pilot MSE matrix bias*bias' + V_hat is singular",
            cond=float(np.linalg.cond(m_hat)),
        ) from None
    q = delta * scale / n0 * m_inv
    q = 0.5 * (q + q.T)
    return PenaltyEstimate(
        q=q,
        scale=scale,
        bias_vec=bias,
        var_mat=var,
        delta=delta,
        n0=n0,
        diagnostics=diagnostics,
    )
