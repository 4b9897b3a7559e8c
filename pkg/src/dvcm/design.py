"""Kernel weights, polynomial features, and the stacked local design.

The local-polynomial estimators regress on rows ``Phi_l(t_k) (x) X_ki``
where ``t_k = (U_k - u0) / h`` and ``(x)`` is the Kronecker product.
:func:`build_local_design` assembles those rows for every observation
whose domain falls inside the kernel window and normalises the kernel
weights by their total mass ``S_h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyWindowError

__all__ = [
    "DomainSample",
    "LocalDesign",
    "uniform_kernel",
    "poly_features",
    "build_local_design",
    "domain_distances",
]


@dataclass(frozen=True)
class DomainSample:
    """One domain: identifier ``u``, covariates ``x`` (n, p), responses ``y`` (n,)."""

    u: float
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"x has {x.shape[0]} rows but y has {y.shape[0]} entries"
            )
        if x.shape[0] < 1:
            raise ValueError("a domain needs at least one observation")
        if not (np.isfinite(self.u) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite value in domain sample")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class LocalDesign:
    """Stacked kernel-weighted design around ``center``.

    Rows with zero kernel weight are dropped before solving; ``n_total``
    still counts every observation that was offered, which is the ``n``
    entering the ``(nh)`` scalings of the variance estimators.
    ``weights`` are normalised by ``s_h`` and sum to one;
    ``kernel_values`` keep the raw ``W(t_k)`` per kept row.
    """

    z: np.ndarray              # (N_eff, (l+1) p)
    y: np.ndarray              # (N_eff,)
    weights: np.ndarray        # (N_eff,), W(t_k) / S_h
    kernel_values: np.ndarray  # (N_eff,), raw W(t_k)
    s_h: float
    order: int
    bandwidth: float
    center: float
    row_domain: np.ndarray     # (N_eff,) index into the input domain sequence
    n_total: int
    p: int

    @property
    def n_rows(self) -> int:
        return self.z.shape[0]


def uniform_kernel(t):
    """Uniform kernel W(t) = 1/2 on |t| <= 1 (boundary included), 0 outside."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) <= 1.0, 0.5, 0.0)


def poly_features(t: float, l: int) -> np.ndarray:
    """Polynomial feature map (1, t, t^2/2!, ..., t^l/l!)."""
    if l < 0:
        raise ValueError(f"polynomial order must be >= 0, got {l}")
    return np.array([t**j / math.factorial(j) for j in range(l + 1)])


def build_local_design(
    domains: Sequence[DomainSample], u0: float, h: float, l: int
) -> LocalDesign:
    """Stack ``Phi_l((U_k - u0)/h) (x) X_ki`` over all in-window observations.

    Parameters
    ----------
    domains : sequence of DomainSample
        Every domain contributing to the pooled fit (target split included
        when the caller pools it).
    u0, h, l : float, float, int
        Evaluation point, bandwidth (> 0), polynomial order.

    Raises
    ------
    EmptyWindowError
        If no domain satisfies ``|U_k - u0| <= h``; the error carries the
        nearest domain distance as a bandwidth hint.
    """
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if l < 0:
        raise ValueError(f"polynomial order must be >= 0, got {l}")
    if not domains:
        raise ValueError("at least one domain is required")
    p = domains[0].p
    if any(d.p != p for d in domains):
        raise ValueError("all domains must share the same covariate dimension")

    n_total = sum(d.n for d in domains)
    z_blocks, y_blocks, w_blocks, idx_blocks = [], [], [], []
    s_h = 0.0
    for k, dom in enumerate(domains):
        t = (dom.u - u0) / h
        w = float(uniform_kernel(t))
        if w == 0.0:
            continue
        s_h += w * dom.n
        phi = poly_features(t, l)
        # row-wise Kronecker: each row X_ki expands to (phi_0 x, ..., phi_l x)
        z_blocks.append(np.kron(phi, dom.x))
        y_blocks.append(dom.y)
        w_blocks.append(np.full(dom.n, w))
        idx_blocks.append(np.full(dom.n, k, dtype=int))

    if not z_blocks:
        dists = [abs(d.u - u0) for d in domains]
        d1 = min(dists)
        raise EmptyWindowError(
            f"no domain within bandwidth {h} of u0={u0}; nearest at distance {d1}",
            d1=d1,
        )

    kernel_values = np.concatenate(w_blocks)
    return LocalDesign(
        z=np.vstack(z_blocks),
        y=np.concatenate(y_blocks),
        weights=kernel_values / s_h,
        kernel_values=kernel_values,
        s_h=s_h,
        order=l,
        bandwidth=h,
        center=u0,
        row_domain=np.concatenate(idx_blocks),
        n_total=n_total,
        p=p,
    )


def domain_distances(
    domains: Sequence[DomainSample], u0: float
) -> tuple[np.ndarray, float, float]:
    """Sorted distances |u0 - U_k| over source domains, with d_(1) and d_(K).

    The target always sits at distance zero, so callers pass source
    domains only; an empty sequence is an argument error.
    """
    if not domains:
        raise ValueError("at least one source domain is required")
    d = np.sort(np.abs(np.array([dom.u for dom in domains]) - u0))
    return d, float(d[0]), float(d[-1])
