"""Monte-Carlo harness: data generation, MSE experiments, diagnostics.

Replications are keyed by a counter-based stream scheme: every
(root seed, replication index, stream role) triple maps to an
independent generator, so replications are order-independent,
parallelisable, and bit-reproducible.  The target domain always
receives ``2 n0`` observations; the first half feeds the pooled pilot
and the penalty matrix, the second half the fine-tuning step and the
target-side covariance plug-ins.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, ndtr

from .bandwidth import select_bandwidth_median, select_bandwidth_undersmoothed
from .design import DomainSample
from .errors import DvcmError, ExperimentError, SingularSystemError
from .estimators import fit_dvcm, fit_target_only, fit_tl
from .families import get_family
from .inference import psi_hat, sigma_tl, v_hat_target, wald_test
from .penalty import estimate_q, estimate_variance_sandwich

__all__ = [
    "SimConfig",
    "TrueCoefficient",
    "rng_stream",
    "generate_dataset",
    "mc_mse",
    "McMseResult",
    "mc_inference",
    "InferenceRecords",
    "standardized_estimates",
    "fit_loglog_slopes",
    "ks_normality",
]

_ROLE_IDS = {"source_u": 0, "source_x": 1, "source_y": 2, "target_x": 3, "target_y": 4}

_ESTIMATORS = ("lr", "dvcm", "tl")
_Q_MODES = ("estimate", "oracle", "zero", "infinity")
_BW_RULES = ("fixed", "median", "undersmoothed")


@dataclass(frozen=True)
class SimConfig:
    """Configuration of one simulated experiment.

    ``bandwidth_grid`` drives MSE sweeps; ``bandwidth_rule`` selects the
    per-replication bandwidth when no explicit ``h`` is given.  ``q_mode``
    chooses the shrinkage matrix: data-driven (``estimate``), empirical
    oracle (``oracle``; two-pass, simulation only), or the limiting cases
    ``zero`` / ``infinity``.
    """

    family: str = "gaussian"
    p: int = 4
    K: int = 5
    n_bar: int = 120
    n0: int = 50
    gamma: float = 1.0
    u0: float = 0.0
    noise_sd: float = 0.5
    cov_rho: float = 0.7
    reps: int = 200
    seed: int = 0
    bandwidth_grid: tuple[float, ...] = ()
    theta_spec: str = "paper_default"
    order: int = 1
    beta: float = 2.0
    delta: float = 1.0
    e0: float = 1.0
    bw_c: float = 0.5
    bw_epsilon: float = 0.2
    bandwidth_rule: str = "median"
    q_mode: str = "estimate"

    def __post_init__(self):
        if min(self.p, self.K, self.n_bar, self.n0, self.reps) < 1:
            raise ValueError("p, K, n_bar, n0 and reps must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not -1.0 < self.cov_rho < 1.0:
            raise ValueError("cov_rho must lie in (-1, 1)")
        if self.q_mode not in _Q_MODES:
            raise ValueError(f"q_mode must be one of {_Q_MODES}")
        if self.bandwidth_rule not in _BW_RULES:
            raise ValueError(f"bandwidth_rule must be one of {_BW_RULES}")
        object.__setattr__(self, "bandwidth_grid", tuple(self.bandwidth_grid))

    @property
    def theta(self) -> "TrueCoefficient":
        return TrueCoefficient.from_spec(self.theta_spec, self.p)


@dataclass(frozen=True)
class TrueCoefficient:
    """Coefficient curve theta(u) used by the generators."""

    evaluator: Callable[[float], np.ndarray]

    @staticmethod
    def from_spec(name: str, p: int) -> "TrueCoefficient":
        if name == "paper_default":
            return TrueCoefficient(lambda u: _theta_paper_default(u, p))
        if name == "tanh_pair":
            return TrueCoefficient(lambda u: np.full(p, math.tanh(8.0 * (u - 0.2))))
        raise ValueError(f"unknown theta_spec {name!r}")

    def __call__(self, u: float) -> np.ndarray:
        return self.evaluator(u)


def _theta_paper_default(u: float, p: int) -> np.ndarray:
    g = abs(u) ** 3  # u^3 sign(u): continuous 2nd derivative, kinked 3rd
    th = np.empty(p)
    th[0] = -math.tanh(16.0 * (u - 0.2)) + g
    if p > 1:
        th[1] = math.exp(5.0 * u + 2.5) / 100.0 - 0.5 + g
    for j in range(2, p):
        th[j] = (-0.5) ** (j - 1) * math.exp(2.0 * u)
    return th


def rng_stream(seed: int, rep: int, role: str) -> np.random.Generator:
    """Independent generator for (root seed, replication, stream role)."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(rep, _ROLE_IDS[role]))
    )


def _draw_x(rng: np.random.Generator, n: int, p: int, rho: float) -> np.ndarray:
    """Intercept column plus N(0, Sigma) covariates with Sigma_ij = rho^|i-j|."""
    x = np.ones((n, p))
    if p > 1:
        q = p - 1
        idx = np.arange(q)
        cov = rho ** np.abs(idx[:, None] - idx[None, :])
        x[:, 1:] = rng.standard_normal((n, q)) @ np.linalg.cholesky(cov).T
    return x


def _draw_y(
    rng: np.random.Generator, eta: np.ndarray, family_kind: str, noise_sd: float
) -> np.ndarray:
    if family_kind == "gaussian":
        return eta + noise_sd * rng.standard_normal(eta.shape[0])
    if family_kind == "logistic":
        return rng.binomial(1, expit(eta)).astype(float)
    if family_kind == "poisson":
        return rng.poisson(np.exp(eta)).astype(float)
    raise ValueError(f"unknown family {family_kind!r}")


def generate_dataset(
    config: SimConfig, rep: int
) -> tuple[DomainSample, list[DomainSample]]:
    """Draw one replication: target domain of size 2 n0 plus K sources.

    Source identifiers are uniform on (-gamma/2, gamma/2); the target sits
    at ``u0``.  Streams are derived from (config.seed, rep) per role, so
    identical inputs reproduce identical data.
    """
    theta = config.theta
    u_rng = rng_stream(config.seed, rep, "source_u")
    us = u_rng.uniform(-config.gamma / 2.0, config.gamma / 2.0, config.K)

    sx_rng = rng_stream(config.seed, rep, "source_x")
    sy_rng = rng_stream(config.seed, rep, "source_y")
    sources = []
    for u in us:
        x = _draw_x(sx_rng, config.n_bar, config.p, config.cov_rho)
        eta = x @ theta(float(u))
        y = _draw_y(sy_rng, eta, config.family, config.noise_sd)
        sources.append(DomainSample(u=float(u), x=x, y=y))

    tx_rng = rng_stream(config.seed, rep, "target_x")
    ty_rng = rng_stream(config.seed, rep, "target_y")
    x0 = _draw_x(tx_rng, 2 * config.n0, config.p, config.cov_rho)
    eta0 = x0 @ theta(config.u0)
    y0 = _draw_y(ty_rng, eta0, config.family, config.noise_sd)
    target = DomainSample(u=config.u0, x=x0, y=y0)
    return target, sources


def _split_target_halves(target: DomainSample) -> tuple[DomainSample, DomainSample]:
    n0 = target.n // 2
    pilot = DomainSample(u=target.u, x=target.x[:n0], y=target.y[:n0])
    fine = DomainSample(u=target.u, x=target.x[n0:], y=target.y[n0:])
    return pilot, fine


def _choose_h(config: SimConfig, sources, h: float | None) -> float:
    if h is not None:
        return h
    if config.bandwidth_rule == "median":
        choice = select_bandwidth_median(
            sources, config.u0, config.beta, config.gamma, config.e0,
            n_extra=config.n0,
        )
    elif config.bandwidth_rule == "undersmoothed":
        choice = select_bandwidth_undersmoothed(
            sources, config.u0, config.beta, config.gamma, config.bw_c,
            config.bw_epsilon, n_extra=config.n0,
        )
    else:
        raise ValueError("bandwidth_rule 'fixed' requires an explicit h")
    return choice.h


def _replicate(
    config: SimConfig,
    rep: int,
    h: float | None,
    *,
    want_dvcm: bool = True,
    want_tl: bool = True,
    want_sigma: bool = False,
    q_matrix: np.ndarray | None = None,
) -> dict:
    """Run one replication; returns estimates or raises DvcmError."""
    family = get_family(config.family)
    target, sources = generate_dataset(config, rep)
    pilot_half, fine_half = _split_target_halves(target)

    out: dict = {"theta_true": config.theta(config.u0)}
    out["theta_lr"] = fit_target_only(fine_half, family)
    if not (want_dvcm or want_tl):
        return out

    h_rep = _choose_h(config, sources, h)
    out["h"] = h_rep
    pooled_fit = fit_dvcm([pilot_half, *sources], config.u0, h_rep, config.order, family)
    out["theta_dvcm"] = pooled_fit.theta
    if not want_tl:
        return out

    if q_matrix is not None:
        q = q_matrix
    elif config.q_mode in ("estimate", "oracle"):
        # oracle callers pass q_matrix; reaching here in oracle mode means
        # the single-replication path, where the data-driven matrix stands in.
        # The derivative plug-in always runs at the rate-optimal bandwidth:
        # theta^(beta)(u0) is a local quantity, independent of the swept h.
        h_deriv = select_bandwidth_median(
            sources, config.u0, config.beta, config.gamma, config.e0,
            n_extra=config.n0,
        ).h
        pen = estimate_q(
            sources, pilot_half, config.u0, h_rep, config.order, config.beta,
            config.delta, family, n0=fine_half.n, deriv_bandwidth=h_deriv,
            pilot_fit=pooled_fit,
        )
        q = pen.q
    elif config.q_mode == "zero":
        q = np.zeros((config.p, config.p))
    else:  # infinity
        q = 1e12 * np.eye(config.p)
    tl = fit_tl(fine_half, pooled_fit.theta, q, family)
    out["theta_tl"] = tl.theta_tl
    out["q"] = q

    if want_sigma:
        psi = psi_hat(fine_half, out["theta_lr"], family)
        v_lr = v_hat_target(fine_half, out["theta_lr"], family)
        v_dvcm = estimate_variance_sandwich(pooled_fit, family)
        report = sigma_tl(psi, q, v_lr, v_dvcm)
        diag = np.diag(report.sigma_tl)
        # variances at round-off scale (noiseless data) make the
        # standardisation meaningless: mark the replication failed
        if np.any(~np.isfinite(diag)) or np.any(diag <= 1e-28):
            raise SingularSystemError("degenerate Sigma_TL diagonal")
        out["sigma_tl"] = report.sigma_tl
    return out


@dataclass(frozen=True)
class McMseResult:
    mse: float
    se: float
    fails: int
    n_success: int


def _oracle_q_matrix(config: SimConfig, h: float | None) -> np.ndarray:
    """Empirical oracle penalty: true scale over the pilot's Monte-Carlo MSE.

    First pass over all replications collects the pilot's error outer
    products; their average replaces the unknown MSE matrix in the oracle
    formula.  Only available in simulation, where theta(u0) is known.
    """
    theta_true = config.theta(config.u0)
    m = np.zeros((config.p, config.p))
    count = 0
    for rep in range(config.reps):
        try:
            r = _replicate(config, rep, h, want_tl=False)
        except DvcmError:
            continue  # pilot infeasible this draw; the pass-2 replication fails too
        err = r["theta_dvcm"] - theta_true
        m += np.outer(err, err)
        count += 1
    if count == 0:
        raise ExperimentError("oracle pass: pilot failed in every replication")
    m /= count
    nu = config.noise_sd**2 if config.family == "gaussian" else 1.0
    return config.delta * nu / config.n0 * np.linalg.inv(0.5 * (m + m.T))


def _mse_worker(args) -> tuple[int, float | None]:
    config, estimator, h, q_matrix, rep = args
    try:
        r = _replicate(
            config, rep, h,
            want_dvcm=(estimator != "lr"),
            want_tl=(estimator == "tl"),
            q_matrix=q_matrix,
        )
        err = r[f"theta_{estimator}"] - r["theta_true"]
        return rep, float(err @ err)
    except DvcmError:
        return rep, None


def mc_mse(
    config: SimConfig, estimator: str, h: float | None = None, *, threads: int = 1
) -> McMseResult:
    """Monte-Carlo mean of ||theta_hat - theta(u0)||^2 with its standard error.

    Failed replications are skipped and counted; more than 20% failures
    aborts the experiment.  Results are averaged in replication order, so
    identical (config, seed) inputs give bit-identical outputs.
    """
    if estimator not in _ESTIMATORS:
        raise ValueError(f"estimator must be one of {_ESTIMATORS}")
    if config.reps < 2:
        raise ValueError("mc_mse needs at least 2 replications")
    q_matrix = None
    if estimator == "tl" and config.q_mode == "oracle":
        q_matrix = _oracle_q_matrix(config, h)

    jobs = [(config, estimator, h, q_matrix, rep) for rep in range(config.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_mse_worker, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_mse_worker(j) for j in jobs]
    results.sort(key=lambda t: t[0])
    errors = np.array([v for _, v in results if v is not None])
    fails = config.reps - errors.size
    if fails > 0.2 * config.reps:
        raise ExperimentError(
            f"{fails}/{config.reps} replications failed (> 20% tolerance)"
        )
    mse = float(np.mean(errors))
    se = float(np.std(errors, ddof=1) / np.sqrt(errors.size))
    return McMseResult(mse=mse, se=se, fails=fails, n_success=int(errors.size))


@dataclass(frozen=True)
class InferenceRecords:
    """Per-replication inference outcomes of the transfer estimator."""

    theta_tl: np.ndarray      # (m, p)
    se: np.ndarray            # (m, p)
    theta_true: np.ndarray    # (p,)
    wald_p: np.ndarray        # (m,)
    fails: int

    @property
    def standardized(self) -> np.ndarray:
        return (self.theta_tl - self.theta_true) / self.se

    def coverage(self, level: float = 0.95) -> np.ndarray:
        """Empirical per-coordinate CI coverage at the given level."""
        from .inference import normal_quantile

        z = normal_quantile(0.5 + level / 2.0)
        return np.mean(np.abs(self.standardized) <= z, axis=0)


def _inference_worker(args) -> tuple[int, dict | None]:
    config, h, rep = args
    try:
        return rep, _replicate(config, rep, h, want_sigma=True)
    except DvcmError:
        return rep, None


def mc_inference(
    config: SimConfig, h: float | None = None, *, threads: int = 1
) -> InferenceRecords:
    """Replicate the full pipeline with its covariance for normality studies.

    Uses the configured bandwidth rule (undersmoothed, for the normality
    experiments) unless an explicit ``h`` is supplied.
    """
    jobs = [(config, h, rep) for rep in range(config.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_inference_worker, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_inference_worker(j) for j in jobs]
    results.sort(key=lambda t: t[0])

    theta_true = config.theta(config.u0)
    thetas, ses, walds = [], [], []
    fails = 0
    for _, r in results:
        if r is None:
            fails += 1
            continue
        thetas.append(r["theta_tl"])
        ses.append(np.sqrt(np.diag(r["sigma_tl"])))
        stat, df, p = wald_test(r["theta_tl"], r["sigma_tl"], theta_true)
        walds.append(p)
    if fails > 0.2 * config.reps:
        raise ExperimentError(
            f"{fails}/{config.reps} replications failed (> 20% tolerance)"
        )
    return InferenceRecords(
        theta_tl=np.array(thetas),
        se=np.array(ses),
        theta_true=theta_true,
        wald_p=np.array(walds),
        fails=fails,
    )


def standardized_estimates(
    config: SimConfig, reps: int | None = None, *, threads: int = 1
) -> tuple[np.ndarray, int]:
    """Standardized transfer estimates (theta_tl - theta) / se per replication.

    Returns ``(matrix, fail_count)`` where the matrix has one row per
    successful replication; failures (including degenerate standard
    errors) are dropped rather than propagated as NaN.
    """
    if reps is not None:
        config = dataclasses.replace(config, reps=reps)
    rec = mc_inference(config, threads=threads)
    return rec.standardized, rec.fails


def fit_loglog_slopes(
    xs: Sequence[float], ys: Sequence[float], n_segments: int
) -> list[tuple[float, float]]:
    """Continuous piecewise-linear least squares in log-log space.

    Breakpoints are searched exhaustively over the grid points; each
    segment must span at least two grid intervals.  Returns one
    ``(segment_start_x, slope)`` pair per segment, in original units.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise ValueError("xs and ys must be one-dimensional with equal length")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    if xs.size < 2 * n_segments + 2:
        raise ValueError(
            f"need at least {2 * n_segments + 2} points for {n_segments} segments"
        )
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit requires positive xs and ys")
    lx, ly = np.log(xs), np.log(ys)
    n = xs.size

    def knot_combos(n_knots: int):
        # interior grid indices, each segment covering >= 2 grid intervals
        def rec(start: int, left: int):
            if left == 0:
                yield ()
                return
            for i in range(start, n - 2 * left):
                for rest in rec(i + 2, left - 1):
                    yield (i, *rest)

        yield from rec(2, n_knots)

    best = None
    for combo in knot_combos(n_segments - 1) if n_segments > 1 else [()]:
        cols = [np.ones(n), lx]
        for i in combo:
            cols.append(np.maximum(lx - lx[i], 0.0))
        a = np.column_stack(cols)
        coef, _, _, _ = np.linalg.lstsq(a, ly, rcond=None)
        sse = float(np.sum((a @ coef - ly) ** 2))
        if best is None or sse < best[0] - 1e-15:
            best = (sse, combo, coef)

    _, combo, coef = best
    slopes = np.cumsum(coef[1:])
    starts = [float(xs[0])] + [float(xs[i]) for i in combo]
    return list(zip(starts, [float(s) for s in slopes]))


def ks_normality(samples: Sequence[float]) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against the standard normal.

    Returns ``(D, p)`` with the p-value from the asymptotic Kolmogorov
    series (100 terms).  Requires at least 8 samples.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 8:
        raise ValueError(f"KS test requires at least 8 samples, got {n}")
    cdf = ndtr(x)
    grid = np.arange(1, n + 1) / n
    d = float(max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / n))))
    lam = np.sqrt(n) * d
    j = np.arange(1, 101)
    p = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j**2 * lam**2))
    return d, float(min(max(p, 0.0), 1.0))
