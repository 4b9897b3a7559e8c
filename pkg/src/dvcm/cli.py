"""Command-line surface: ``dvcm fit | simulate | phase | infer``.

``fit`` and ``infer`` run the real-data pipeline (ingest, filter, scale,
bin, split, pilot, penalty, fine-tune, covariance) and write a JSON
report; ``simulate`` and ``phase`` drive the Monte-Carlo harness and
write plot-ready CSV tables.  All stochastic choices are fixed by
``--seed``; reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .bandwidth import (
    BandwidthChoice,
    gamma_moment_estimate,
    select_bandwidth_median,
    select_bandwidth_undersmoothed,
)
from .design import DomainSample
from .errors import DvcmError, ParseError
from .estimators import fit_dvcm, fit_target_only, fit_tl
from .families import get_family
from .inference import (
    confidence_intervals,
    contrast_test,
    psi_hat,
    sigma_tl,
    v_hat_target,
    wald_test,
)
from .penalty import estimate_q, estimate_variance_sandwich
from .simulation import SimConfig, fit_loglog_slopes, mc_mse

__all__ = ["EstimateReport", "main"]


@dataclass
class EstimateReport:
    """Full fit report; serialises to JSON and re-parses losslessly."""

    u0: float
    family: str
    theta_lr: list
    theta_dvcm: list
    theta_tl: list
    q_hat: list
    bandwidth: dict
    covariance: dict
    se: list
    ci: list
    diagnostics: dict = field(default_factory=dict)
    tests: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "EstimateReport":
        return EstimateReport(**d)


def _listify(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _bandwidth_dict(choice: BandwidthChoice) -> dict:
    d = dataclasses.asdict(choice)
    return {k: v for k, v in d.items() if v is not None}


def _default_threads() -> int:
    env = os.environ.get("DVCM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]


def _parse_fractions(text: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if "/" in tok:
            num, den = tok.split("/")
            out.append(float(num) / float(den))
        else:
            out.append(float(tok))
    return out


# ------------------------------------------------------------------
# fit / infer pipeline
# ------------------------------------------------------------------


def _ingest(args) -> tuple[dataio.BinnedPanel, dict]:
    table = dataio.load_csv(
        args.data,
        u_column=args.u_col,
        x_columns=[c.strip() for c in args.x_cols.split(",") if c.strip()],
        y_column=args.y_col,
        add_intercept=not args.no_intercept,
        u_expr=args.u_expr,
    )
    mask = dataio.sigma_filter(table.u, k=args.sigma_k)
    kept = table.keep(mask)
    scaled = kept.replace_u(dataio.minmax_scale(kept.u))
    panel = dataio.bin_domains(scaled, n_bins=args.bins)
    diag = {
        "rows_read": table.n,
        "rows_kept": kept.n,
        "bins_occupied": len(panel.domains),
        "bin_counts": {str(d.u): d.n for d in panel.domains},
    }
    return panel, diag


def _run_fit_pipeline(args) -> EstimateReport:
    family = get_family(args.family)
    panel, diag = _ingest(args)

    mids = np.array([d.u for d in panel.domains])
    j = int(np.argmin(np.abs(mids - args.u0)))
    if abs(mids[j] - args.u0) > 1e-9:
        diag["u0_snapped_to_bin"] = float(mids[j])
    u0 = float(mids[j])
    target = panel.domains[j]
    sources = [d for i, d in enumerate(panel.domains) if i != j]
    if not sources:
        raise ValueError("no source domains left after binning")

    fractions = _parse_fractions(args.split)
    rng = np.random.default_rng(args.seed)
    parts = dataio.split_target(target, fractions, rng)
    pilot_part, fine_part = parts[0], parts[1]
    if len(parts) > 2:
        diag["test_split_rows"] = int(sum(p.n for p in parts[2:]))

    gamma = args.gamma if args.gamma is not None else gamma_moment_estimate(sources)
    if args.bandwidth == "auto":
        choice = select_bandwidth_median(
            sources, u0, args.beta, gamma, args.e0, n_extra=pilot_part.n
        )
    elif args.bandwidth == "undersmooth":
        choice = select_bandwidth_undersmoothed(
            sources, u0, args.beta, gamma, args.bw_c, args.epsilon,
            n_extra=pilot_part.n,
        )
    else:
        h = float(args.bandwidth)
        if h <= 0:
            raise ValueError(f"--bandwidth must be positive, got {h}")
        from .design import domain_distances

        _, d1, dK = domain_distances(sources, u0)
        choice = BandwidthChoice(h=h, rule="fixed", rate_term=h, d1=d1, dK=dK)
    h = choice.h

    train = DomainSample(
        u=u0,
        x=np.vstack([pilot_part.x, fine_part.x]),
        y=np.concatenate([pilot_part.y, fine_part.y]),
    )
    theta_lr = fit_target_only(train, family)
    dvcm_all = fit_dvcm([train, *sources], u0, h, args.order, family)

    pilot = fit_dvcm([pilot_part, *sources], u0, h, args.order, family)
    h_deriv = select_bandwidth_median(
        sources, u0, args.beta, gamma, args.e0, n_extra=pilot_part.n
    ).h
    pen = estimate_q(
        sources, pilot_part, u0, h, args.order, args.beta, args.delta, family,
        n0=fine_part.n, deriv_bandwidth=h_deriv, pilot_fit=pilot,
    )
    tl = fit_tl(fine_part, pilot.theta, pen.q, family)

    theta_lr_fine = fit_target_only(fine_part, family)
    psi = psi_hat(fine_part, theta_lr_fine, family)
    v_lr = v_hat_target(fine_part, theta_lr_fine, family)
    v_dvcm = estimate_variance_sandwich(pilot, family)
    cov = sigma_tl(psi, pen.q, v_lr, v_dvcm)
    se = np.sqrt(np.diag(cov.sigma_tl))
    ci = confidence_intervals(tl.theta_tl, cov.sigma_tl, args.level)

    diag.update(
        {
            "pilot_iterations": pilot.iterations,
            "pilot_converged": pilot.converged,
            "tl_converged": tl.converged,
            "penalty_scale": pen.scale,
            "penalty_bias": _listify(pen.bias_vec),
            "gamma_used": gamma,
            "splits": {"pilot": pilot_part.n, "finetune": fine_part.n},
        }
    )
    diag.update({f"penalty_{k}": v for k, v in pen.diagnostics.items()})

    return EstimateReport(
        u0=u0,
        family=family.kind,
        theta_lr=_listify(theta_lr),
        theta_dvcm=_listify(dvcm_all.theta),
        theta_tl=_listify(tl.theta_tl),
        q_hat=[_listify(row) for row in pen.q],
        bandwidth=_bandwidth_dict(choice),
        covariance={
            "sigma_tl": [_listify(r) for r in cov.sigma_tl],
            "psi_hat": [_listify(r) for r in cov.psi_hat],
            "v_lr": [_listify(r) for r in cov.v_lr],
            "v_dvcm": [_listify(r) for r in cov.v_dvcm],
            "b_q": [_listify(r) for r in cov.b_q],
        },
        se=_listify(se),
        ci=[_listify(row) for row in ci],
    )


def _write_report(report: EstimateReport, out: str | None) -> None:
    text = json.dumps(report.to_dict(), indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_fit(args) -> int:
    report = _run_fit_pipeline(args)
    _write_report(report, args.out)
    return 0


def cmd_infer(args) -> int:
    report = _run_fit_pipeline(args)
    theta = np.asarray(report.theta_tl)
    sigma = np.asarray(report.covariance["sigma_tl"])
    if args.null_theta is not None:
        null = np.asarray(_parse_float_list(args.null_theta))
        if null.size != theta.size:
            raise ValueError(
                f"--null-theta has {null.size} entries, expected {theta.size}"
            )
        stat, df, p = wald_test(theta, sigma, null)
        report.tests["wald"] = {
            "null": null.tolist(), "statistic": stat, "df": df, "p_value": p,
        }
    if args.contrast is not None:
        v = np.asarray(_parse_float_list(args.contrast))
        if v.size != theta.size:
            raise ValueError(f"--contrast has {v.size} entries, expected {theta.size}")
        z, p = contrast_test(theta, sigma, v, args.zeta)
        report.tests["contrast"] = {
            "v": v.tolist(), "zeta": args.zeta, "z": z, "p_value": p,
        }
    if not report.tests:
        raise ValueError("infer requires --null-theta and/or --contrast")
    _write_report(report, args.out)
    return 0


# ------------------------------------------------------------------
# simulate / phase
# ------------------------------------------------------------------

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}


def _load_config(args) -> SimConfig:
    values: dict = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(
                f"{args.config}: {exc.msg}", row=exc.lineno, column=str(exc.colno)
            ) from None
        unknown = set(values) - _CONFIG_FIELDS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    overrides = {
        "family": args.family, "p": args.p, "K": args.K, "n_bar": args.n_bar,
        "n0": args.n0, "gamma": args.gamma, "noise_sd": args.noise_sd,
        "reps": args.reps, "seed": args.seed, "theta_spec": args.theta_spec,
        "order": args.order, "beta": args.beta, "delta": args.delta,
        "e0": args.e0, "bw_c": args.bw_c, "bw_epsilon": args.epsilon,
        "q_mode": args.q_mode, "bandwidth_rule": args.bandwidth_rule,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SimConfig(**values)


def _format_row(cells) -> str:
    return ",".join(repr(c) if isinstance(c, float) else str(c) for c in cells)


def _write_table(path: str | None, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)] + [_format_row(r) for r in rows]
    text = "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        print(text, end="")


def cmd_simulate(args) -> int:
    config = _load_config(args)
    grid = _parse_float_list(args.grid) if args.grid else list(config.bandwidth_grid)
    if not grid:
        raise ValueError("simulate needs a bandwidth grid (--grid or config)")
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    rows = []
    for h in grid:
        for est in estimators:
            r = mc_mse(config, est, h, threads=args.threads)
            rows.append([float(h), est, r.mse, r.se, r.fails])
    _write_table(args.out, ["h", "estimator", "mse", "se", "fails"], rows)
    return 0


def cmd_phase(args) -> int:
    config = _load_config(args)
    grid = _parse_float_list(args.grid)
    if len(grid) < 2 * args.segments + 2:
        raise ValueError(
            f"grid of {len(grid)} points cannot support {args.segments} segments"
        )
    rows = []
    for x in grid:
        if args.vary == "K":
            cfg = dataclasses.replace(config, K=int(round(x)))
        elif args.vary == "gamma":
            cfg = dataclasses.replace(config, gamma=float(x))
        else:  # n: average source size
            cfg = dataclasses.replace(config, n_bar=int(round(x)))
        r = mc_mse(cfg, "tl", None, threads=args.threads)
        rows.append([float(x), "tl", r.mse, r.se, r.fails])
    _write_table(args.out, [args.vary, "estimator", "mse", "se", "fails"], rows)

    xs = [r[0] for r in rows]
    ys = [r[2] for r in rows]
    segments = fit_loglog_slopes(xs, ys, args.segments)
    slopes = {
        "vary": args.vary,
        "n_segments": args.segments,
        "segments": [{"start": s, "slope": sl} for s, sl in segments],
        "breakpoints": [s for s, _ in segments[1:]],
    }
    text = json.dumps(slopes, indent=2)
    if args.slopes_out:
        Path(args.slopes_out).write_text(text + "\n")
    else:
        print(text)
    return 0


# ------------------------------------------------------------------
# argument parsing
# ------------------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--u-col", default=None, help="domain identifier column")
    p.add_argument("--u-expr", default=None,
                   help="arithmetic expression over columns defining U")
    p.add_argument("--x-cols", required=True, help="comma-separated covariate columns")
    p.add_argument("--y-col", required=True, help="response column")
    p.add_argument("--no-intercept", action="store_true",
                   help="do not prepend an intercept column")
    p.add_argument("--u0", type=float, required=True, help="target domain identifier")
    p.add_argument("--family", default="gaussian",
                   choices=["gaussian", "logistic", "poisson"])
    p.add_argument("--order", type=int, default=1, help="local polynomial order l")
    p.add_argument("--beta", type=float, default=2.0, help="smoothness parameter")
    p.add_argument("--bandwidth", default="auto",
                   help="auto | undersmooth | positive number")
    p.add_argument("--gamma", type=float, default=None,
                   help="domain dispersion scale (default: moment estimate)")
    p.add_argument("--e0", type=float, default=1.0, help="median-rule constant")
    p.add_argument("--bw-c", type=float, default=1.0, help="undersmoothing constant")
    p.add_argument("--epsilon", type=float, default=0.2,
                   help="undersmoothing exponent bump")
    p.add_argument("--delta", type=float, default=1.0, help="penalty scale in (1/2, 2)")
    p.add_argument("--seed", type=int, default=0, help="root RNG seed")
    p.add_argument("--split", default="1/3,1/3,1/3",
                   help="target split fractions, e.g. 1/3,1/3,1/3")
    p.add_argument("--bins", type=int, default=10, help="number of identifier bins")
    p.add_argument("--sigma-k", type=float, default=3.0,
                   help="identifier outlier threshold in standard deviations")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    p.add_argument("--out", default=None, help="output report path (default: stdout)")


def _add_sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--family", default=None,
                   choices=["gaussian", "logistic", "poisson"])
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--n-bar", dest="n_bar", type=int, default=None)
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--theta-spec", dest="theta_spec", default=None,
                   choices=["paper_default", "tanh_pair"])
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--e0", type=float, default=None)
    p.add_argument("--bw-c", dest="bw_c", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--q-mode", dest="q_mode", default=None,
                   choices=["estimate", "oracle", "zero", "infinity"])
    p.add_argument("--bandwidth-rule", dest="bandwidth_rule", default=None,
                   choices=["fixed", "median", "undersmoothed"])
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker processes (env DVCM_THREADS)")
    p.add_argument("--out", default=None, help="output CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvcm",
        description="Adaptive transfer learning for domain-varying coefficient models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the three estimators on a CSV dataset")
    _add_data_args(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_infer = sub.add_parser("infer", help="fit plus Wald / contrast tests")
    _add_data_args(p_infer)
    p_infer.add_argument("--null-theta", default=None,
                         help="comma-separated null vector for the Wald test")
    p_infer.add_argument("--contrast", default=None,
                         help="comma-separated contrast vector")
    p_infer.add_argument("--zeta", type=float, default=0.0,
                         help="null value of the contrast")
    p_infer.set_defaults(func=cmd_infer)

    p_sim = sub.add_parser("simulate", help="Monte-Carlo MSE over a bandwidth grid")
    _add_sim_args(p_sim)
    p_sim.add_argument("--grid", default=None, help="comma-separated bandwidths")
    p_sim.add_argument("--estimators", default="lr,dvcm,tl",
                       help="comma-separated subset of lr,dvcm,tl")
    p_sim.set_defaults(func=cmd_simulate)

    p_phase = sub.add_parser("phase", help="phase-transition sweep with slope fit")
    _add_sim_args(p_phase)
    p_phase.add_argument("--vary", required=True, choices=["K", "gamma", "n"])
    p_phase.add_argument("--grid", required=True,
                         help="comma-separated grid for the varied parameter")
    p_phase.add_argument("--segments", type=int, default=3,
                         help="segments for the log-log slope fit")
    p_phase.add_argument("--slopes-out", default=None,
                         help="output path for the fitted slopes (default: stdout)")
    p_phase.set_defaults(func=cmd_phase)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DvcmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: cli: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
