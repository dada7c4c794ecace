"""Seeded replication harness for the central limit behavior of the
regularized kernel estimator.

For a finite-support population P the limit objects (covariance matrix of
the scaled estimation error on a grid, and the scalar risk scale) are
computable exactly by the derivative module. This module samples data,
re-solves, and compares the empirical law of sqrt(n) * (f_hat - f_0) on
the grid against that Gaussian limit: per-coordinate Anderson-Darling
tests, 95% interval coverage, and a Kolmogorov-Smirnov distance for the
scaled risk deviations.

Determinism contract: every replication draws from its own counter-based
stream keyed by (seed, n, r), the data are drawn before any lambda-rule
randomness, and aggregation folds in (n, r) order. Identical configs give
bit-identical reports regardless of worker count.
"""
from __future__ import annotations

import concurrent.futures
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .derivative import build_context, plugin_covariance
from .errors import InputError, NumericError
from .kernels import KernelSpec
from .losses import make_loss
from .measures import FiniteMeasure, sample
from .svm_solver import risk, solve

_LAMBDA_RULES = ("fixed", "shrinking", "random_shrinking")

# Upper-tail critical values for the Anderson-Darling statistic with a
# fully specified null (no estimated parameters).
AD_CRITICAL = {0.10: 1.933, 0.05: 2.492, 0.025: 3.070, 0.01: 3.878}


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, picklable description of one replication experiment.

    The loss travels as (name, params) so worker processes can rebuild it.
    lambda_rule: "fixed" uses lambda0 everywhere; "shrinking" uses
    lambda0 + c / sqrt(n ln n); "random_shrinking" scales c by a uniform
    draw taken from the replication stream after the data.
    """

    P: FiniteMeasure
    kernel: KernelSpec
    loss_name: str
    loss_params: dict
    lambda0: float
    lambda_rule: str = "fixed"
    lambda_c: float = 1.0
    n_values: tuple = (100, 400, 1600)
    replications: int = 500
    grid: np.ndarray | None = None
    seed: int = 0
    max_iter: int = 200
    workers: int | None = None
    max_failure_fraction: float = 0.01
    degenerate_tol: float = 1e-6

    def __post_init__(self):
        if not self.P.is_probability:
            raise InputError("experiment population must be a probability measure")
        if not self.lambda0 > 0:
            raise InputError("lambda0 must be > 0")
        if self.lambda_rule not in _LAMBDA_RULES:
            raise InputError(f"lambda_rule must be one of {_LAMBDA_RULES}")
        if not self.lambda_c >= 0:
            raise InputError("lambda_c must be >= 0")
        ns = tuple(int(n) for n in self.n_values)
        floor = 1 if self.lambda_rule == "fixed" else 2
        if not ns or any(n < floor for n in ns):
            raise InputError(f"n_values must all be >= {floor} for rule {self.lambda_rule!r}")
        object.__setattr__(self, "n_values", ns)
        object.__setattr__(self, "loss_params", dict(self.loss_params))
        if int(self.replications) < 1:
            raise InputError("replications must be >= 1")
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "seed", int(self.seed))
        if self.seed < 0:
            raise InputError("seed must be a nonnegative integer")
        if int(self.max_iter) < 1:
            raise InputError("max_iter must be >= 1")
        if self.workers is not None and int(self.workers) < 1:
            raise InputError("workers must be >= 1 when given")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.ndim == 1:
                g = g.reshape(-1, self.P.dim)
            if g.ndim != 2 or g.shape[1] != self.P.dim or g.shape[0] == 0:
                raise InputError("grid must be a nonempty (m, d) array matching P")
            g.setflags(write=False)
            object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class NStats:
    """Aggregates for one sample size: raw scaled deviations and the
    statistics derived from them."""

    n: int
    failures: int
    deviations: np.ndarray        # (R_ok, m)
    risk_deviations: np.ndarray   # (R_ok,)
    empirical_cov: np.ndarray     # (m, m), unbiased
    mean_deviation: np.ndarray    # (m,)
    ad_statistic: np.ndarray      # (m,)
    ad_pass_05: tuple
    ad_pass_01: tuple
    coverage: tuple               # per point, None where the limit variance is 0
    risk_ks: float
    risk_mean: float


@dataclass(frozen=True)
class CltReport:
    config: ExperimentConfig
    grid: np.ndarray
    f0_grid: np.ndarray
    risk0: float
    sigma_matrix: np.ndarray
    risk_sigma: float
    per_n: tuple

    def to_dict(self) -> dict:
        """JSON-ready dict; deterministic field order and float repr.

        Raw deviation samples are left out (the CLI writes them as CSV);
        everything needed to audit the statistics is included.
        """
        cfg = self.config
        return {
            "config": {
                "population": {
                    "xs": cfg.P.xs.tolist(),
                    "ys": cfg.P.ys.tolist(),
                    "weights": cfg.P.weights.tolist(),
                },
                "kernel": {
                    "family": cfg.kernel.family,
                    "input_dim": cfg.kernel.input_dim,
                    "gamma": cfg.kernel.gamma,
                    "degree": cfg.kernel.degree,
                    "offset": cfg.kernel.offset,
                    "scale": cfg.kernel.scale,
                },
                "loss_name": cfg.loss_name,
                "loss_params": {k: cfg.loss_params[k] for k in sorted(cfg.loss_params)},
                "lambda0": cfg.lambda0,
                "lambda_rule": cfg.lambda_rule,
                "lambda_c": cfg.lambda_c,
                "n_values": list(cfg.n_values),
                "replications": cfg.replications,
                "seed": cfg.seed,
                "max_iter": cfg.max_iter,
            },
            "grid": self.grid.tolist(),
            "f0_grid": self.f0_grid.tolist(),
            "risk0": self.risk0,
            "sigma_matrix": self.sigma_matrix.tolist(),
            "risk_sigma": self.risk_sigma,
            "per_n": [
                {
                    "n": s.n,
                    "failures": s.failures,
                    "replications_used": int(s.deviations.shape[0]),
                    "mean_deviation": s.mean_deviation.tolist(),
                    "empirical_cov": s.empirical_cov.tolist(),
                    "ad_statistic": s.ad_statistic.tolist(),
                    "ad_pass_05": list(s.ad_pass_05),
                    "ad_pass_01": list(s.ad_pass_01),
                    "coverage": list(s.coverage),
                    "risk_ks": s.risk_ks,
                    "risk_mean": s.risk_mean,
                }
                for s in self.per_n
            ],
        }


def default_grid(P: FiniteMeasure) -> np.ndarray:
    """Atom locations of P plus all pairwise midpoints, deduplicated.

    The limit covariance is largest and best conditioned near the support,
    so this is where certification has power.
    """
    xs = P.xs
    rows = [xs[i] for i in range(xs.shape[0])]
    for i in range(xs.shape[0]):
        for j in range(i + 1, xs.shape[0]):
            rows.append(0.5 * (xs[i] + xs[j]))
    seen = set()
    out = []
    for row in rows:
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(row)
    return np.asarray(out, dtype=float)


def _lambda_value(rule: str, lambda0: float, c: float, n: int, u: float) -> float:
    if rule == "fixed":
        return lambda0
    shrink = c / math.sqrt(n * math.log(n))
    if rule == "shrinking":
        return lambda0 + shrink
    return lambda0 + u * shrink


def _replication_stream(seed: int, n: int, r: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(n, r))
    return np.random.Generator(np.random.Philox(ss))


def _one_replication(cfg: ExperimentConfig, loss, n: int, r: int,
                     grid: np.ndarray, f0_grid: np.ndarray, risk0: float):
    """(deviation row, risk deviation) for one resample, or None on solver
    failure. The uniform for the random rule is drawn after the data so
    all rules see identical samples."""
    rng = _replication_stream(cfg.seed, n, r)
    xs, ys = sample(cfg.P, n, rng)
    u = float(rng.random()) if cfg.lambda_rule == "random_shrinking" else 0.0
    lam = _lambda_value(cfg.lambda_rule, cfg.lambda0, cfg.lambda_c, n, u)
    # dedup with exact count/n weights; with finite-support P the distinct
    # row count stays tiny however large n gets
    uniq, counts = np.unique(np.column_stack([xs, ys]), axis=0, return_counts=True)
    mu = FiniteMeasure(uniq[:, :-1], uniq[:, -1], counts.astype(float) / n)
    try:
        rep = solve(mu, loss, cfg.kernel, lam, max_iter=cfg.max_iter)
    except NumericError:
        return None
    if not rep.converged:
        return None
    f = rep.solution
    root_n = math.sqrt(n)
    dev = root_n * (f.eval(grid) - f0_grid)
    rdev = root_n * (risk(cfg.P, loss, f) - risk0)
    return dev, rdev


def _chunk_worker(args):
    cfg, n, r_start, r_stop, grid, f0_grid, risk0 = args
    loss = make_loss(cfg.loss_name, **cfg.loss_params)
    return r_start, [
        _one_replication(cfg, loss, n, r, grid, f0_grid, risk0)
        for r in range(r_start, r_stop)
    ]


def _run_size(cfg: ExperimentConfig, loss, n: int, grid, f0_grid, risk0,
              workers: int):
    """All replications for one n, in r order regardless of scheduling."""
    R = cfg.replications
    if workers <= 1 or R < 4:
        return [_one_replication(cfg, loss, n, r, grid, f0_grid, risk0)
                for r in range(R)]
    step = max(1, -(-R // (workers * 4)))
    tasks = [(cfg, n, a, min(a + step, R), grid, f0_grid, risk0)
             for a in range(0, R, step)]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_chunk_worker, tasks))
    parts.sort(key=lambda p: p[0])
    return [item for _, chunk in parts for item in chunk]


def _coverage_row(devs: np.ndarray, sigma_diag: np.ndarray) -> tuple:
    """95% interval coverage per grid point; None where the limit variance
    vanishes (interval degenerates, point skipped)."""
    out = []
    for i in range(devs.shape[1]):
        if sigma_diag[i] <= 0:
            out.append(None)
        else:
            half = 1.96 * math.sqrt(sigma_diag[i])
            out.append(float(np.mean(np.abs(devs[:, i]) <= half)))
    return tuple(out)


def resolve_workers(requested) -> int:
    """requested, else the SVMCLT_WORKERS environment variable, else 1."""
    if requested is not None:
        return int(requested)
    env = os.environ.get("SVMCLT_WORKERS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"SVMCLT_WORKERS must be an integer: {env!r}") from exc
    return 1


def run_clt_experiment(cfg: ExperimentConfig) -> CltReport:
    """Sample, solve, and aggregate; deterministic given cfg.

    Replications whose solver fails are excluded and counted; more than
    max_failure_fraction of them for any n aborts with NumericError.
    """
    loss = make_loss(cfg.loss_name, **cfg.loss_params)
    grid = cfg.grid if cfg.grid is not None else default_grid(cfg.P)
    ctx = build_context(cfg.P, loss, cfg.kernel, cfg.lambda0, extra_points=grid)
    est = plugin_covariance(ctx, grid, also_risk=True)
    f0_grid = ctx.f_F.eval(grid)
    risk0 = risk(cfg.P, loss, ctx.f_F)
    sigma_diag = np.diag(est.sigma_matrix)
    workers = resolve_workers(cfg.workers)

    per_n = []
    for n in cfg.n_values:
        results = _run_size(cfg, loss, n, grid, f0_grid, risk0, workers)
        failures = sum(1 for item in results if item is None)
        if failures > cfg.max_failure_fraction * cfg.replications:
            raise NumericError(
                f"{failures}/{cfg.replications} replications failed at n={n}"
            )
        kept = [item for item in results if item is not None]
        if len(kept) < 2:
            raise NumericError(f"not enough successful replications at n={n}")
        devs = np.asarray([d for d, _ in kept])
        rdevs = np.asarray([rd for _, rd in kept])
        emp = np.atleast_2d(np.cov(devs, rowvar=False, ddof=1))
        emp = 0.5 * (emp + emp.T)

        ad_stats, p05, p01 = [], [], []
        for i in range(devs.shape[1]):
            res05 = normality_test(devs[:, i], 0.0, sigma_diag[i],
                                   alpha=0.05, degenerate_tol=cfg.degenerate_tol)
            res01 = normality_test(devs[:, i], 0.0, sigma_diag[i],
                                   alpha=0.01, degenerate_tol=cfg.degenerate_tol)
            ad_stats.append(res05.statistic)
            p05.append(res05.passed)
            p01.append(res01.passed)

        for a in (devs, rdevs, emp):
            a.setflags(write=False)
        per_n.append(NStats(
            n=n,
            failures=failures,
            deviations=devs,
            risk_deviations=rdevs,
            empirical_cov=emp,
            mean_deviation=devs.mean(axis=0),
            ad_statistic=np.asarray(ad_stats),
            ad_pass_05=tuple(p05),
            ad_pass_01=tuple(p01),
            coverage=_coverage_row(devs, sigma_diag),
            risk_ks=ks_statistic(rdevs, 0.0, est.risk_sigma**2,
                                 degenerate_tol=cfg.degenerate_tol),
            risk_mean=float(rdevs.mean()),
        ))

    return CltReport(
        config=cfg, grid=np.asarray(grid, dtype=float), f0_grid=f0_grid,
        risk0=risk0, sigma_matrix=est.sigma_matrix,
        risk_sigma=est.risk_sigma, per_n=tuple(per_n),
    )


@dataclass(frozen=True)
class NormalityResult:
    statistic: float
    passed: bool
    alpha: float
    critical_value: float
    degenerate: bool


def normality_test(samples, mu: float, sigma2: float, alpha: float = 0.05,
                   degenerate_tol: float = 1e-6) -> NormalityResult:
    """Anderson-Darling test of samples against the normal(mu, sigma2).

    The null is fully specified (no estimated parameters), so the
    statistic is compared against the classical case-0 critical values in
    AD_CRITICAL. With sigma2 = 0 the null is the point mass at mu and the
    test degenerates to max|sample - mu| <= degenerate_tol, reported with
    that deviation as the statistic.
    """
    s = np.asarray(samples, dtype=float).reshape(-1)
    if s.size == 0:
        raise InputError("normality_test requires a nonempty sample")
    if not np.all(np.isfinite(s)):
        raise NumericError("normality_test: non-finite sample values")
    if not sigma2 >= 0:
        raise InputError("sigma2 must be >= 0")
    if alpha not in AD_CRITICAL:
        raise InputError(f"alpha must be one of {sorted(AD_CRITICAL)}")
    if sigma2 == 0.0:
        stat = float(np.max(np.abs(s - mu)))
        return NormalityResult(statistic=stat, passed=stat <= degenerate_tol,
                               alpha=alpha, critical_value=degenerate_tol,
                               degenerate=True)
    y = np.sort((s - mu) / math.sqrt(sigma2))
    n = y.size
    lz = log_ndtr(y)
    lsf = log_ndtr(-y)
    coef = 2.0 * np.arange(1, n + 1) - 1.0
    a2 = -n - float(np.mean(coef * (lz + lsf[::-1])))
    crit = AD_CRITICAL[alpha]
    return NormalityResult(statistic=a2, passed=a2 <= crit, alpha=alpha,
                           critical_value=crit, degenerate=False)


def ks_statistic(samples, mu: float, sigma2: float,
                 degenerate_tol: float = 1e-6) -> float:
    """Kolmogorov-Smirnov distance between the sample and normal(mu, sigma2).

    sigma2 = 0 compares against the point mass at mu: 0.0 when every
    sample is within degenerate_tol of mu, else 1.0.
    """
    s = np.asarray(samples, dtype=float).reshape(-1)
    if s.size == 0:
        raise InputError("ks_statistic requires a nonempty sample")
    if not sigma2 >= 0:
        raise InputError("sigma2 must be >= 0")
    if sigma2 == 0.0:
        return 0.0 if float(np.max(np.abs(s - mu))) <= degenerate_tol else 1.0
    z = ndtr(np.sort((s - mu) / math.sqrt(sigma2)))
    n = z.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - z), np.max(z - (i - 1) / n)))


def coverage_check(report: CltReport) -> dict:
    """Recompute 95% interval coverage from the stored deviations.

    Returns {n: per-point tuple}; None entries mark points skipped because
    the plug-in variance there is zero.
    """
    sigma_diag = np.diag(report.sigma_matrix)
    return {s.n: _coverage_row(s.deviations, sigma_diag) for s in report.per_n}
