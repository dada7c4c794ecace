"""Command-line front end.

One TOML config file drives one run. Shared sections [measure], [kernel],
[loss], [output] describe the inputs and where results go; each subcommand
reads its own section ([solve], [influence], [covariance], [degeneracy],
[fd_check], [mc_clt], [mollify_table]) for the remaining parameters.
Paths inside the config resolve relative to the config file's directory.

Exit codes: 0 success, 1 input error, 2 numerical failure. Diagnostics go
to stderr prefixed "ERROR:"; data goes only to the declared output files.
Every JSON report embeds the package version and the fully resolved
configuration, so a report is a complete record of its run.
"""
from __future__ import annotations

import argparse
import csv
import json
import pathlib
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .derivative import (build_context, degeneracy_check, gateaux_fd_check,
                         influence_function, plugin_covariance)
from .errors import InputError, InternalError, NumericError
from .kernels import KernelSpec, RkhsFunction
from .losses import eps_insensitive, hinge, make_loss, mollify
from .measures import combine, dirac, read_measure_csv
from .montecarlo import ExperimentConfig, default_grid, run_clt_experiment
from .svm_solver import solve

_COMMANDS = ("solve", "influence", "covariance", "degeneracy", "fd-check",
             "mc-clt", "mollify-table")


class _Parser(argparse.ArgumentParser):
    """argparse that reports problems through the error taxonomy."""

    def error(self, message):
        raise InputError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="svmclt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed where one applies")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        _dispatch(args)
        return 0
    except InputError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1
    except (NumericError, InternalError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 2


# -- config plumbing ---------------------------------------------------------

_REQUIRED = object()


def _load_config(path_str: str):
    path = pathlib.Path(path_str)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        return tomllib.loads(text), path.parent
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"malformed config {path}: {exc}") from exc


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise InputError(f"config is missing the [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise InputError(f"[{name}] must be a table")
    return dict(sec)


def _take(sec: dict, section: str, key: str, default=_REQUIRED):
    if key in sec:
        return sec.pop(key)
    if default is _REQUIRED:
        raise InputError(f"[{section}] is missing required key {key!r}")
    return default


def _done(sec: dict, section: str) -> None:
    if sec:
        raise InputError(f"[{section}] has unknown keys: {sorted(sec)}")


def _kernel_from(cfg: dict) -> KernelSpec:
    sec = _section(cfg, "kernel")
    kwargs = {
        "family": str(_take(sec, "kernel", "family")),
        "input_dim": int(_take(sec, "kernel", "input_dim")),
    }
    for key in ("gamma", "degree", "offset", "scale"):
        if key in sec:
            kwargs[key] = sec.pop(key)
    _done(sec, "kernel")
    return KernelSpec(**kwargs)


def _loss_from(cfg: dict):
    sec = _section(cfg, "loss")
    name = str(_take(sec, "loss", "name"))
    params = dict(sec)
    return make_loss(name, **params), name, params


def _measure_from(cfg: dict, base_dir: pathlib.Path):
    sec = _section(cfg, "measure")
    rel = str(_take(sec, "measure", "path"))
    _done(sec, "measure")
    return read_measure_csv(base_dir / rel), rel


def _output_paths(cfg: dict, base_dir: pathlib.Path) -> dict:
    sec = _section(cfg, "output", required=False)
    out = {}
    for key in ("json", "csv", "csv_prefix"):
        if key in sec:
            out[key] = base_dir / str(sec.pop(key))
    _done(sec, "output")
    return out


def _kernel_echo(k: KernelSpec) -> dict:
    return {"family": k.family, "input_dim": k.input_dim, "gamma": k.gamma,
            "degree": k.degree, "offset": k.offset, "scale": k.scale}


def _function_dict(f: RkhsFunction) -> dict:
    return {"anchors": f.anchors.tolist(),
            "coefficients": f.coefficients.tolist(),
            "norm_h": f.norm_h()}


def _write_json(path: pathlib.Path, payload: dict) -> None:
    body = {"version": __version__, **payload}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    print(f"wrote {path}", file=sys.stderr)


def _write_csv(path: pathlib.Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    print(f"wrote {path}", file=sys.stderr)


def _require_json(outputs: dict, command: str) -> pathlib.Path:
    if "json" not in outputs:
        raise InputError(f"{command} requires [output] json = <path>")
    return outputs["json"]


def _grid_from(sec: dict, section: str, dim: int):
    if "grid" not in sec:
        return None
    raw = sec.pop("grid")
    grid = np.asarray(raw, dtype=float)
    if grid.ndim == 1:
        grid = grid.reshape(-1, dim)
    if grid.ndim != 2 or grid.shape[1] != dim or grid.shape[0] == 0:
        raise InputError(f"[{section}] grid must be a nonempty list of "
                         f"points of dimension {dim}")
    return grid


def _point_from(sec: dict, section: str, dim: int):
    x = np.asarray(_take(sec, section, "x"), dtype=float).reshape(-1)
    if x.shape[0] != dim:
        raise InputError(f"[{section}] x must have dimension {dim}")
    y = float(_take(sec, section, "y"))
    return x, y


# -- subcommands -------------------------------------------------------------

def _dispatch(args) -> None:
    cfg, base_dir = _load_config(args.config)
    handler = {
        "solve": _cmd_solve,
        "influence": _cmd_influence,
        "covariance": _cmd_covariance,
        "degeneracy": _cmd_degeneracy,
        "fd-check": _cmd_fd_check,
        "mc-clt": _cmd_mc_clt,
        "mollify-table": _cmd_mollify_table,
    }[args.command]
    handler(cfg, base_dir, args)


def _cmd_solve(cfg, base_dir, args) -> None:
    mu, mu_path = _measure_from(cfg, base_dir)
    kernel = _kernel_from(cfg)
    loss, loss_name, loss_params = _loss_from(cfg)
    sec = _section(cfg, "solve")
    lam = float(_take(sec, "solve", "lambda"))
    max_iter = int(_take(sec, "solve", "max_iter", 200))
    _done(sec, "solve")
    outputs = _output_paths(cfg, base_dir)

    report = solve(mu, loss, kernel, lam, max_iter=max_iter)
    if not report.converged:
        raise NumericError(
            f"solver did not converge in {report.iterations} iterations "
            f"(grad_norm_h={report.grad_norm_h!r})"
        )
    _write_json(_require_json(outputs, "solve"), {
        "config": {
            "measure_path": mu_path,
            "kernel": _kernel_echo(kernel),
            "loss": {"name": loss_name, "params": loss_params},
            "lambda": lam,
            "max_iter": max_iter,
        },
        "objective": report.objective,
        "grad_norm_h": report.grad_norm_h,
        "iterations": report.iterations,
        "converged": report.converged,
        "solution": _function_dict(report.solution),
    })
    if "csv" in outputs:
        sol = report.solution
        header = [f"x{j + 1}" for j in range(sol.anchors.shape[1])] + ["coefficient"]
        _write_csv(outputs["csv"], header,
                   np.column_stack([sol.anchors, sol.coefficients]))


def _cmd_influence(cfg, base_dir, args) -> None:
    P, mu_path = _measure_from(cfg, base_dir)
    kernel = _kernel_from(cfg)
    loss, loss_name, loss_params = _loss_from(cfg)
    sec = _section(cfg, "influence")
    lambda0 = float(_take(sec, "influence", "lambda0"))
    x, y = _point_from(sec, "influence", P.dim)
    _done(sec, "influence")
    outputs = _output_paths(cfg, base_dir)

    ctx = build_context(P, loss, kernel, lambda0)
    inf = influence_function(ctx, (x, y))
    _write_json(_require_json(outputs, "influence"), {
        "config": {
            "measure_path": mu_path,
            "kernel": _kernel_echo(kernel),
            "loss": {"name": loss_name, "params": loss_params},
            "lambda0": lambda0,
            "x": x.tolist(),
            "y": y,
        },
        "influence": _function_dict(inf),
        "value_at_x": float(inf.eval(x)),
    })


def _cmd_covariance(cfg, base_dir, args) -> None:
    P, mu_path = _measure_from(cfg, base_dir)
    kernel = _kernel_from(cfg)
    loss, loss_name, loss_params = _loss_from(cfg)
    sec = _section(cfg, "covariance")
    lambda0 = float(_take(sec, "covariance", "lambda0"))
    grid = _grid_from(sec, "covariance", P.dim)
    also_risk = bool(_take(sec, "covariance", "also_risk", True))
    _done(sec, "covariance")
    outputs = _output_paths(cfg, base_dir)

    if grid is None:
        grid = default_grid(P)
    ctx = build_context(P, loss, kernel, lambda0, extra_points=grid)
    est = plugin_covariance(ctx, grid, also_risk=also_risk)
    _write_json(_require_json(outputs, "covariance"), {
        "config": {
            "measure_path": mu_path,
            "kernel": _kernel_echo(kernel),
            "loss": {"name": loss_name, "params": loss_params},
            "lambda0": lambda0,
            "grid": grid.tolist(),
            "also_risk": also_risk,
        },
        "sigma_matrix": est.sigma_matrix.tolist(),
        "risk_sigma": est.risk_sigma,
    })
    if "csv" in outputs:
        _write_csv(outputs["csv"],
                   [f"sigma_{j}" for j in range(est.sigma_matrix.shape[1])],
                   est.sigma_matrix)


def _cmd_degeneracy(cfg, base_dir, args) -> None:
    P, mu_path = _measure_from(cfg, base_dir)
    kernel = _kernel_from(cfg)
    loss, loss_name, loss_params = _loss_from(cfg)
    sec = _section(cfg, "degeneracy")
    lambda0 = float(_take(sec, "degeneracy", "lambda0"))
    basis_size = int(_take(sec, "degeneracy", "basis_size", 8))
    seed = int(_take(sec, "degeneracy", "seed", 0))
    if args.seed is not None:
        seed = args.seed
    _done(sec, "degeneracy")
    outputs = _output_paths(cfg, base_dir)

    ctx = build_context(P, loss, kernel, lambda0)
    rep = degeneracy_check(ctx, basis_size=basis_size, seed=seed)
    _write_json(_require_json(outputs, "degeneracy"), {
        "config": {
            "measure_path": mu_path,
            "kernel": _kernel_echo(kernel),
            "loss": {"name": loss_name, "params": loss_params},
            "lambda0": lambda0,
            "basis_size": basis_size,
            "seed": seed,
        },
        "degenerate": rep.degenerate,
        "max_sigma2": rep.max_sigma2,
        "threshold": rep.threshold,
        "argmax": rep.argmax,
        "sigma2_values": list(rep.sigma2_values),
    })


def _cmd_fd_check(cfg, base_dir, args) -> None:
    P, mu_path = _measure_from(cfg, base_dir)
    kernel = _kernel_from(cfg)
    loss, loss_name, loss_params = _loss_from(cfg)
    sec = _section(cfg, "fd_check")
    lambda0 = float(_take(sec, "fd_check", "lambda0"))
    x, y = _point_from(sec, "fd_check", P.dim)
    t_values = [float(t) for t in _take(sec, "fd_check", "t_values",
                                        [1e-1, 1e-2, 1e-3])]
    drift = bool(_take(sec, "fd_check", "drift", True))
    _done(sec, "fd_check")
    outputs = _output_paths(cfg, base_dir)

    ctx = build_context(P, loss, kernel, lambda0)
    direction = combine(dirac(x, y), P, 1.0, -1.0)
    rep = gateaux_fd_check(ctx, direction, t_values, drift=drift)
    _write_json(_require_json(outputs, "fd-check"), {
        "config": {
            "measure_path": mu_path,
            "kernel": _kernel_echo(kernel),
            "loss": {"name": loss_name, "params": loss_params},
            "lambda0": lambda0,
            "x": x.tolist(),
            "y": y,
            "t_values": list(rep.t_values),
            "drift": drift,
        },
        "errors": list(rep.errors),
        "slope": rep.slope,
        "deriv_norm": rep.deriv_norm,
        "hadamard_errors": (None if rep.hadamard_errors is None
                            else list(rep.hadamard_errors)),
    })


def _cmd_mc_clt(cfg, base_dir, args) -> None:
    P, mu_path = _measure_from(cfg, base_dir)
    kernel = _kernel_from(cfg)
    _loss_obj, loss_name, loss_params = _loss_from(cfg)
    sec = _section(cfg, "mc_clt")
    lambda0 = float(_take(sec, "mc_clt", "lambda0"))
    rule = str(_take(sec, "mc_clt", "lambda_rule", "fixed"))
    lambda_c = float(_take(sec, "mc_clt", "lambda_c", 1.0))
    n_values = tuple(int(n) for n in _take(sec, "mc_clt", "n_values"))
    replications = int(_take(sec, "mc_clt", "replications"))
    seed = int(_take(sec, "mc_clt", "seed", 0))
    if args.seed is not None:
        seed = args.seed
    max_iter = int(_take(sec, "mc_clt", "max_iter", 200))
    workers = _take(sec, "mc_clt", "workers", None)
    grid = _grid_from(sec, "mc_clt", P.dim)
    _done(sec, "mc_clt")
    outputs = _output_paths(cfg, base_dir)

    exp = ExperimentConfig(
        P=P, kernel=kernel, loss_name=loss_name, loss_params=loss_params,
        lambda0=lambda0, lambda_rule=rule, lambda_c=lambda_c,
        n_values=n_values, replications=replications, grid=grid, seed=seed,
        max_iter=max_iter, workers=None if workers is None else int(workers),
    )
    report = run_clt_experiment(exp)
    payload = report.to_dict()
    payload["config"]["measure_path"] = mu_path
    _write_json(_require_json(outputs, "mc-clt"), payload)
    if "csv_prefix" in outputs:
        prefix = outputs["csv_prefix"]
        m = report.grid.shape[0]
        _write_csv(pathlib.Path(f"{prefix}_sigma.csv"),
                   [f"sigma_{j}" for j in range(m)], report.sigma_matrix)
        for stats in report.per_n:
            rows = np.column_stack([stats.deviations, stats.risk_deviations])
            _write_csv(pathlib.Path(f"{prefix}_devs_n{stats.n}.csv"),
                       [f"dev_{j}" for j in range(m)] + ["risk_dev"], rows)
            _write_csv(pathlib.Path(f"{prefix}_cov_n{stats.n}.csv"),
                       [f"cov_{j}" for j in range(m)], stats.empirical_cov)


def _cmd_mollify_table(cfg, base_dir, args) -> None:
    sec = _section(cfg, "mollify_table")
    base = str(_take(sec, "mollify_table", "base"))
    eps = float(_take(sec, "mollify_table", "eps", 0.1))
    nodes = int(_take(sec, "mollify_table", "quadrature_nodes", 64))
    y = float(_take(sec, "mollify_table", "y", 1.0))
    t_min = float(_take(sec, "mollify_table", "t_min", -2.0))
    t_max = float(_take(sec, "mollify_table", "t_max", 2.0))
    points = int(_take(sec, "mollify_table", "points", 401))
    if base == "hinge":
        raw = hinge()
        _done(sec, "mollify_table")
    elif base == "eps_insensitive":
        raw = eps_insensitive(float(_take(sec, "mollify_table", "eps_ins", 0.1)))
        _done(sec, "mollify_table")
    else:
        raise InputError(f"unknown base loss {base!r} (hinge, eps_insensitive)")
    if points < 2 or not t_max > t_min:
        raise InputError("mollify_table needs points >= 2 and t_max > t_min")
    outputs = _output_paths(cfg, base_dir)
    if "csv" not in outputs:
        raise InputError("mollify-table requires [output] csv = <path>")

    smooth = mollify(raw, eps, quadrature_nodes=nodes)
    t = np.linspace(t_min, t_max, points)
    xs = np.zeros_like(t)
    ys = np.full_like(t, y)
    rows = np.column_stack([
        t,
        raw.value(xs, ys, t),
        smooth.value(xs, ys, t),
        smooth.d1(xs, ys, t),
        smooth.d2(xs, ys, t),
    ])
    _write_csv(outputs["csv"], ["t", "base", "smoothed", "d1", "d2"], rows)
    if "json" in outputs:
        _write_json(outputs["json"], {
            "config": {
                "base": base, "eps": eps, "quadrature_nodes": nodes, "y": y,
                "t_min": t_min, "t_max": t_max, "points": points,
                "params": raw.params,
            },
            "max_gap": float(np.max(np.abs(rows[:, 2] - rows[:, 1]))),
            "max_abs_d1": float(np.max(np.abs(rows[:, 3]))),
            "min_d2": float(np.min(rows[:, 4])),
        })


if __name__ == "__main__":
    sys.exit(main())
