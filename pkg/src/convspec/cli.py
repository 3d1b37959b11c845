"""Command-line interface: prior sampling, fitting, and prediction export.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical
failure.  All CSV floats are written with 17 significant digits so they
round-trip exactly.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .inference import FitConfig, GaussianQ, GibbsChain, fit, gibbs_run
from .likelihood import DataSet, compute_stats
from .model import build_inducing, init_hyperparameters, sample_prior
from .numerics import PositiveDefiniteError
from .predict import (
    QUANTILE_LEVELS,
    metrics,
    predict_function,
    predict_kernel,
    predict_psd,
)

__all__ = ["main"]


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(path, header, columns):
    rows = np.broadcast_arrays(*[np.atleast_1d(np.asarray(c, dtype=float))
                                 for c in columns]) if columns else []
    try:
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            if columns:
                for row in zip(*rows):
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _read_data_csv(path, expected=("t", "y")):
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        header = fh.readline().strip()
        if [c.strip() for c in header.split(",")] != list(expected):
            raise DataError(
                f"{path}:1: expected header {','.join(expected)!r}, got "
                f"{header!r}")
        cols = [[] for _ in expected]
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(expected):
                raise DataError(f"{path}:{lineno}: expected "
                                f"{len(expected)} fields")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            for c, v in zip(cols, vals):
                c.append(v)
    arrays = [np.asarray(c) for c in cols]
    t = arrays[0]
    if t.size > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.argmin(np.diff(t) > 0)) + 2
        raise DataError(f"{path}:{bad}: times must be strictly increasing")
    return arrays


def _build_spec(args):
    try:
        return init_hyperparameters(
            args.model, args.scale, args.window,
            interval=(args.t0, args.t1), n_u=args.n_u, n_z=args.n_z,
            sigma2=args.noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _spec_to_dict(spec):
    out = {k: getattr(spec, k) for k in (
        "variant", "alpha", "alpha_tilde2", "sigma2", "tau_f", "tau_w",
        "n_u", "n_z", "gamma", "gamma_tilde2", "lam", "omega",
        "omega_tilde2")}
    out["interval"] = list(spec.interval)
    return out


def _spec_from_dict(d):
    from .model import ModelSpec

    d = dict(d)
    d["interval"] = tuple(d["interval"])
    return ModelSpec(**d)


def _state_to_json(result):
    state = {"spec": _spec_to_dict(result.spec), "scheme": result.scheme}
    if isinstance(result.posterior, GibbsChain):
        chain = result.posterior
        state["posterior"] = {
            "kind": "chain",
            "seed": chain.seed,
            "burn_in": chain.burn_in,
            "n_samples": chain.n_samples,
            "last_u": chain.u_samples[-1].tolist(),
            "last_z": chain.z_samples[-1].tolist(),
            "mean_u": chain.u_samples.mean(axis=0).tolist(),
            "mean_z": chain.z_samples.mean(axis=0).tolist(),
        }
    else:
        q_u, q_z = result.posterior
        state["posterior"] = {
            "kind": "gaussian_pair",
            "mean_u": q_u.mean.tolist(), "cov_u": q_u.cov.tolist(),
            "mean_z": q_z.mean.tolist(), "cov_z": q_z.cov.tolist(),
        }
    return state


def _posterior_from_state(state, spec, data):
    post = state["posterior"]
    if post["kind"] == "gaussian_pair":
        return (GaussianQ(np.asarray(post["mean_u"]),
                          np.asarray(post["cov_u"])),
                GaussianQ(np.asarray(post["mean_z"]),
                          np.asarray(post["cov_z"])))
    # Chains are summarized, not persisted: regenerate from the seed.
    cov = build_inducing(spec)
    stats = compute_stats(spec, cov, data)
    return gibbs_run(stats, post["n_samples"], post["burn_in"],
                     seed=post["seed"])


def _load_state(path):
    try:
        with open(path) as fh:
            state = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read state {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed state {path}: {exc}") from exc
    return state


def _quantile_header(prefix):
    return [f"q{level:02d}" for level in QUANTILE_LEVELS]


def cmd_sample(args):
    spec = _build_spec(args)
    if args.seed is None:
        raise ConfigError("--seed is required for sampling")
    grid = np.linspace(args.t0, args.t1, args.grid_n)
    draw = sample_prior(spec, grid, args.seed)
    rng = np.random.default_rng(args.seed + 1)
    y = draw.f + np.sqrt(spec.sigma2) * rng.standard_normal(draw.f.size)
    _write_csv(args.out_data, ["t", "f", "y"], [draw.t, draw.f, y])
    _write_csv(args.out_kernel, ["lag", "k"], [draw.lags, draw.k])
    return 0


def cmd_fit(args):
    spec = _build_spec(args)
    t, y = _read_data_csv(args.data)
    data = DataSet(times=t, values=y)
    config = FitConfig(seed=args.seed or 0,
                       optimize_theta=args.optimize_theta,
                       optimize_inducing=args.optimize_inducing,
                       gibbs_samples=args.chain_samples,
                       burn_in=args.burn_in,
                       max_ca_iters=args.iters,
                       mf_time_budget=args.time_budget)
    result = fit(spec, data, args.scheme, config)
    state = _state_to_json(result)
    state["data"] = {"path": args.data, "n": int(data.n)}
    try:
        with open(args.state_out, "w") as fh:
            json.dump(state, fh, indent=1)
    except OSError as exc:
        raise ConfigError(f"cannot write state: {exc}") from exc
    _write_csv(args.trace_out, ["iter", "seconds", "elbo"],
               [np.array([r[0] for r in result.trace]),
                np.array([r[1] for r in result.trace]),
                np.array([r[2] for r in result.trace])])
    return 0


def _load_fitted(args):
    state = _load_state(args.state)
    spec = _spec_from_dict(state["spec"])
    t, y = _read_data_csv(args.data)
    data = DataSet(times=t, values=y)
    cov = build_inducing(spec)
    posterior = _posterior_from_state(state, spec, data)
    return spec, cov, posterior, data


def cmd_predict(args):
    spec, cov, posterior, data = _load_fitted(args)
    if args.times is not None:
        t_star = np.asarray(args.times, dtype=float)
    elif args.targets:
        (t_star,) = _read_data_csv(args.targets, expected=("t",))
    else:
        t_star = data.times
    pred = predict_function(spec, cov, posterior, t_star,
                            include_noise=True, seed=args.seed or 0)
    _write_csv(args.out, ["t", "mean", "var"],
               [pred.inputs, pred.mean, pred.variance]
               if t_star.size else [])
    if args.metrics_out:
        heldout_t, heldout_y = _read_data_csv(args.heldout or args.data)
        pred_h = predict_function(spec, cov, posterior, heldout_t,
                                  include_noise=True, seed=args.seed or 0)
        mll, rmse = metrics(pred_h.mean, pred_h.variance, heldout_y)
        _write_csv(args.metrics_out, ["mll", "rmse"], [[mll], [rmse]])
    return 0


def cmd_kernel(args):
    spec, cov, posterior, _ = _load_fitted(args)
    lags = np.linspace(0.0, args.max_lag, args.n_lags)
    pred = predict_kernel(spec, cov, posterior, lags,
                          n_mc=args.n_mc, seed=args.seed or 0)
    cols = [pred.inputs, pred.mean] + list(pred.quantiles)
    _write_csv(args.out, ["lag", "mean"] + _quantile_header("q"), cols)
    return 0


def cmd_psd(args):
    spec, cov, posterior, _ = _load_fitted(args)
    freqs = np.linspace(0.0, args.max_freq, args.n_freqs)
    pred = predict_psd(spec, cov, posterior, freqs,
                       n_mc=args.n_mc, seed=args.seed or 0)
    header = ["freq", "mean"] + _quantile_header("q")
    cols = [pred.inputs, pred.mean] + list(pred.quantiles)
    if spec.variant == "rgpcm":
        header += ["filter_gain", "excitation_psd"]
        cols += [pred.extras["filter_gain"], pred.extras["excitation_psd"]]
    _write_csv(args.out, header, cols)
    return 0


def _add_model_args(p):
    p.add_argument("--model", choices=("gpcm", "cgpcm", "rgpcm"),
                   default="gpcm")
    p.add_argument("--window", type=float, default=2.0,
                   help="filter extent (time)")
    p.add_argument("--scale", type=float, default=1.0,
                   help="signal length scale (time)")
    p.add_argument("--noise", type=float, default=0.1,
                   help="observation noise variance")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=10.0)
    p.add_argument("--n-u", type=int, default=30)
    p.add_argument("--n-z", type=int, default=None)


def _parser():
    parser = argparse.ArgumentParser(
        prog="convspec",
        description="Nonparametric kernel and PSD learning for noisy 1-D "
                    "signals (pass --config FILE to preload options from "
                    "JSON; explicit flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw (filter, kernel, function) "
                                      "from the prior")
    _add_model_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--grid-n", type=int, default=400)
    p.add_argument("--out-data", default="sample_data.csv")
    p.add_argument("--out-kernel", default="sample_kernel.csv")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="fit a model to a t,y CSV")
    _add_model_args(p)
    p.add_argument("data")
    p.add_argument("--scheme", choices=("mf", "ca", "collapsed",
                                        "structured"), default="structured")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--chain-samples", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=200)
    p.add_argument("--time-budget", type=float, default=None)
    p.add_argument("--optimize-theta", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--optimize-inducing", action="store_true")
    p.add_argument("--state-out", default="state.json")
    p.add_argument("--trace-out", default="trace.csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="function prediction from a state "
                                       "file")
    p.add_argument("state")
    p.add_argument("data", help="training CSV (chains regenerate from it)")
    p.add_argument("--targets", help="CSV with a single t column")
    p.add_argument("--times", type=float, nargs="+")
    p.add_argument("--heldout", help="t,y CSV for --metrics-out")
    p.add_argument("--metrics-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="prediction.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("kernel", help="kernel posterior from a state file")
    p.add_argument("state")
    p.add_argument("data")
    p.add_argument("--max-lag", type=float, default=4.0)
    p.add_argument("--n-lags", type=int, default=81)
    p.add_argument("--n-mc", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="kernel.csv")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("psd", help="PSD posterior from a state file")
    p.add_argument("state")
    p.add_argument("data")
    p.add_argument("--max-freq", type=float, default=12.0)
    p.add_argument("--n-freqs", type=int, default=121)
    p.add_argument("--n-mc", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="psd.csv")
    p.set_defaults(func=cmd_psd)
    return parser


def _inject_config(argv):
    """Expand ``--config FILE`` into flags placed before the user's flags,
    so explicit command-line options win."""
    argv = list(argv)
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ConfigError("--config requires a file argument")
    path = argv[i + 1]
    del argv[i:i + 2]
    try:
        with open(path) as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    flags = []
    for key, val in values.items():
        flag = "--" + str(key).replace("_", "-")
        if isinstance(val, bool):
            flags.append(flag if val else "--no-" + flag[2:])
        else:
            flags.extend([flag, str(val)])
    # Insert after the subcommand token (the first non-flag argument).
    for j, tok in enumerate(argv):
        if not tok.startswith("-"):
            return argv[: j + 1] + flags + argv[j + 1:]
    return argv + flags


def main(argv=None):
    parser = _parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        argv = _inject_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (PositiveDefiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
