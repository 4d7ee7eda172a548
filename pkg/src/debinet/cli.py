"""Command-line entry point (``debinet``)."""
from __future__ import annotations

import csv
import json
import sys

import click
import numpy as np

from . import bench
from .debias import debiased_lasso, debinet_fit, nw_post, ols_post
from .ntk_lab import concentration_sweep, ntk_report
from .plm import NetNuisanceConfig, dml_fit, plm_nn_fit, plm_nw_fit
from .selection import LassoSelector
from .synth_data import GenSpec, load_csv, write_csv
from .widenet import TrainConfig, init_network


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


def _fail(exc):
    raise click.ClickException(f"{type(exc).__name__}: {exc}")


@click.group()
@click.version_option(package_name="debinet")
def main():
    """Partially linear models with wide-network nuisances."""


@main.command()
@click.option("--regime", type=click.Choice(["table1", "table2", "complex"]), required=True)
@click.option("--n", "n", type=int, required=True)
@click.option("--p", "p", type=int, default=None, help="table2 only")
@click.option("--k", "k", type=int, default=None, help="table2 only")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def gen(regime, n, p, k, seed, out):
    """Write a synthetic dataset to CSV (target column ``y``).

    For table1 and complex the first column ``D`` is the linear block.
    """
    try:
        data = GenSpec(regime, n, p, k, seed).generate()
    except Exception as exc:  # noqa: BLE001 - surfaced as a CLI error
        _fail(exc)
    if regime != "table2":
        names = ("D",) + tuple(f"z{j + 1}" for j in range(data.Z.shape[1]))
        ds = data.to_dataset()
        data = type(ds)(X=ds.X, y=ds.y, columns=names)
    write_csv(data, out)
    click.echo(f"wrote {data.n} rows to {out}")


def _plm_data(csv_path, target, d_cols, regime, n, seed):
    if csv_path:
        ds = load_csv(csv_path, target)
        names = list(ds.columns)
        want = [c.strip() for c in d_cols.split(",") if c.strip()]
        missing = [c for c in want if c not in names]
        if not want or missing:
            raise click.BadParameter(f"--d-cols must name columns of the file; missing {missing}")
        di = [names.index(c) for c in want]
        zi = [j for j in range(len(names)) if j not in di]
        return ds.X[:, di], ds.X[:, zi], ds.y, None
    data = GenSpec(regime, n, seed=seed).generate()
    return data.D, data.Z, data.y, data.beta_true


def _estimate_json(est, truth, level):
    from .debias import confidence_intervals

    lo, hi = confidence_intervals(est.beta_hat, est.cov_beta, level)
    out = {
        "beta_hat": est.beta_hat.tolist(),
        "std_err": est.std_err.tolist(),
        "ci_low": lo.tolist(),
        "ci_high": hi.tolist(),
        "sigma2_hat": est.sigma2_hat,
        "nuisance": est.nuisance.learner_tag,
    }
    if truth is not None:
        out["estimation_mse"] = float(np.mean((est.beta_hat - truth) ** 2))
    return out


def _write_residuals(est, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y_resid"] + [f"d{j}_resid" for j in range(est.p_L)])
        for yr, xr in zip(est.Y_resid, est.X_resid):
            w.writerow([repr(float(yr))] + [repr(float(v)) for v in xr])


def plm_options(f):
    f = click.option("--residuals", type=click.Path(dir_okay=False), default=None,
                     help="write residuals to this CSV")(f)
    f = click.option("--out", type=click.Path(dir_okay=False), default=None)(f)
    f = click.option("--level", type=float, default=0.95)(f)
    f = click.option("--seed", type=int, default=0)(f)
    f = click.option("--n", "n", type=int, default=2000)(f)
    f = click.option("--regime", type=click.Choice(["table1", "complex"]), default="table1")(f)
    f = click.option("--d-cols", default="D", help="comma-separated linear columns")(f)
    f = click.option("--target", default="y")(f)
    f = click.option("--csv", "csv_path", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="read data from CSV instead of a generator")(f)
    return f


def _finish_plm(est, truth, level, out, residuals):
    if residuals:
        _write_residuals(est, residuals)
    _emit(_estimate_json(est, truth, level), out)


@main.command("plm-nn")
@plm_options
@click.option("--width", type=int, default=1000)
@click.option("--lr", type=float, default=1e-3)
@click.option("--epochs", type=int, default=2000)
def plm_nn(csv_path, target, d_cols, regime, n, seed, level, out, residuals, width, lr, epochs):
    """PLM with a joint wide-network nuisance."""
    D, Z, y, truth = _plm_data(csv_path, target, d_cols, regime, n, seed)
    cfg = NetNuisanceConfig(width=width, net_seed=seed)
    cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), "learning_rate": lr,
                                       "max_epochs": epochs, "seed": seed})
    try:
        est = plm_nn_fit(D, Z, y, cfg)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    _finish_plm(est, truth, level, out, residuals)


@main.command("plm-nw")
@plm_options
@click.option("--h-y", default="cv", help="bandwidth for E(y|Z): number, inf or cv")
@click.option("--h-d", default="cv", help="bandwidth for E(D|Z): number, inf or cv")
def plm_nw(csv_path, target, d_cols, regime, n, seed, level, out, residuals, h_y, h_d):
    """PLM with Nadaraya-Watson nuisances."""
    D, Z, y, truth = _plm_data(csv_path, target, d_cols, regime, n, seed)
    conv = lambda h: h if h == "cv" else float(h)  # noqa: E731
    try:
        est = plm_nw_fit(D, Z, y, h_y=conv(h_y), h_D=conv(h_d), seed=seed)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    _finish_plm(est, truth, level, out, residuals)


@main.command()
@plm_options
@click.option("--learner", type=click.Choice(["lasso", "nw", "widenet", "mean"]), default="lasso")
@click.option("--folds", "K", type=int, default=5)
def dml(csv_path, target, d_cols, regime, n, seed, level, out, residuals, learner, K):
    """Double machine learning with K-fold cross-fitting."""
    D, Z, y, truth = _plm_data(csv_path, target, d_cols, regime, n, seed)
    try:
        est = dml_fit(D, Z, y, learner=learner, K=K, seed=seed)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    _finish_plm(est, truth, level, out, residuals)


@main.command()
@click.option("--method", type=click.Choice(["debinet", "ols-post", "debiased-lasso", "nw-post"]),
              default="debinet")
@click.option("--csv", "csv_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--target", default="y")
@click.option("--n", "n", type=int, default=500)
@click.option("--p", "p", type=int, default=1000)
@click.option("--k", "k", type=int, default=10)
@click.option("--seed", type=int, default=0)
@click.option("--replicates", type=int, default=1, help="synthetic data only")
@click.option("--alpha", type=float, default=0.4, help="per-row Lasso penalty")
@click.option("--level", type=float, default=0.95)
@click.option("--metrics", type=click.Path(dir_okay=False), default=None,
              help="aggregated CSV metrics (synthetic data only)")
def debias(method, csv_path, target, n, p, k, seed, replicates, alpha, level, metrics):
    """Select with the Lasso, then debias; one JSON line per replicate."""
    name = method.replace("-", "_")
    rows = []
    for r in range(1 if csv_path else replicates):
        if csv_path:
            ds = load_csv(csv_path, target)
            X, y, truth = ds.X, ds.y, None
        else:
            ds = GenSpec("table2", n, p, k, bench.replicate_seed(seed, r)).generate()
            X, y, truth = ds.X, ds.y, ds.beta_true
        try:
            fit = LassoSelector(lam=alpha * X.shape[0]).fit(X, y)
            if name == "debinet":
                res = debinet_fit(X, y, fit, level=level)
            elif name == "ols_post":
                res = ols_post(X, y, fit, level=level)
            elif name == "nw_post":
                res = nw_post(X, y, fit, level=level, seed=seed)
            else:
                res = debiased_lasso(X, y, fit, level=level)
        except Exception as exc:  # noqa: BLE001
            _fail(exc)
        rec = {"replicate": r, **res.to_dict()}
        if truth is not None:
            t = truth[res.active_set]
            rec["estimation_mse"] = float(np.mean((res.beta_hat - t) ** 2))
            rec["coverage"] = float(np.mean((res.ci_low <= t) & (t <= res.ci_high)))
        rows.append(rec)
        click.echo(json.dumps(rec, sort_keys=True))
    if metrics and rows and "estimation_mse" in rows[0]:
        with open(metrics, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "estimation_mse", "coverage"])
            for stat, fn in (("mean", np.mean), ("std", np.std)):
                w.writerow([stat, repr(float(fn([x["estimation_mse"] for x in rows]))),
                            repr(float(fn([x["coverage"] for x in rows])))])


@main.command()
@click.option("--n", "n", type=int, default=50)
@click.option("--dim", type=int, default=10)
@click.option("--p-l", "p_L", type=int, default=1)
@click.option("--width", type=int, default=4096)
@click.option("--widths", default=None, help="comma-separated widths for a concentration sweep")
@click.option("--seeds", type=int, default=5)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def ntk(n, dim, p_L, width, widths, seeds, seed, out):
    """Tangent-kernel diagnostics on random unit-norm inputs."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, dim))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    try:
        if widths:
            ws = [int(w) for w in widths.split(",")]
            rows, summary = concentration_sweep(Z, ws, seeds, p_L=p_L, base_seed=seed)
            _emit({"runs": [r.__dict__ for r in rows], "summary": summary}, out)
            return
        rep = ntk_report(init_network(dim, width, p_L, seed=seed), Z)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    _emit({"lambda0_emp": rep.lambda0_emp, "lambda0_inf": rep.lambda0_inf,
           "frob_gap": rep.frob_gap, "offdiag_norm": rep.offdiag_norm}, out)


@main.group("bench")
def bench_group():
    """Seeded experiment runner.  Set DEBINET_WORKERS for parallel replicates."""


def _report_checks(checks, check):
    for c in checks:
        click.echo(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}", err=True)
    if check and not all(c.passed for c in checks):
        sys.exit(1)


def _print_summary(result):
    for s in result.summary:
        click.echo(json.dumps(s, sort_keys=True))


@bench_group.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--check", is_flag=True, help="exit non-zero if an acceptance check fails")
def bench_run(config_path, check):
    cfg = bench.ExperimentConfig.from_json(config_path)
    if cfg.scenario == "ntk_figure":
        res = bench.emit_convergence(bench.ConvergenceConfig(n=cfg.n, seed=cfg.seed, output=cfg.output))
        click.echo(json.dumps(res.summary(), sort_keys=True))
        _report_checks(bench.convergence_checks(res), check)
        return
    result = bench.run_experiment(cfg)
    _print_summary(result)
    _report_checks(bench.experiment_checks(result), check)


@bench_group.command("convergence")
@click.option("--n", "n", type=int, default=100)
@click.option("--width", type=int, default=5000)
@click.option("--lr", type=float, default=0.01)
@click.option("--epochs", type=int, default=2000)
@click.option("--seed", type=int, default=0)
@click.option("--out", default=None, help="path prefix for .csv and .json")
@click.option("--check", is_flag=True)
def bench_convergence(n, width, lr, epochs, seed, out, check):
    """Loss trace of full-batch training with the rate and lazy-training checks."""
    res = bench.emit_convergence(bench.ConvergenceConfig(n=n, width=width, learning_rate=lr,
                                                         epochs=epochs, seed=seed, output=out))
    click.echo(json.dumps(res.summary(), sort_keys=True))
    _report_checks(bench.convergence_checks(res), check)


@bench_group.command("compare-plms")
@click.option("--scenario", type=click.Choice(["table1", "table4"]), default="table1")
@click.option("--n", "n", type=int, default=2000)
@click.option("--replicates", type=int, default=10)
@click.option("--seed", type=int, default=0)
@click.option("--out", default=None, help="path prefix for metrics, timings and summary")
@click.option("--check", is_flag=True)
def bench_compare(scenario, n, replicates, seed, out, check):
    """PLM-NN against PLM-NW and DML-Lasso."""
    cfg = bench.ExperimentConfig(scenario, replicates=replicates, n=n, seed=seed, output=out)
    result = bench.compare_plms(cfg)
    _print_summary(result)
    _report_checks(bench.experiment_checks(result), check)


if __name__ == "__main__":
    main()
