"""Seeded Monte-Carlo experiments: PLM comparisons, debiasing comparisons, convergence traces.

Metrics CSVs hold no wall-clock fields so that reruns are byte-identical;
timings go to a separate ``*_timings.csv``.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .debias import (
    coverage,
    debiased_lasso,
    debinet_fit,
    eiv_sandwich_cov,
    measurement_correct,
    nw_post,
    ols_post,
)
from .errors import DebinetError, InvalidParameterError
from .ntk_lab import RateReport, lazy_check, least_eigenvalue, ntk_empirical, verify_rate
from .plm import NetNuisanceConfig, dml_fit, plm_nn_fit, plm_nw_fit, plm_predict
from .selection import LassoSelector
from .synth_data import gen_complex, gen_table1, gen_table2
from .widenet import TrainConfig, init_network, train

WORKERS_ENV = "DEBINET_WORKERS"

SCENARIOS = {
    "table1": {"n": 2000, "methods": ["plm_nn", "plm_nw", "dml_lasso"]},
    "table4": {"n": 2000, "methods": ["plm_nn", "plm_nw", "dml_lasso"]},
    "table2_high_high": {"n": 1000, "p": 3000, "k": 300,
                         "methods": ["debinet", "ols_post", "debiased_lasso", "nw_post"]},
    "table2_high_low": {"n": 1000, "p": 3000, "k": 10,
                        "methods": ["debinet", "ols_post", "debiased_lasso", "nw_post"]},
    "table2_low_high": {"n": 1000, "p": 500, "k": 400,
                        "methods": ["debinet", "ols_post", "debiased_lasso", "nw_post"]},
    "ntk_figure": {"n": 100, "methods": []},
}
PLM_METHODS = ("plm_nn", "plm_nw", "dml_lasso", "dml_nw", "dml_widenet")
DEBIAS_METHODS = ("debinet", "ols_post", "debiased_lasso", "nw_post")


@dataclass
class ExperimentConfig:
    """One benchmark run.  ``n``, ``p``, ``k`` and ``methods`` default per scenario.

    ``lasso_alpha`` is the per-row Lasso penalty: the unnormalised penalty is
    ``lasso_alpha * n_train``.
    """

    scenario: str
    replicates: int = 1
    n: int | None = None
    p: int | None = None
    k: int | None = None
    methods: list[str] | None = None
    seed: int = 0
    output: str | None = None
    test_fraction: float = 0.5
    lasso_alpha: float = 0.4
    level: float = 0.95
    dml_folds: int = 5
    net: dict = field(default_factory=dict)
    workers: int | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidParameterError(
                f"unknown scenario {self.scenario!r}; expected one of {sorted(SCENARIOS)}")
        base = SCENARIOS[self.scenario]
        for key in ("n", "p", "k"):
            if getattr(self, key) is None and key in base:
                setattr(self, key, base[key])
        if self.methods is None:
            self.methods = list(base["methods"])
        if self.replicates < 1:
            raise InvalidParameterError("replicates must be at least 1")
        if self.scenario.startswith("table2"):
            if not 1 <= self.k <= self.p:
                raise InvalidParameterError(f"need 1 <= k <= p, got k={self.k}, p={self.p}")
            allowed = DEBIAS_METHODS
        elif self.scenario == "ntk_figure":
            allowed = ()
        else:
            allowed = PLM_METHODS
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise InvalidParameterError(f"methods {bad} are not available for {self.scenario}")
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidParameterError("test_fraction must lie in (0, 1)")

    def net_config(self) -> NetNuisanceConfig:
        opts = dict(self.net)
        train_opts = opts.pop("train", None)
        cfg = NetNuisanceConfig(**opts)
        if train_opts:
            merged = {**cfg.train.to_dict(), **train_opts}
            cfg.train = TrainConfig.from_dict(merged)
        return cfg

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidParameterError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class MetricsRow:
    method: str
    replicate: int
    estimation_mse: float = math.nan
    train_mse: float = math.nan
    test_mse: float = math.nan
    coverage: float | None = None
    n_selected: int | None = None
    true_positive_rate: float | None = None
    seconds: float = 0.0
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"


METRIC_COLUMNS = ("replicate", "method", "status", "estimation_mse", "train_mse", "test_mse",
                  "coverage", "n_selected", "true_positive_rate")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    summary: list[dict]
    # Per-replicate interval results, kept for pooled coverage.
    intervals: dict = field(default_factory=dict, repr=False)

    def by_method(self, method):
        return [r for r in self.rows if r.method == method]

    def summary_for(self, method):
        return next(s for s in self.summary if s["method"] == method)


def replicate_seed(base: int, replicate: int, stream: int = 0) -> int:
    """Independent 32-bit seed for (base seed, replicate, stream)."""
    return int(np.random.SeedSequence([base, replicate, stream]).generate_state(1)[0])


def _split(n, test_fraction, seed):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _mse(a, b):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(d @ d) / d.size


def _plm_replicate(cfg: ExperimentConfig, r: int):
    data_seed = replicate_seed(cfg.seed, r, 0)
    gen = gen_table1 if cfg.scenario == "table1" else gen_complex
    data = gen(cfg.n, data_seed)
    tr, te = _split(cfg.n, cfg.test_fraction, replicate_seed(cfg.seed, r, 1))
    a, b = data.take(tr), data.take(te)
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "plm_nn":
                est = plm_nn_fit(a.D, a.Z, a.y, cfg.net_config())
            elif method == "plm_nw":
                est = plm_nw_fit(a.D, a.Z, a.y, seed=replicate_seed(cfg.seed, r, 2))
            else:
                learner = method.split("_", 1)[1]
                opts = {"cfg": cfg.net_config()} if learner == "widenet" else None
                est = dml_fit(a.D, a.Z, a.y, learner=learner, K=cfg.dml_folds,
                              seed=replicate_seed(cfg.seed, r, 3), learner_options=opts)
            row = MetricsRow(
                method, r,
                estimation_mse=_mse(est.beta_hat, a.beta_true),
                train_mse=_mse(plm_predict(est, a.D, a.Z), a.y),
                test_mse=_mse(plm_predict(est, b.D, b.Z), b.y),
            )
        except (DebinetError, np.linalg.LinAlgError, FloatingPointError) as exc:
            row = MetricsRow(method, r, status=type(exc).__name__)
        row.seconds = time.perf_counter() - t0
        rows.append(row)
    return rows, {}


def _debias_replicate(cfg: ExperimentConfig, r: int):
    data = gen_table2(cfg.n, cfg.p, cfg.k, replicate_seed(cfg.seed, r, 0))
    tr, te = _split(cfg.n, cfg.test_fraction, replicate_seed(cfg.seed, r, 1))
    X, y = data.X[tr], data.y[tr]
    rows, intervals = [], {}
    try:
        fit = LassoSelector(lam=cfg.lasso_alpha * len(tr)).fit(X, y)
    except DebinetError as exc:
        return [MetricsRow(m, r, status=type(exc).__name__) for m in cfg.methods], {}
    S = fit.active_set
    tpr = float(np.sum(data.beta_true[S] != 0)) / cfg.k
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "debinet":
                res = debinet_fit(X, y, fit, cfg.net_config(), level=cfg.level)
            elif method == "ols_post":
                res = ols_post(X, y, fit, level=cfg.level)
            elif method == "nw_post":
                res = nw_post(X, y, fit, level=cfg.level, seed=replicate_seed(cfg.seed, r, 2))
            else:
                res = debiased_lasso(X, y, fit, level=cfg.level)
            truth = data.beta_true[res.active_set]
            row = MetricsRow(
                method, r,
                estimation_mse=_mse(res.beta_hat, truth) if truth.size else math.nan,
                train_mse=_mse(res.predict(X), y),
                test_mse=_mse(res.predict(data.X[te]), data.y[te]),
                coverage=coverage([res], [truth]),
                n_selected=int(S.size),
                true_positive_rate=tpr,
            )
            intervals[method] = (res.ci_low, res.ci_high, truth)
        except (DebinetError, np.linalg.LinAlgError, FloatingPointError) as exc:
            row = MetricsRow(method, r, n_selected=int(S.size), true_positive_rate=tpr,
                             status=type(exc).__name__)
        row.seconds = time.perf_counter() - t0
        rows.append(row)
    return rows, intervals


def _run_one(args):
    cfg, r = args
    if cfg.scenario.startswith("table2"):
        return r, _debias_replicate(cfg, r)
    return r, _plm_replicate(cfg, r)


def worker_count(cfg: ExperimentConfig) -> int:
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def _aggregate(rows, intervals, methods):
    summary = []
    for m in methods:
        sel = [r for r in rows if r.method == m]
        ok = [r for r in sel if r.ok]
        entry = {"method": m, "n_ok": len(ok), "n_failed": len(sel) - len(ok)}
        for key in ("estimation_mse", "train_mse", "test_mse"):
            vals = np.array([getattr(r, key) for r in ok], dtype=float)
            entry[f"{key}_mean"] = float(vals.mean()) if vals.size else math.nan
            entry[f"{key}_std"] = float(vals.std()) if vals.size else math.nan
        hits = [((lo <= t) & (t <= hi)) for lo, hi, t in intervals.get(m, [])]
        if hits:
            allh = np.concatenate(hits)
            entry["coverage_pooled"] = float(allh.mean()) if allh.size else math.nan
            entry["coverage_per_replicate"] = float(np.mean([h.mean() for h in hits if h.size]))
        summary.append(entry)
    return summary


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every method on every replicate and aggregate mean and std per method.

    Within a replicate all methods see the same data and the same split.  A
    numerical failure is recorded in the row's ``status`` and the sweep goes on.
    """
    if cfg.scenario == "ntk_figure":
        raise InvalidParameterError("use emit_convergence for the ntk_figure scenario")
    jobs = [(cfg, r) for r in range(cfg.replicates)]
    nw = worker_count(cfg)
    if nw > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(nw) as pool:
            out = list(pool.map(_run_one, jobs))
    else:
        out = [_run_one(j) for j in jobs]
    rows, intervals = [], {}
    for _, (rr, ints) in sorted(out, key=lambda t: t[0]):
        rows.extend(rr)
        for m, v in ints.items():
            intervals.setdefault(m, []).append(v)
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows.sort(key=lambda r: (r.replicate, order[r.method]))
    result = ExperimentResult(cfg, rows, _aggregate(rows, intervals, cfg.methods), intervals)
    if cfg.output:
        write_outputs(result, cfg.output)
    return result


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_outputs(result: ExperimentResult, prefix: str):
    """Write ``<prefix>_metrics.csv``, ``<prefix>_timings.csv`` and ``<prefix>_summary.json``."""
    d = os.path.dirname(prefix)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(f"{prefix}_metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in result.rows:
            w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])
    with open(f"{prefix}_timings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "method", "seconds"])
        for r in result.rows:
            w.writerow([r.replicate, r.method, f"{r.seconds:.4f}"])
    with open(f"{prefix}_summary.json", "w", encoding="utf-8") as fh:
        json.dump({"config": result.config.to_dict(), "summary": result.summary}, fh,
                  indent=2, sort_keys=True)


def compare_plms(cfg: ExperimentConfig) -> ExperimentResult:
    """PLM-NN against PLM-NW and DML-Lasso on the table1 or table4 generator."""
    if cfg.scenario not in ("table1", "table4"):
        raise InvalidParameterError("compare_plms needs scenario table1 or table4")
    return run_experiment(cfg)


@dataclass
class ConvergenceConfig:
    n: int = 100
    width: int = 5000
    learning_rate: float = 0.01
    epochs: int = 2000
    seed: int = 0
    optimizer: str = "gd"
    output: str | None = None


@dataclass
class ConvergenceResult:
    losses: np.ndarray
    lambda0: float
    rate: RateReport
    lazy: object
    seconds: float

    def summary(self) -> dict:
        return {
            "final_loss": float(self.losses[-1]),
            "initial_loss": float(self.losses[0]),
            "lambda0_hat": self.lambda0,
            "fitted_slope": self.rate.fitted_slope,
            "slope_ratio": self.rate.slope_ratio,
            "r_squared": self.rate.r_squared,
            "window": list(self.rate.window),
            "rate_bound_holds": self.rate.passed,
            "rate_violations": self.rate.n_violations,
            "lazy_radius": self.lazy.R_prime,
            "max_drift": self.lazy.max_drift,
            "lazy_bound_holds": self.lazy.bound_satisfied,
            "seconds": self.seconds,
        }


def convergence_problem(n: int = 100, seed: int = 0):
    """Table-1 data with unit-norm rows of Z as inputs and ``[y, D]`` as targets."""
    data = gen_table1(n, seed)
    Z = data.Z / np.linalg.norm(data.Z, axis=1, keepdims=True)
    return Z, np.column_stack([data.y, data.D])


def emit_convergence(cfg: ConvergenceConfig | None = None) -> ConvergenceResult:
    """Full-batch training with the second layer frozen, plus rate and lazy checks.

    ``<output>.csv`` gets ``epoch, loss, log_loss``; ``<output>.json`` the summary.
    """
    cfg = cfg or ConvergenceConfig()
    t0 = time.perf_counter()
    Z, M = convergence_problem(cfg.n, cfg.seed)
    net0 = init_network(Z.shape[1], cfg.width, M.shape[1] - 1, seed=cfg.seed)
    lam0 = least_eigenvalue(ntk_empirical(net0, Z))
    tc = TrainConfig(optimizer=cfg.optimizer, learning_rate=cfg.learning_rate,
                     max_epochs=cfg.epochs, freeze_second_layer=True, record_drift=True,
                     seed=cfg.seed)
    _, trace = train(net0, Z, M, tc)
    rate = verify_rate(trace, lam0, cfg.learning_rate)
    lazy = lazy_check(trace, net0, Z, M, lam0)
    res = ConvergenceResult(np.asarray(trace.loss_per_epoch), lam0, rate, lazy,
                            time.perf_counter() - t0)
    if cfg.output:
        d = os.path.dirname(cfg.output)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(f"{cfg.output}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "log_loss"])
            for e, v in enumerate(res.losses):
                w.writerow([e, repr(float(v)), repr(float(np.log(v))) if v > 0 else "-inf"])
        with open(f"{cfg.output}.json", "w", encoding="utf-8") as fh:
            json.dump(res.summary(), fh, indent=2, sort_keys=True)
    return res


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def experiment_checks(result: ExperimentResult) -> list[Check]:
    """Desk-scale acceptance assertions attached to each scenario."""
    sc = result.config.scenario
    checks = []
    have = set(result.config.methods)
    if sc == "table2_high_low" and "debinet" in have:
        s = result.summary_for("debinet")
        checks.append(Check("debinet estimation MSE <= 0.01", s["estimation_mse_mean"] <= 0.01,
                            f"{s['estimation_mse_mean']:.4g}"))
        cov = s.get("coverage_pooled", math.nan)
        checks.append(Check("debinet coverage in [0.88, 1]", 0.88 <= cov <= 1.0, f"{cov:.3f}"))
        if "ols_post" in have:
            o = result.summary_for("ols_post")
            ratio = s["test_mse_mean"] / o["test_mse_mean"]
            checks.append(Check("debinet test MSE <= 1.2 x ols_post", ratio <= 1.2, f"{ratio:.3f}"))
    if sc == "table2_high_high" and {"debinet", "ols_post"} <= have:
        wins = win_fraction(result, "debinet", "ols_post")
        checks.append(Check("debinet beats ols_post in >= 70% of replicates", wins >= 0.7,
                            f"{wins:.2f}"))
    if sc == "table1" and {"plm_nn", "plm_nw"} <= have:
        s, w = result.summary_for("plm_nn"), result.summary_for("plm_nw")
        checks.append(Check("plm_nn estimation MSE <= 1e-3", s["estimation_mse_mean"] <= 1e-3,
                            f"{s['estimation_mse_mean']:.3g}"))
        ratio = s["test_mse_mean"] / w["test_mse_mean"]
        checks.append(Check("plm_nn test MSE <= 1.3 x plm_nw", ratio <= 1.3, f"{ratio:.3f}"))
    if sc == "table4":
        for s in result.summary:
            checks.append(Check(f"{s['method']} estimation MSE <= 1e-2",
                                s["estimation_mse_mean"] <= 1e-2, f"{s['estimation_mse_mean']:.3g}"))
    return checks


def convergence_checks(res: ConvergenceResult) -> list[Check]:
    return [
        Check("fitted log-loss slope negative", res.rate.fitted_slope < 0,
              f"{res.rate.fitted_slope:.4g}"),
        Check("slope ratio in [0.5, 2]", 0.5 <= res.rate.slope_ratio <= 2.0,
              f"{res.rate.slope_ratio:.3f}"),
    ]


def win_fraction(result: ExperimentResult, a: str, b: str) -> float:
    """Share of replicates where method ``a`` has estimation MSE no larger than ``b``."""
    ea = {r.replicate: r.estimation_mse for r in result.by_method(a) if r.ok}
    eb = {r.replicate: r.estimation_mse for r in result.by_method(b) if r.ok}
    common = sorted(set(ea) & set(eb))
    if not common:
        return math.nan
    return float(np.mean([ea[i] <= eb[i] for i in common]))


@dataclass
class EivConfig:
    """Errors-in-variables Monte Carlo: ``X~ = X + U``, ``Y~ = X beta + eps + V``."""

    beta: tuple = (1.0, 1.0, 1.0)
    n: int = 20_000
    sigma_X: float = 0.5
    sigma_Y: float = 0.3
    sigma_eps: float = 1.0
    replicates: int = 200
    seed: int = 0


@dataclass
class EivResult:
    config: EivConfig
    beta_tilde: np.ndarray
    beta_corrected: np.ndarray
    R_true: np.ndarray
    plugin_cov: np.ndarray
    sandwich_cov: np.ndarray

    @property
    def attenuated(self):
        return (np.eye(len(self.config.beta)) - self.R_true) @ np.asarray(self.config.beta)

    @property
    def empirical_cov(self):
        dev = np.sqrt(self.config.n) * (self.beta_tilde - self.attenuated)
        return dev.T @ dev / dev.shape[0]

    def rel_error(self, target):
        return float(np.linalg.norm(self.empirical_cov - target) / np.linalg.norm(target))


def eiv_simulation(cfg: EivConfig | None = None) -> EivResult:
    """Simulate regressor and response noise on a unit-covariance residual design."""
    cfg = cfg or EivConfig()
    beta = np.asarray(cfg.beta, dtype=float)
    pL = beta.size
    sx2, sy2, se2 = cfg.sigma_X ** 2, cfg.sigma_Y ** 2, cfg.sigma_eps ** 2
    R_true = sx2 * np.linalg.inv((1.0 + sx2) * np.eye(pL))
    tilde, corr = [], []
    for r in range(cfg.replicates):
        rng = np.random.default_rng(replicate_seed(cfg.seed, r))
        X = rng.standard_normal((cfg.n, pL))
        Xt = X + cfg.sigma_X * rng.standard_normal((cfg.n, pL))
        Yt = X @ beta + cfg.sigma_eps * rng.standard_normal(cfg.n) + cfg.sigma_Y * rng.standard_normal(cfg.n)
        bt = np.linalg.lstsq(Xt, Yt, rcond=None)[0]
        tilde.append(bt)
        corr.append(measurement_correct(bt, Xt, sx2, sy2, se2).beta_corrected)
    plugin = (se2 + sy2) / sx2 * R_true
    sandwich = eiv_sandwich_cov(beta, np.eye(pL), sx2, sy2, se2)
    return EivResult(cfg, np.array(tilde), np.array(corr), R_true, plugin, sandwich)


def eiv_checks(res: EivResult) -> list[Check]:
    beta = np.asarray(res.config.beta, dtype=float)
    mt = res.beta_tilde.mean(0)
    mc = res.beta_corrected.mean(0)
    gap_t = float(np.max(np.abs(mt / res.attenuated - 1.0)))
    gap_c = float(np.max(np.abs(mc / beta - 1.0)))
    rel = res.rel_error(res.plugin_cov)
    return [
        Check("mean attenuated estimate within 2% of (I - R) beta", gap_t <= 0.02, f"{gap_t:.4f}"),
        Check("mean corrected estimate within 2% of beta", gap_c <= 0.02, f"{gap_c:.4f}"),
        Check("empirical covariance within 25% of plug-in covariance", rel <= 0.25, f"{rel:.3f}"),
    ]
