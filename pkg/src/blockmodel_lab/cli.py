"""Experiment orchestration: config parsing, sweeps, persistence, plot data.

Config files are JSON. Every run in a sweep gets a seed that is a pure
function of (master seed, grid index, trial index), so reruns with the same
config and seed reproduce results byte for byte. Wall-clock columns are the
only nondeterministic fields and can be suppressed for comparisons.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .core import Labeling, ParameterError, SbmParams, derive, error_k
from .graphgen import STRATEGIES, Graph, corrupt, sample_sbm
from .pipeline import PipelineConfig, run_full_pipeline
from . import stats

SCHEMA_VERSION = 1

_MODEL_KEYS = {"n", "k", "d", "C_over_k", "eps"}
_ADVERSARY_KEYS = {"strategy", "eta", "budget_mult", "concentrate"}
_PIPELINE_KEYS = {
    "backend", "rounds", "chi", "cap_mult", "trim_mult", "K", "gamma",
    "split_p", "verify_retries", "fallback_unverified", "kmeans_restarts",
}
_TOP_KEYS = {"model", "adversary", "pipeline", "trials", "seed", "out"}


class ConfigError(ValueError):
    pass


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _check_keys(section: dict, allowed: set, path: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} under '{path}'")


def solve_d_for_target(c_over_k: float, k: int, eps: float, n: int) -> float:
    """Invert the monotone map d -> C_{d,eps}/k by bisection."""
    if eps <= 0:
        raise ConfigError("C_over_k targeting needs eps > 0")

    def c_of(d):
        return derive(SbmParams(n=n, k=k, d=d, eps=eps)).C / k

    lo, hi = 1e-9, float(n) * 0.999 / (1.0 + eps)
    if c_of(hi) < c_over_k:
        raise ConfigError(f"C/k = {c_over_k} unreachable at n = {n} (needs d > n)")
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if c_of(mid) < c_over_k:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


@dataclass
class ExperimentConfig:
    grid: list  # list of dicts with keys n, k, d, eps, eta
    strategy: str = "none"
    budget_mult: float = 2.0
    concentrate: bool = True
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    trials: int = 1
    seed: int = 0
    out: str = "results"

    @property
    def planned_runs(self):
        return len(self.grid) * self.trials

    def describe(self):
        return {
            "grid_points": len(self.grid),
            "trials": self.trials,
            "planned_runs": self.planned_runs,
            "strategy": self.strategy,
            "seed": self.seed,
            "out": self.out,
        }


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON sweep config; unknown keys are rejected."""
    with open(path) as fh:
        raw = json.load(fh)
    _check_keys(raw, _TOP_KEYS, "<root>")
    model = raw.get("model", {})
    _check_keys(model, _MODEL_KEYS, "model")
    if "n" not in model or "k" not in model or "eps" not in model:
        raise ConfigError("model requires n, k, eps")
    if ("d" in model) == ("C_over_k" in model):
        raise ConfigError("model requires exactly one of d, C_over_k")
    adversary = raw.get("adversary", {})
    _check_keys(adversary, _ADVERSARY_KEYS, "adversary")
    strategy = adversary.get("strategy", "none")
    if strategy not in ("none",) + STRATEGIES:
        raise ConfigError(f"adversary.strategy must be one of none|{'|'.join(STRATEGIES)}")
    pipe = dict(raw.get("pipeline", {}))
    _check_keys(pipe, _PIPELINE_KEYS, "pipeline")
    trials = int(raw.get("trials", 1))
    if trials < 1:
        raise ConfigError("trials must be >= 1")

    ns = [int(v) for v in _as_list(model["n"])]
    ks = [int(v) for v in _as_list(model["k"])]
    epss = [float(v) for v in _as_list(model["eps"])]
    etas = [float(v) for v in _as_list(adversary.get("eta", 0.0))]
    grid = []
    for n, k, eps, eta in itertools.product(ns, ks, epss, etas):
        if "d" in model:
            ds = [float(v) for v in _as_list(model["d"])]
        else:
            ds = [solve_d_for_target(float(v), k, eps, n) for v in _as_list(model["C_over_k"])]
        for d in ds:
            # surface invariant violations (e.g. k not a power of two) now
            try:
                SbmParams(n=n, k=k, d=d, eps=eps, eta=eta)
            except ParameterError as err:
                raise ConfigError(f"invalid grid point (n={n}, k={k}, d={d}, "
                                  f"eps={eps}, eta={eta}): {err}") from err
            grid.append({"n": n, "k": k, "d": d, "eps": eps, "eta": eta})
    if not grid:
        raise ConfigError("empty parameter grid")
    return ExperimentConfig(
        grid=grid,
        strategy=strategy,
        budget_mult=float(adversary.get("budget_mult", 2.0)),
        concentrate=bool(adversary.get("concentrate", True)),
        pipeline=PipelineConfig(**pipe),
        trials=trials,
        seed=int(raw.get("seed", 0)),
        out=str(raw.get("out", "results")),
    )


_ROW_FIELDS = [
    "schema_version", "n", "k", "d", "eps", "eta", "strategy", "trial", "seed",
    "status", "err_init", "err_bisection", "err_recursive", "err_final",
    "target_bisection", "target_recursive", "target_final", "C", "C_tilde_1",
    "neg_log_final_error", "trimmed_fraction", "verified", "attempts",
    "fallback_used", "schedule_rejected",
]
_RUNTIME_FIELDS = ["runtime_recursive", "runtime_final", "runtime_total"]


@dataclass
class ResultRow:
    schema_version: int = SCHEMA_VERSION
    n: int = 0
    k: int = 0
    d: float = 0.0
    eps: float = 0.0
    eta: float = 0.0
    strategy: str = "none"
    trial: int = 0
    seed: int = 0
    status: str = "ok"
    err_init: float | None = None
    err_bisection: float | None = None
    err_recursive: float | None = None
    err_final: float | None = None
    target_bisection: float = 0.0
    target_recursive: float = 0.0
    target_final: float = 0.0
    C: float = 0.0
    C_tilde_1: float = 0.0
    neg_log_final_error: float | None = None
    trimmed_fraction: float = 0.0
    verified: int = 0
    attempts: int = 0
    fallback_used: bool = False
    schedule_rejected: bool = False
    runtime_recursive: float = 0.0
    runtime_final: float = 0.0
    runtime_total: float = 0.0


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_seed(master_seed: int, grid_idx: int, trial: int) -> int:
    """Pure function of (master seed, grid index, trial index)."""
    return int(np.random.SeedSequence([master_seed, grid_idx, trial]).generate_state(1)[0])


def _run_one(args):
    cfg, grid_idx, trial = args
    point = cfg.grid[grid_idx]
    seed = run_seed(cfg.seed, grid_idx, trial)
    params = SbmParams(n=point["n"], k=point["k"], d=point["d"],
                       eps=point["eps"], eta=point["eta"])
    row = ResultRow(n=params.n, k=params.k, d=params.d, eps=params.eps,
                    eta=params.eta, strategy=cfg.strategy, trial=trial, seed=seed)
    try:
        ss = np.random.SeedSequence(seed).spawn(3)
        G, truth = sample_sbm(params, np.random.default_rng(ss[0]))
        if cfg.strategy != "none" and params.eta > 0:
            G, _ = corrupt(G, truth, params, cfg.strategy, np.random.default_rng(ss[1]),
                           budget_mult=cfg.budget_mult, concentrate=cfg.concentrate)
        labeling, rec = run_full_pipeline(G, params, cfg.pipeline,
                                          seed=int(ss[2].generate_state(1)[0]), truth=truth)
        row.status = rec.status
        for name in ("err_init", "err_bisection", "err_recursive", "err_final",
                     "target_bisection", "target_recursive", "target_final", "C",
                     "C_tilde_1", "trimmed_fraction", "verified", "attempts",
                     "fallback_used", "schedule_rejected", "runtime_recursive",
                     "runtime_final", "runtime_total"):
            setattr(row, name, getattr(rec, name))
        if row.err_final is not None:
            row.neg_log_final_error = -math.log(max(row.err_final, 1.0 / (2 * params.n)))
    except Exception as err:  # row-local: the sweep must survive bad points
        row.status = f"error:{type(err).__name__}"
    return grid_idx, trial, row


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[ResultRow]:
    """All grid x trial runs; failures are recorded per row, never fatal."""
    if workers is None:
        workers = int(os.environ.get("BLOCKMODEL_LAB_WORKERS", "1"))
    tasks = [(cfg, g, t) for g in range(len(cfg.grid)) for t in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    return [row for _, _, row in results]


def emit_csv(rows, path, include_runtime: bool = True):
    """Fixed-schema CSV; floats use repr so reruns are byte-identical."""
    if not rows:
        raise ValueError("refusing to write an empty result set")
    cols = _ROW_FIELDS + (_RUNTIME_FIELDS if include_runtime else [])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(getattr(row, c)) for c in cols) + "\n")
    return path


def emit_plotdata(rows, path):
    """(plot, series, x, y) tuples for error-vs-C/k and error-vs-eta curves.

    y is the log-error -ln(max(error, 1/(2n))), so exact-recovery rows stay
    plottable.
    """
    if not rows:
        raise ValueError("refusing to write an empty result set")
    with open(path, "w") as fh:
        fh.write("plot,series,x,y\n")
        for row in rows:
            if row.err_final is None:
                continue
            y = -math.log(max(row.err_final, 1.0 / (2 * row.n)))
            series = f"k={row.k};eta={row.eta};{row.strategy}"
            fh.write(f"error_vs_C_over_k,{series},{_fmt(row.C / row.k)},{_fmt(y)}\n")
            series = f"k={row.k};C={row.C:.6g};{row.strategy}"
            fh.write(f"error_vs_eta,{series},{_fmt(row.eta)},{_fmt(y)}\n")
    return path


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(args):
    params = SbmParams(n=args.n, k=args.k, d=args.d, eps=args.eps)
    G, Z = sample_sbm(params, args.seed)
    G.save(args.out + ".edges")
    Z.save(args.out + ".labels")
    print(f"wrote {args.out}.edges ({G.m} edges) and {args.out}.labels")
    return 0


def _cmd_attack(args):
    G = Graph.load(args.graph)
    Z = Labeling.load(args.labels)
    params = SbmParams(n=G.n, k=Z.k, d=args.d, eps=args.eps, eta=args.eta)
    Gc, report = corrupt(G, Z, params, args.strategy, args.seed,
                         budget_mult=args.budget_mult)
    Gc.save(args.out + ".edges")
    np.savetxt(args.out + ".corrupted", report.corrupted, fmt="%d")
    print(f"corrupted {report.corrupted.size} vertices with {args.strategy}; "
          f"wrote {args.out}.edges")
    return 0


def _cmd_pipeline(args):
    if args.graph:
        G = Graph.load(args.graph)
        truth = Labeling.load(args.truth) if args.truth else None
        n = G.n
    else:
        params0 = SbmParams(n=args.n, k=args.k, d=args.d, eps=args.eps, eta=args.eta)
        G, truth = sample_sbm(params0, args.seed)
        n = args.n
    params = SbmParams(n=n, k=args.k, d=args.d, eps=args.eps, eta=args.eta)
    pcfg = PipelineConfig(backend=args.backend)
    labeling, rec = run_full_pipeline(G, params, pcfg, seed=args.seed, truth=truth)
    print(f"status: {rec.status}")
    for name in ("err_init", "err_bisection", "err_recursive", "err_final"):
        val = getattr(rec, name)
        print(f"{name}: {'' if val is None else f'{val:.6g}'}")
    print(f"targets: bisection {rec.target_bisection:.3g}, "
          f"recursive {rec.target_recursive:.3g}, final {rec.target_final:.3g}")
    if labeling is not None and args.out:
        labeling.save(args.out)
        print(f"wrote {args.out}")
    return 0 if rec.status == "ok" else 1


def _cmd_stats_verify(args):
    """Appendix-statistics verifier suite; exit 0 iff zero violations."""
    violations = 0
    rng_seed = args.seed

    # calculus identities on a parameter grid
    for k in (2, 8, 16):
        for eps in (0.5, 1.0):
            params = SbmParams(n=100_000, k=k, d=2000.0, eps=eps)
            der = derive(params)
            if abs(stats.c_tilde(der.a, der.b, 1.0) - der.C) > 1e-10 * max(der.C, 1.0):
                violations += 1
            prev = -math.inf
            for i in range(1, int(math.log2(k)) + 1):
                lv = stats.level_params(i, params, der)
                ok, _ = stats.log_R_bounds_check(params, i, der)
                if not ok:
                    violations += 1
                if lv.beta * lv.C_tilde < prev - 1e-12:
                    violations += 1
                prev = lv.beta * lv.C_tilde

    # concavity sweep
    rng = np.random.default_rng(rng_seed)
    for _ in range(200):
        b = rng.uniform(1.0, 500.0)
        a = b * rng.uniform(1.0, 3.0)
        g = rng.uniform(0.01, 1.0)
        if not stats.concavity_check(a, b, n=1000.0 + a, gamma=g, grid_points=200):
            violations += 1

    # Monte Carlo tail checks on the default grid
    for alpha in (1 / 8, 1 / 16):
        for beta in (1 / 2, 1 / 4):
            for eps in (0.5, 1.0):
                for k in (8, 16):
                    params = SbmParams(n=100_000, k=k, d=2000.0, eps=eps)
                    der = derive(params)
                    spec = stats.MixtureSpec(alpha=alpha, beta=beta, a=der.a, b=der.b,
                                             n=params.n)
                    for theta in (0.0, alpha * (der.a - der.b) / 2.0):
                        rep = stats.mc_tail_check(spec, theta, trials=args.trials,
                                                  seed=rng_seed + 1)
                        if rep.violated:
                            violations += 1
    print(f"stats-verify: {violations} violation(s)")
    return 0 if violations == 0 else 1


def _cmd_bench(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    print(json.dumps(cfg.describe()))
    rows = run_experiment(cfg, workers=args.workers)
    csv_path = emit_csv(rows, cfg.out + ".csv", include_runtime=not args.no_runtime)
    plot_path = emit_plotdata(rows, cfg.out + ".plot.csv")
    bad = sum(1 for r in rows if r.status != "ok")
    print(f"wrote {csv_path} and {plot_path}; {len(rows)} rows, {bad} failed")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="blockmodel-lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a graph + labels pair")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("attack", help="apply a node adversary to a stored graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--budget-mult", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("pipeline", help="run recovery on a stored or sampled graph")
    p.add_argument("--graph")
    p.add_argument("--truth")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--backend", choices=("auto", "spectral", "sdp"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("stats-verify", help="run the concentration-bound verifier suite")
    p.add_argument("--trials", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_stats_verify)

    p = sub.add_parser("bench", help="run a config-driven sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-runtime", action="store_true",
                   help="omit wall-clock columns (byte-stable output)")
    p.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
