"""Command-line front end: ``lood <subcommand> --config FILE [--set key=value ...]``.

Every subcommand writes its reports and a ``manifest.json`` into the output
directory and prints a one-line summary. Failures print a JSON error object
to stderr and exit with 2 (config), 3 (numerical) or 4 (I/O).
"""

import argparse
import copy
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, LoodError
from .gp import Dataset, LeaveOneOutPair
from .io import (
    ToyGeneratorSpec,
    apply_override,
    config_hash,
    dumps,
    generate_toy,
    load_config,
    load_dataset,
    parse_override,
    save_dataset,
    write_csv,
    write_json,
)
from .kernels import Correlation, Linear, NngpFc, Rbf
from .leakage import (
    activation_scan,
    default_scan_template,
    group_reconstruction_study,
    lood_auc_correlation,
    lowrank_analysis,
    mia_auc,
)
from .metrics import LooModel
from .query import (
    GaussianAround,
    GivenPoint,
    OptConfig,
    UniformBox,
    find_nonstationary_s,
    hessian_check,
    optimize_query,
    perturbation_scan,
    verify_stationarity,
)

COMMANDS = (
    "score",
    "optimize-query",
    "scan-perturbation",
    "verify-stationarity",
    "find-nonstationary-s",
    "hessian-check",
    "mia-auc",
    "correlate",
    "lowrank-bound",
    "activation-scan",
    "group-reconstruct",
    "gen-toy",
)

LABEL_RULES = {
    "sine": lambda s: float(np.sin(s[0])),
    "zero": lambda s: 0.0,
}


# -- config helpers ----------------------------------------------------------


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def kernel_from_config(cfg):
    sec = _section(cfg, "kernel")
    family = str(sec.get("family", "rbf")).lower()
    if family == "rbf":
        return Rbf(float(sec.get("length", 1.0)))
    if family == "linear":
        return Linear(float(sec.get("scale", 1.0)))
    if family == "correlation":
        return Correlation(str(sec.get("profile", "exponential")))
    if family == "nngp":
        return NngpFc(
            depth=int(sec.get("depth", 1)),
            activation=str(sec.get("activation", "relu")).lower(),
            weight_variance=float(sec.get("weight_variance", 2.0)),
            bias_variance=float(sec.get("bias_variance", 0.0)),
            normalize_inputs=bool(sec.get("normalize_inputs", True)),
        )
    raise ConfigError(f"unknown kernel family {family!r}")


def toy_from_config(cfg):
    sec = _section(cfg, "toy")
    data = _section(cfg, "data")
    return ToyGeneratorSpec(
        kind=str(sec.get("kind", "sine")),
        n=int(sec.get("n", 10)),
        x_std=float(sec.get("x_std", 1.0)),
        noise_variance=float(data.get("noise_variance", sec.get("noise_variance", 0.01))),
        seed=int(sec.get("seed", cfg.get("seed", 0))),
    )


def dataset_from_config(cfg):
    sec = _section(cfg, "data")
    noise = float(sec.get("noise_variance", 0.01))
    if "path" in sec:
        return load_dataset(sec["path"], noise)
    if "toy" in cfg:
        return generate_toy(toy_from_config(cfg))
    if sec.get("empty", False):
        return Dataset(np.zeros((0, int(sec.get("dim", 1)))), np.zeros(0), noise)
    raise ConfigError("config needs [data].path, a [toy] table or [data].empty = true")


def pair_from_config(cfg, data):
    sec = _section(cfg, "differing")
    if "indices" in sec:
        idx = [int(i) for i in sec["indices"]]
        if not idx or min(idx) < 0 or max(idx) >= data.n:
            raise ConfigError(f"differing indices {idx} out of range for {data.n} rows")
        keep = np.setdiff1d(np.arange(data.n), idx)
        base = Dataset(data.features[keep], data.labels[keep], data.noise_variance)
        return LeaveOneOutPair(base, data.features[idx], data.labels[idx])
    if "points" in sec:
        pts = np.asarray(sec["points"], dtype=float).reshape(-1, data.dim)
        if "labels" in sec:
            labels = np.asarray(sec["labels"], dtype=float).reshape(-1)
        else:
            rule = LABEL_RULES.get(str(sec.get("label_rule", "sine")))
            if rule is None:
                raise ConfigError(f"unknown label rule {sec.get('label_rule')!r}")
            labels = np.array([rule(p) for p in pts])
        return LeaveOneOutPair(data, pts, labels)
    raise ConfigError("config needs [differing].indices or [differing].points")


def queries_from_config(cfg, pair):
    raw = _section(cfg, "queries").get("points", "at-differing")
    if isinstance(raw, str):
        if raw != "at-differing":
            raise ConfigError(f"unknown query spec {raw!r}")
        return pair.differing_features
    return np.asarray(raw, dtype=float).reshape(-1, pair.base.dim)


def optconfig_from_config(cfg):
    sec = _section(cfg, "optimizer")
    init_kind = str(sec.get("init", "uniform"))
    if init_kind == "uniform":
        init = UniformBox(float(sec.get("lo", -5.0)), float(sec.get("hi", 5.0)))
    elif init_kind == "given":
        init = GivenPoint(tuple(np.asarray(sec["point"], dtype=float).reshape(-1)))
    elif init_kind == "gaussian":
        init = GaussianAround(tuple(np.asarray(sec["point"], dtype=float).reshape(-1)), float(sec.get("std", 1.0)))
    else:
        raise ConfigError(f"unknown optimizer init {init_kind!r}")
    lr = sec.get("learning_rate")
    return OptConfig(
        max_iters=int(sec.get("max_iters", 2000)),
        learning_rate=None if lr is None else float(lr),
        grad_tol=float(sec.get("grad_tol", 1e-6)),
        project_to_sphere=bool(sec.get("project_to_sphere", False)),
        seed=int(cfg.get("seed", 0)),
        init=init,
    )


# -- subcommands -------------------------------------------------------------


def cmd_gen_toy(cfg, out):
    data = generate_toy(toy_from_config(cfg))
    save_dataset(out / "toy.csv", data)
    return f"gen-toy: wrote {data.n} rows to {out / 'toy.csv'}"


def cmd_score(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    rep = LooModel(spec, pair).report(queries_from_config(cfg, pair))
    write_json(out / "report.json", rep.to_dict())
    return f"score: kl={rep.kl:.6g} mean_distance={rep.mean_distance:.6g} queries={rep.query_count}"


def cmd_optimize_query(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    sec = _section(cfg, "optimizer")
    objective = str(sec.get("objective", "kl"))
    q = int(sec.get("queries", 1))
    trace = optimize_query(spec, pair, objective, q, optconfig_from_config(cfg))
    write_json(out / "trace.json", {"objective": objective, **trace.to_dict()})
    return f"optimize-query: {objective}={trace.final_value:.6g} converged={trace.converged} ({trace.stop_reason})"


def cmd_scan_perturbation(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    sec = _section(cfg, "scan")
    direction = np.asarray(sec.get("direction", [1.0] * pair.base.dim), dtype=float)
    lo, hi, step = float(sec.get("x_min", -2.0)), float(sec.get("x_max", 2.0)), float(sec.get("x_step", 0.05))
    xs = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    curve = perturbation_scan(spec, pair, direction, xs)
    write_csv(out / "scan.csv", ["x", "kl", "mean_distance"], [(p.x, p.kl, p.mean_distance) for p in curve])
    best = max(curve, key=lambda p: p.kl)
    return f"scan-perturbation: {len(curve)} points, kl maximal at x={best.x:.6g}"


def cmd_verify_stationarity(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    sec = _section(cfg, "stationarity")
    rep = verify_stationarity(spec, pair, float(sec.get("tol", 1e-5)), float(sec.get("fd_tol", 1e-3)))
    write_json(out / "stationarity.json", rep.to_dict())
    verdict = "pass" if rep.passed else f"fail ({rep.cause})"
    return f"verify-stationarity: {verdict} analytic={rep.analytic_norm:.3g} fd={rep.fd_norm:.3g}"


def cmd_find_nonstationary_s(cfg, out):
    spec = kernel_from_config(cfg)
    data = dataset_from_config(cfg)
    sec = _section(cfg, "search")
    rule = LABEL_RULES.get(str(sec.get("label_rule", "sine")))
    if rule is None:
        raise ConfigError(f"unknown label rule {sec.get('label_rule')!r}")
    res = find_nonstationary_s(spec, data, rule, optconfig_from_config(cfg), int(sec.get("restarts", 10)))
    write_json(
        out / "nonstationary.json",
        {
            "point": res.point,
            "grad_norm": float(np.sqrt(res.value)),
            "restarts": [{"final": t.final_query[0], "value": t.final_value, "stop_reason": t.stop_reason} for t in res.traces],
        },
    )
    return f"find-nonstationary-s: S*={np.array2string(res.point, precision=6)} |grad M|={np.sqrt(res.value):.6g}"


def cmd_hessian_check(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    rep = hessian_check(spec, pair)
    write_json(out / "hessian.json", rep.to_dict())
    return f"hessian-check: max eigenvalue {rep.max_eigenvalue:.6g} negative_definite={rep.negative_definite}"


def cmd_mia_auc(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    if pair.s != 1:
        raise ConfigError("mia-auc needs a single differing record")
    n = int(_section(cfg, "mia").get("n_samples", 5000))
    post_d, post_dp = LooModel(spec, pair).posteriors(pair.differing_features)
    res = mia_auc(post_d, post_dp, n, int(cfg.get("seed", 0)))
    write_json(out / "mia.json", res.to_dict())
    return f"mia-auc: auc={res.auc:.6g} over {n} samples"


def cmd_correlate(cfg, out):
    spec = kernel_from_config(cfg)
    data = dataset_from_config(cfg)
    sec = _section(cfg, "candidates")
    if "path" not in sec:
        raise ConfigError("correlate needs [candidates].path")
    cand = load_dataset(sec["path"], data.noise_variance)
    n = int(_section(cfg, "mia").get("n_samples", 5000))
    rep = lood_auc_correlation(spec, data, cand.features, cand.labels, n, int(cfg.get("seed", 0)))
    write_csv(out / "correlation.csv", ["index", "kl", "log_kl", "auc"], [(r.index, r.kl, r.log_kl, r.auc) for r in rep.rows])
    write_json(out / "correlation.json", rep.to_dict())
    sp = "absent" if rep.spearman is None else f"{rep.spearman:.4f}"
    return f"correlate: {len(rep.rows)} candidates, spearman={sp}"


def cmd_lowrank_bound(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    sec = _section(cfg, "lowrank")
    if "grid" in sec:
        grid = np.asarray(sec["grid"], dtype=float).reshape(-1, pair.base.dim)
    else:
        feats = pair.augmented.features
        lo, hi = feats.min(axis=0), feats.max(axis=0)
        m = int(sec.get("points_per_axis", 101 if pair.base.dim == 1 else 21))
        axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    rep = lowrank_analysis(spec, pair, grid)
    write_json(out / "lowrank.json", rep.to_dict())
    return f"lowrank-bound: observed {rep.observed_max_lood:.6g} <= bound {rep.bound:.6g}: {rep.holds}"


def cmd_activation_scan(cfg, out):
    sec = _section(cfg, "activation_scan")
    depths = [int(v) for v in sec.get("depths", [4, 8, 16, 32, 64])]
    x = np.asarray(sec.get("x", [1.0, 0.0]), dtype=float)
    y = np.asarray(sec.get("y", [0.0, 1.0]), dtype=float)
    results = [activation_scan(default_scan_template(a), depths, x, y) for a in sec.get("activations", ["relu", "gelu"])]
    rows = []
    for r in results:
        rows.extend((r.activation, L, v, dist) for L, v, dist in zip(r.depths, r.values, r.distances))
    write_csv(out / "activation_scan.csv", ["activation", "depth", "kernel", "distance"], rows)
    write_json(out / "activation_scan.json", [r.to_dict() for r in results])
    return "activation-scan: " + ", ".join(f"{r.activation} slope={r.fitted_slope}" for r in results)


def cmd_group_reconstruct(cfg, out):
    spec = kernel_from_config(cfg)
    pair = pair_from_config(cfg, dataset_from_config(cfg))
    runs = int(_section(cfg, "group").get("runs", 30))
    study = group_reconstruction_study(
        spec, pair.base, pair.differing_features, pair.differing_labels, runs, optconfig_from_config(cfg)
    )
    rows = [(r["member"], r["single_query_kl"], r["recoveries"], r["frequency"]) for r in study.to_rows()]
    write_csv(out / "group.csv", ["member", "single_query_kl", "recoveries", "frequency"], rows)
    write_json(
        out / "group.json",
        {
            "members": study.to_rows(),
            "non_converged": study.non_converged,
            "runs": [
                {"run": o.run, "final_query": o.final_query, "converged": o.converged, "nearest": o.nearest, "distance": o.distance}
                for o in study.outcomes
            ],
        },
    )
    return f"group-reconstruct: recoveries {study.recoveries}, non-converged {study.non_converged}"


HANDLERS = {
    "score": cmd_score,
    "optimize-query": cmd_optimize_query,
    "scan-perturbation": cmd_scan_perturbation,
    "verify-stationarity": cmd_verify_stationarity,
    "find-nonstationary-s": cmd_find_nonstationary_s,
    "hessian-check": cmd_hessian_check,
    "mia-auc": cmd_mia_auc,
    "correlate": cmd_correlate,
    "lowrank-bound": cmd_lowrank_bound,
    "activation-scan": cmd_activation_scan,
    "group-reconstruct": cmd_group_reconstruct,
    "gen-toy": cmd_gen_toy,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="lood", description="Leave-one-out distinguishability of GP models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in COMMANDS:
        p = sub.add_parser(name, help=(HANDLERS[name].__doc__ or name.replace("-", " ")))
        p.add_argument("--config", "-c", help="TOML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (dotted path)")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")
        p.add_argument("--output-dir", "-o", help="output directory (overrides config)")
    return parser


def _error(exc, code):
    payload = {"error": getattr(exc, "code", "error"), "exit_code": code, "message": str(exc)}
    for attr in ("row", "column"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(dumps(payload))
    return code


def run(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        cfg = copy.deepcopy(cfg)
        for text in args.set:
            path, value = parse_override(text)
            apply_override(cfg, path, value)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.output_dir is not None:
            cfg["output_dir"] = args.output_dir
        cfg.setdefault("seed", 0)
        out = Path(str(cfg.get("output_dir", "lood-out")))
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            from .errors import DatasetIOError

            raise DatasetIOError(f"cannot create output directory {out}: {exc}") from exc
        summary = HANDLERS[args.command](cfg, out)
        # the output location does not change the experiment
        experiment = {k: v for k, v in cfg.items() if k != "output_dir"}
        write_json(
            out / "manifest.json",
            {"command": args.command, "config_hash": config_hash(experiment), "seed": int(cfg["seed"]), "version": __version__},
        )
    except LoodError as exc:
        return _error(exc, exc.exit_code)
    except (KeyError, TypeError, ValueError) as exc:
        return _error(ConfigError(f"invalid configuration: {exc}"), 2)
    except np.linalg.LinAlgError as exc:
        return _error(exc, 3)
    print(summary)
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
