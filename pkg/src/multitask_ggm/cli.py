"""Command-line interface: ``fit``, ``synth``, ``eval`` and ``sweep``.

Every option may also come from a YAML config file (``--config``). Keys
mirror the long flag names with dashes replaced by underscores, and may be
grouped under nested sections; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bcd import SolverError, solve
from .fileio import (MatrixFormatError, file_sha256, json_safe,
                     load_matrix_csv, sample_covariance, write_json,
                     write_results)
from .model import (DefinitenessError, DegenerateInputError, NormOrder,
                    PrecisionSet, ProblemSpec, TaskSuite, multitask_objective,
                    optimality_residual)
from .synth import (default_rho_grid, generate_ground_truth,
                    kl_divergence, roc_sweep, sample_dataset, support_metrics)

logger = logging.getLogger("multitask_ggm")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3

DEFAULTS = {
    "input": [],
    "input_kind": "samples",
    "rho": None,
    "p": "inf",
    "penalize_diagonal": False,
    "max_sweeps": 10,
    "tol": 1e-6,
    "newton_iters": 10,
    "seed": 0,
    "out": None,
    "no_center": False,
    "record_timing": False,
    "backend": None,
    # synth
    "n_features": 20,
    "n_tasks": 3,
    "density": 0.1,
    "samples": 200,
    "repetitions": 10,
    "grid_size": 20,
    "grid_span": 1e-2,
    # eval
    "truth": [],
    "truth_kind": "precision",
    "threshold": None,
}

HEADER = ["repetition", "rho", "sensitivity", "specificity", "kl_mean"]


class ConfigError(ValueError):
    pass


def _flatten(cfg, out=None) -> dict:
    out = {} if out is None else out
    for key, value in cfg.items():
        if isinstance(value, dict):
            _flatten(value, out)
        else:
            out[str(key).replace("-", "_")] = value
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    flat = _flatten(raw)
    unknown = sorted(set(flat) - set(DEFAULTS) - {"command"})
    if unknown:
        raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
    return flat


def _resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for key, value in vars(args).items():
        if key in ("config", "command", "func"):
            continue
        cfg[key] = value
    for key in ("input", "truth"):
        if isinstance(cfg[key], str):
            cfg[key] = [cfg[key]]
    return cfg


def _spec(cfg, rho=None) -> ProblemSpec:
    rho = cfg["rho"] if rho is None else rho
    if rho is None:
        raise ConfigError("--rho is required")
    if isinstance(rho, (list, tuple)):
        if len(rho) != 1:
            raise ConfigError("fit takes a single --rho")
        rho = rho[0]
    return ProblemSpec(rho=float(rho), norm=NormOrder.parse(cfg["p"]),
                       penalize_diagonal=bool(cfg["penalize_diagonal"]),
                       max_sweeps=int(cfg["max_sweeps"]),
                       objective_tol=float(cfg["tol"]),
                       newton_iters=int(cfg["newton_iters"]))


def _spec_dict(spec: ProblemSpec) -> dict:
    return {"rho": spec.rho, "p": spec.norm.value,
            "penalize_diagonal": spec.penalize_diagonal,
            "max_sweeps": spec.max_sweeps, "objective_tol": spec.objective_tol,
            "newton_iters": spec.newton_iters}


def _load_suite(cfg):
    paths = cfg["input"]
    if not paths:
        raise ConfigError("at least one --input is required")
    kind = cfg["input_kind"]
    covs, counts, fingerprints = [], [], []
    for path in paths:
        mf = load_matrix_csv(path, kind)
        if kind == "samples":
            cov, t = sample_covariance(mf, center=not cfg["no_center"])
        else:
            cov, t = mf.data, 1.0
        covs.append(cov)
        counts.append(float(t))
        fingerprints.append({"path": str(path), "sha256": file_sha256(path),
                             "kind": kind, "rows": mf.shape[0],
                             "cols": mf.shape[1], "sample_count": float(t)})
    orders = {c.shape[0] for c in covs}
    if len(orders) != 1:
        raise ConfigError(f"inputs disagree on the number of variables: "
                          f"{sorted(orders)}")
    return TaskSuite(np.stack(covs), np.array(counts)), fingerprints


def _manifest(command, spec, suite, fingerprints, cfg, status) -> dict:
    return {"tool": "multitask-ggm", "version": __version__,
            "command": command, "status": status, "spec": _spec_dict(spec),
            "inputs": fingerprints, "n_tasks": suite.n_tasks,
            "n_features": suite.n_features,
            "sample_counts": [float(t) for t in suite.sample_counts],
            "seed": cfg["seed"]}


def _require_out(cfg) -> Path:
    if not cfg["out"]:
        raise ConfigError("--out is required")
    return Path(cfg["out"])


def run_fit(cfg) -> int:
    out = _require_out(cfg)
    spec = _spec(cfg)
    suite, fingerprints = _load_suite(cfg)
    try:
        precs, report = solve(suite, spec, backend=cfg["backend"])
    except SolverError as exc:
        manifest = _manifest("fit", spec, suite, fingerprints, cfg, "failed")
        manifest["partial"] = True
        manifest["error"] = str(exc)
        write_results(None, exc.report, manifest, out, cfg["record_timing"])
        raise
    manifest = _manifest("fit", spec, suite, fingerprints, cfg, "ok")
    manifest["optimality_residual"] = optimality_residual(suite, precs, spec)
    write_results(precs, report, manifest, out, cfg["record_timing"])
    return EXIT_OK


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.17g}" if isinstance(v, float) else v
                         for v in row])
    return buf.getvalue()


def run_synth_experiment(cfg) -> dict:
    """Repeat truth generation, sampling and a rho sweep; return CSV rows."""
    n, k = int(cfg["n_features"]), int(cfg["n_tasks"])
    density, t = float(cfg["density"]), int(cfg["samples"])
    reps = int(cfg["repetitions"])
    if reps < 1:
        raise ConfigError("repetitions must be at least 1")
    fixed_grid = cfg["rho"]
    if fixed_grid is not None and not isinstance(fixed_grid, (list, tuple)):
        fixed_grid = [fixed_grid]
    template = _spec(cfg, rho=1.0)
    streams = np.random.SeedSequence(int(cfg["seed"])).spawn(reps)
    rows, aucs, failures = [], [], []
    for rep, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        try:
            truth = generate_ground_truth(n, k, density, rng)
            data = sample_dataset(truth, t, rng)
            covs = np.stack([sample_covariance(x)[0] for x in data])
            suite = TaskSuite(covs, np.full(k, float(t)))
            grid = (np.asarray(fixed_grid, dtype=float) if fixed_grid
                    else default_rho_grid(suite, template.norm,
                                          int(cfg["grid_size"]),
                                          float(cfg["grid_span"])))
            result = roc_sweep(suite, truth, template, grid)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            logger.warning("repetition %d failed: %s", rep, exc)
            failures.append({"repetition": rep, "error": str(exc)})
            continue
        aucs.append(result.auc)
        for gi, pt in enumerate(result.points):
            m = pt.metrics
            rows.append((rep, gi, pt.rho,
                         m.sensitivity if m else math.nan,
                         m.specificity if m else math.nan, pt.kl_mean))
            if pt.error:
                failures.append({"repetition": rep, "rho": pt.rho,
                                 "error": pt.error})
    return {"rows": rows, "aucs": aucs, "failures": failures}


def _aggregate(rows):
    by_index = {}
    for rep, gi, rho, sens, spec, kl in rows:
        by_index.setdefault(gi, []).append((rho, sens, spec, kl))
    out = []
    for gi in sorted(by_index):
        vals = np.array(by_index[gi])
        ok = ~np.isnan(vals[:, 1])
        means = (vals[ok].mean(axis=0) if ok.any()
                 else np.full(4, math.nan))
        out.append((gi, float(vals[:, 0].mean()), float(means[1]),
                    float(means[2]), float(means[3]), int(ok.sum())))
    return out


def run_synth(cfg) -> int:
    out = _require_out(cfg)
    result = run_synth_experiment(cfg)
    out.mkdir(parents=True, exist_ok=True)
    long_rows = [(r[0], r[2], r[3], r[4], r[5]) for r in result["rows"]]
    (out / "synth_points.csv").write_text(_csv_text(HEADER, long_rows))
    (out / "synth_aggregate.csv").write_text(_csv_text(
        ["grid_index", "rho", "sensitivity", "specificity", "kl_mean",
         "n_valid"], _aggregate(result["rows"])))
    spec = _spec(cfg, rho=1.0)
    snapshot = _spec_dict(spec)
    del snapshot["rho"]
    manifest = {
        "tool": "multitask-ggm", "version": __version__, "command": "synth",
        "status": "ok" if not result["failures"] else "partial",
        "seed": int(cfg["seed"]), "spec": snapshot,
        "protocol": {"n_features": int(cfg["n_features"]),
                     "n_tasks": int(cfg["n_tasks"]),
                     "density": float(cfg["density"]),
                     "samples": int(cfg["samples"]),
                     "repetitions": int(cfg["repetitions"]),
                     "grid_size": int(cfg["grid_size"]),
                     "grid_span": float(cfg["grid_span"]),
                     "rho_grid": cfg["rho"]},
        "auc": result["aucs"], "failures": result["failures"],
        "artifacts": {"points": "synth_points.csv",
                      "aggregate": "synth_aggregate.csv"},
        "schema_version": 1,
    }
    write_json(out / "run_manifest.json", json_safe(manifest))
    return EXIT_OK


def _load_stack(paths, what):
    mats = [load_matrix_csv(p, "covariance").data for p in paths]
    if len({m.shape for m in mats}) != 1:
        raise ConfigError(f"{what} matrices differ in shape")
    return np.stack(mats)


def run_eval(cfg) -> int:
    if not cfg["input"] or not cfg["truth"]:
        raise ConfigError("eval needs --input estimates and --truth files")
    est = PrecisionSet(_load_stack(cfg["input"], "estimate"))
    truth_stack = _load_stack(cfg["truth"], "truth")
    if cfg["truth_kind"] == "adjacency":
        topology = truth_stack[0] != 0
        np.fill_diagonal(topology, False)
        kl = None
    else:
        if truth_stack.shape != est.matrices.shape:
            raise ConfigError("truth and estimate stacks differ in shape")
        topology = np.any(truth_stack != 0, axis=0)
        np.fill_diagonal(topology, False)
        kl = [kl_divergence(a, b) for a, b in zip(truth_stack, est.matrices)]
    metrics = support_metrics(topology.astype(np.int8), est,
                              cfg["threshold"])
    payload = json_safe({"sensitivity": metrics.sensitivity,
                         "specificity": metrics.specificity,
                         "threshold": metrics.threshold,
                         "kl": kl,
                         "kl_mean": float(np.mean(kl)) if kl else None})
    text = json.dumps(payload, indent=2, sort_keys=True)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "metrics.json", payload)
    print(text)
    return EXIT_OK


def run_sweep(cfg) -> int:
    out = _require_out(cfg)
    suite, fingerprints = _load_suite(cfg)
    template = _spec(cfg, rho=1.0)
    grid = cfg["rho"]
    if grid is None:
        grid = default_rho_grid(suite, template.norm, int(cfg["grid_size"]),
                                float(cfg["grid_span"]))
    elif not isinstance(grid, (list, tuple)):
        grid = [grid]
    rows = []
    for i, rho in enumerate(sorted(float(r) for r in grid)):
        spec = _spec(cfg, rho=rho)
        sub = out / f"rho_{i:03d}"
        try:
            precs, report = solve(suite, spec, backend=cfg["backend"])
        except SolverError as exc:
            logger.warning("rho=%g failed: %s", rho, exc)
            rows.append((i, rho, math.nan, "", report_sweeps(exc.report),
                         "failed"))
            continue
        manifest = _manifest("sweep", spec, suite, fingerprints, cfg, "ok")
        write_results(precs, report, manifest, sub, cfg["record_timing"])
        offdiag = np.max(np.abs(precs.matrices), axis=0)
        np.fill_diagonal(offdiag, 0.0)
        rows.append((i, rho, multitask_objective(suite, precs, spec),
                     int(np.count_nonzero(np.triu(offdiag, 1))),
                     report.sweeps_run, "ok"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(_csv_text(
        ["grid_index", "rho", "objective", "edges", "sweeps_run", "status"],
        rows))
    return EXIT_OK


def report_sweeps(report):
    return report.sweeps_run if report is not None else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multitask-ggm",
        description="Sparse multi-task Gaussian graphical models.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p, multi_rho=False):
        p.add_argument("--config", help="YAML file; flags override it")
        if multi_rho:
            p.add_argument("--rho", type=float, action="append", default=S,
                           help="regularization level (repeatable)")
        else:
            p.add_argument("--rho", type=float, default=S)
        p.add_argument("--p", choices=["2", "inf"], default=S)
        p.add_argument("--penalize-diagonal", action="store_true", default=S)
        p.add_argument("--max-sweeps", type=int, default=S)
        p.add_argument("--tol", type=float, default=S)
        p.add_argument("--newton-iters", type=int, default=S)
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--out", default=S)
        p.add_argument("--backend", choices=["compiled", "python"], default=S)
        p.add_argument("--record-timing", action="store_true", default=S,
                       help="store wall time in the fit report")

    def data(p):
        p.add_argument("--input", action="append", default=S,
                       help="one CSV per task (repeatable)")
        p.add_argument("--input-kind", choices=["samples", "covariance"],
                       default=S)
        p.add_argument("--no-center", action="store_true", default=S,
                       help="do not subtract the sample mean")

    def grid(p):
        p.add_argument("--grid-size", type=int, default=S)
        p.add_argument("--grid-span", type=float, default=S,
                       help="smallest/largest rho of the default grid")

    p = sub.add_parser("fit", help="estimate precision matrices")
    common(p)
    data(p)
    p.set_defaults(func=run_fit)

    p = sub.add_parser("synth", help="synthetic recovery experiment")
    common(p, multi_rho=True)
    grid(p)
    p.add_argument("--n-features", type=int, default=S)
    p.add_argument("--n-tasks", type=int, default=S)
    p.add_argument("--density", type=float, default=S)
    p.add_argument("--samples", type=int, default=S,
                   help="samples per task")
    p.add_argument("--repetitions", type=int, default=S)
    p.set_defaults(func=run_synth)

    p = sub.add_parser("eval", help="score estimates against a known truth")
    p.add_argument("--config")
    p.add_argument("--input", action="append", default=S,
                   help="estimated precision CSV per task")
    p.add_argument("--truth", action="append", default=S,
                   help="true precision CSV per task, or one adjacency CSV")
    p.add_argument("--truth-kind", choices=["precision", "adjacency"],
                   default=S)
    p.add_argument("--threshold", type=float, default=S)
    p.add_argument("--out", default=S)
    p.set_defaults(func=run_eval)

    p = sub.add_parser("sweep", help="fit over a rho grid")
    common(p, multi_rho=True)
    data(p)
    grid(p)
    p.set_defaults(func=run_sweep)
    return parser


def _error_record(exc, code, cfg) -> dict:
    record = {"status": "error", "exit_code": code,
              "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SolverError) and exc.report is not None:
        record["sweeps_run"] = exc.report.sweeps_run
    out = cfg.get("out") if cfg else None
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_json(Path(out) / "error.json", record)
        except OSError:
            pass
    return record


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    cfg = None
    try:
        cfg = _resolve(args)
        return args.func(cfg)
    except SolverError as exc:
        code = EXIT_SOLVER
        record = _error_record(exc, code, cfg)
    except (OSError, ValueError, ConfigError, MatrixFormatError,
            DefinitenessError, DegenerateInputError) as exc:
        code = EXIT_INPUT
        record = _error_record(exc, code, cfg)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
