"""Batch entry points: simulate, fit, evaluate, benchmark.

Configuration is a JSON document per command; command-line flags override
file values and unknown keys are rejected.  Results are written as JSON
records (line-delimited for benchmark rows), data as CSV.  Exit codes:
0 success, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from multiprocessing import get_context

import numpy as np

from .bridges import BridgeTuning, fit_bridges
from .data import SampleTable
from .errors import DegenerateDataError, NumericOverflowError, ProxitrError
from .evaluate import (value_dr, value_oracle_noise_free, value_outcome, value_treatment)
from .policy import PolicyTuning, learn_dr, learn_maximum, learn_outcome, learn_treatment
from .serialize import bridges_from_dict, bridges_to_dict, policy_from_dict, policy_to_dict
from .simgen import GeneratedData, generate, noise_free_testset, oracle_policies, scenario

__all__ = ["main", "cmd_simulate", "cmd_fit", "cmd_evaluate", "cmd_benchmark",
           "default_config", "ConfigError", "DataError"]

log = logging.getLogger("proxitr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ProxitrError):
    """Invalid or unknown configuration."""


class DataError(ProxitrError):
    """Unreadable or schema-violating input data."""


_BRIDGE_DEFAULTS = {"s_grid": [0.02, 0.2, 2.0, 20.0], "folds": 5, "nystrom": "auto"}
_POLICY_DEFAULTS = {
    "rho_grid": [float(g) for g in np.logspace(-4, 1, 8)],
    "folds": 5,
    "function_class": "linear",
}

DEFAULTS = {
    "simulate": {
        "scenario": "L1", "n": 500, "seed": 0, "noise_dims": 0, "noise_free": False,
    },
    "fit": {
        "learner": "d1", "seed": 0,
        "bridge": dict(_BRIDGE_DEFAULTS), "policy": dict(_POLICY_DEFAULTS),
    },
    "evaluate": {"seed": 0},
    "benchmark": {
        "scenario": "L1", "n": 500, "replicates": 2, "n_test": 100000,
        "noise_dims": 0, "seed": 0, "workers": 1, "learners": ["d1"],
        "bridge": dict(_BRIDGE_DEFAULTS), "policy": dict(_POLICY_DEFAULTS),
        "coverage": {"enabled": False},
    },
}

LEARNER_IDS = ("d1", "d2", "d4", "d3dr", "d1L", "d2L")


def default_config(command: str) -> dict:
    return copy.deepcopy(DEFAULTS[command])


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, val in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(defaults[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(command: str, path: str | None, overrides: dict) -> dict:
    cfg = default_config(command)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config document must be a JSON object")
        cfg = _merge(cfg, file_cfg)
    cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    return cfg


def _config_hash(command: str, cfg: dict) -> str:
    payload = json.dumps({"command": command, "config": cfg}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _bridge_tuning(cfg: dict) -> BridgeTuning:
    return BridgeTuning(s_grid=tuple(cfg["s_grid"]), folds=int(cfg["folds"]),
                        nystrom=cfg["nystrom"])


def _policy_tuning(cfg: dict) -> PolicyTuning:
    return PolicyTuning(rho_grid=tuple(cfg["rho_grid"]), folds=int(cfg["folds"]),
                        function_class=cfg["function_class"])


def _read_table(path) -> SampleTable:
    try:
        return SampleTable.from_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ProxitrError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _fit_one(name: str, table: SampleTable, bridges, ptuning: PolicyTuning,
             btuning: BridgeTuning, seed: int):
    if name == "d1":
        return learn_outcome(table, bridges, ptuning, seed=seed, features="LZ")
    if name == "d1L":
        return learn_outcome(table, bridges, ptuning, seed=seed, features="L")
    if name == "d2":
        return learn_treatment(table, bridges, ptuning, seed=seed, features="LW")
    if name == "d2L":
        return learn_treatment(table, bridges, ptuning, seed=seed, features="L")
    if name == "d4":
        return learn_maximum(table, bridges, ptuning, seed=seed)
    if name == "d3dr":
        return learn_dr(table, ptuning, btuning, seed=seed, bridges=bridges)
    raise ConfigError(f"unknown learner {name!r}; choose from {LEARNER_IDS}")


def _report_to_record(report) -> dict:
    rec = {"rho_selected": report.rho_selected,
           "cv_values": [float(v) for v in report.cv_values],
           "rho_grid": list(report.rho_grid),
           "best_cv_value": report.best_value}
    if report.hsic_gamma is not None:
        rec["hsic_gamma"] = report.hsic_gamma
    if report.branch is not None:
        rec["branch"] = report.branch
        rec["branch_values"] = report.branch_values
    return rec


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out_dir: str) -> dict:
    t0 = time.perf_counter()
    scn = scenario(cfg["scenario"], noise_dims=int(cfg["noise_dims"]), seed=int(cfg["seed"]))
    data = (noise_free_testset(scn, int(cfg["n"])) if cfg["noise_free"]
            else generate(scn, int(cfg["n"])))
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "data.csv")
    truth_path = os.path.join(out_dir, "truth.csv")
    data.table.to_csv(data_path)
    data.ground_truth_csv(truth_path)
    record = {
        "command": "simulate", "config": cfg, "config_hash": _config_hash("simulate", cfg),
        "run_id": _config_hash("simulate", cfg), "seed": cfg["seed"],
        "files": {"data": "data.csv", "truth": "truth.csv"},
        "n": data.table.n, "columns": data.table.header(),
        "wall_clock_s": round(time.perf_counter() - t0, 6),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), record)
    return record


def cmd_fit(cfg: dict, data_path: str, out_dir: str) -> dict:
    t0 = time.perf_counter()
    if cfg["learner"] not in LEARNER_IDS:
        raise ConfigError(f"unknown learner {cfg['learner']!r}; choose from {LEARNER_IDS}")
    table = _read_table(data_path)
    btuning = _bridge_tuning(cfg["bridge"])
    ptuning = _policy_tuning(cfg["policy"])
    seed = int(cfg["seed"])
    bridges = fit_bridges(table, btuning, seed=seed)
    policy, report = _fit_one(cfg["learner"], table, bridges, ptuning, btuning, seed)
    os.makedirs(out_dir, exist_ok=True)
    model = {"learner": cfg["learner"], "policy": policy_to_dict(policy),
             "bridges": bridges_to_dict(bridges)}
    model_path = os.path.join(out_dir, "model.json")
    _write_json(model_path, model)
    bridge_sel = {f"{role}{arm:+d}": {"gamma": rep.gamma_selected, "s": rep.s_selected}
                  for role, reps in (("h", bridges.h_reports), ("q", bridges.q_reports))
                  for arm, rep in reps.items()}
    record = {
        "command": "fit", "config": cfg, "config_hash": _config_hash("fit", cfg),
        "run_id": _config_hash("fit", cfg), "seed": cfg["seed"],
        "learner": cfg["learner"], "n": table.n,
        "selected": {"policy": _report_to_record(report), "bridges": bridge_sel},
        "files": {"model": "model.json"},
        "wall_clock_s": round(time.perf_counter() - t0, 6),
    }
    _write_json(os.path.join(out_dir, "record.json"), record)
    return record


def cmd_evaluate(cfg: dict, model_path: str, data_path: str, out_dir: str,
                 truth_path: str | None = None) -> dict:
    t0 = time.perf_counter()
    try:
        with open(model_path, "r", encoding="utf-8") as fh:
            model = json.load(fh)
        policy = policy_from_dict(model["policy"])
        bridges = bridges_from_dict(model["bridges"])
    except OSError as exc:
        raise DataError(f"cannot read model {model_path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"model file {model_path} is malformed: {exc}") from exc
    table = _read_table(data_path)

    values = {}
    if policy.features == "LZ":
        values["outcome"] = _estimate_to_dict(value_outcome(table, bridges, policy))
    elif policy.features == "LW":
        values["treatment"] = _estimate_to_dict(value_treatment(table, bridges, policy))
    else:
        values["doubly_robust"] = _estimate_to_dict(value_dr(table, bridges, bridges, policy))
        values["outcome"] = _estimate_to_dict(value_outcome(table, bridges, policy))
        values["treatment"] = _estimate_to_dict(value_treatment(table, bridges, policy))
    if truth_path is not None:
        try:
            test = GeneratedData.from_csv(data_path, truth_path)
        except ProxitrError as exc:
            raise DataError(str(exc)) from exc
        oracle = value_oracle_noise_free(test, policy) if test_is_noise_free(test) \
            else value_oracle_ipw_wrapped(test, policy)
        values["oracle"] = _estimate_to_dict(oracle)

    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": "evaluate", "config": cfg, "config_hash": _config_hash("evaluate", cfg),
        "run_id": _config_hash("evaluate", cfg), "seed": cfg["seed"],
        "learner": model.get("learner"), "n": table.n, "values": values,
        "wall_clock_s": round(time.perf_counter() - t0, 6),
    }
    _write_json(os.path.join(out_dir, "record.json"), record)
    return record


def test_is_noise_free(test: GeneratedData) -> bool:
    return bool(np.allclose(test.table.Y, test.mu))


def value_oracle_ipw_wrapped(test, policy):
    from .evaluate import value_oracle_ipw
    return value_oracle_ipw(test, policy)


def _estimate_to_dict(est) -> dict:
    return {"point": est.point, "se": est.se,
            "ci": list(est.ci) if est.ci is not None else None,
            "estimator": est.estimator, "n_used": est.n_used}


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def _replicate_seeds(seed: int, count: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)]


def _run_replicate(args) -> dict:
    cfg, rep, rep_seed, d3_decider = args
    t0 = time.perf_counter()
    out = {"replicate": rep, "seed": rep_seed, "error": None,
           "policies": {}, "selected": {}, "coverage": None}
    try:
        scn = scenario(cfg["scenario"], noise_dims=int(cfg["noise_dims"]), seed=rep_seed)
        data = generate(scn, int(cfg["n"]))
        btuning = _bridge_tuning(cfg["bridge"])
        ptuning = _policy_tuning(cfg["policy"])
        needs_bridges = bool(cfg["learners"]) or cfg["coverage"]["enabled"]
        bridges = fit_bridges(data.table, btuning, seed=rep_seed) if needs_bridges else None
        for name in cfg["learners"]:
            policy, report = _fit_one(name, data.table, bridges, ptuning, btuning, rep_seed)
            out["policies"][name] = policy_to_dict(policy)
            out["selected"][name] = _report_to_record(report)
        if cfg["coverage"]["enabled"]:
            d3 = d3_decider(data.table.L)
            est = _dr_at_decisions(data.table, bridges, d3)
            out["coverage"] = est
    except (ProxitrError, np.linalg.LinAlgError, FloatingPointError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    out["wall_clock_s"] = round(time.perf_counter() - t0, 6)
    return out


def _dr_at_decisions(table: SampleTable, bridges, decisions) -> dict:
    from .evaluate import Z_975
    from .policy import dr_weights
    c_plus, c_minus = dr_weights(table, bridges.h, bridges.q)
    c_d = np.where(decisions == 1, c_plus, c_minus)
    point = float(np.mean(c_d))
    se = float(np.std(c_d - point, ddof=1) / np.sqrt(table.n))
    return {"point": point, "se": se,
            "ci": [point - Z_975 * se, point + Z_975 * se]}


def cmd_benchmark(cfg: dict, out_dir: str) -> dict:
    t0 = time.perf_counter()
    if int(cfg["replicates"]) < 1:
        raise ConfigError("replicates must be >= 1")
    for name in cfg["learners"]:
        if name not in LEARNER_IDS:
            raise ConfigError(f"unknown learner {name!r}; choose from {LEARNER_IDS}")
    os.makedirs(out_dir, exist_ok=True)

    scn = scenario(cfg["scenario"], noise_dims=int(cfg["noise_dims"]), seed=int(cfg["seed"]))
    test = noise_free_testset(scn, int(cfg["n_test"]))
    oracles = oracle_policies(scn)
    inv_p = 1.0 / np.where(test.table.A == 1, test.prop_plus, 1.0 - test.prop_plus)

    def oracle_value(decisions) -> float:
        return float(np.mean(test.mu * (decisions == test.table.A) * inv_p))

    refs = {
        "d_star": oracle_value(oracles.d_star(test.table.L, test.U)),
        "d1_star": oracle_value(oracles.d1_star(test.table.L, test.table.Z)),
        "d3_star": oracle_value(oracles.d3_star(test.table.L)),
    }

    seeds = _replicate_seeds(int(cfg["seed"]), int(cfg["replicates"]))
    tasks = [(cfg, r, seeds[r], oracles.d3_star) for r in range(int(cfg["replicates"]))]
    workers = max(1, int(cfg["workers"]))
    if workers > 1:
        with get_context("fork").Pool(processes=workers) as pool:
            raw = pool.map(_run_replicate, tasks)
    else:
        raw = [_run_replicate(t) for t in tasks]

    rows, values, coverage_rows = [], {name: [] for name in cfg["learners"]}, []
    failures = 0
    for res in raw:
        if res["error"] is not None:
            failures += 1
            rows.append({"replicate": res["replicate"], "seed": res["seed"],
                         "learner": None, "value": None, "error": res["error"]})
            log.warning("replicate %d failed: %s", res["replicate"], res["error"])
            continue
        for name, pol_dict in res["policies"].items():
            policy = policy_from_dict(pol_dict)
            val = oracle_value(policy.decide(test.table.L, Z=test.table.Z, W=test.table.W))
            values[name].append(val)
            rows.append({"replicate": res["replicate"], "seed": res["seed"],
                         "learner": name, "value": val, "error": None,
                         "selected": res["selected"][name],
                         "wall_clock_s": res["wall_clock_s"]})
        if res["coverage"] is not None:
            cov = dict(res["coverage"])
            cov.update({"replicate": res["replicate"], "seed": res["seed"]})
            coverage_rows.append(cov)

    with open(os.path.join(out_dir, "results.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    summary = {"command": "benchmark", "config": cfg,
               "config_hash": _config_hash("benchmark", cfg),
               "run_id": _config_hash("benchmark", cfg),
               "oracle_references": refs, "replicates_failed": failures,
               "learners": {}}
    for name, vals in values.items():
        if vals:
            arr = np.asarray(vals)
            q25, q75 = np.percentile(arr, [25, 75])
            summary["learners"][name] = {
                "n": len(vals), "median": float(np.median(arr)),
                "q25": float(q25), "q75": float(q75), "iqr": float(q75 - q25),
                "mean": float(arr.mean()), "min": float(arr.min()), "max": float(arr.max()),
            }
    if coverage_rows:
        truth = refs["d3_star"]
        covered = [r["ci"][0] <= truth <= r["ci"][1] for r in coverage_rows]
        lengths = [r["ci"][1] - r["ci"][0] for r in coverage_rows]
        errors = [r["point"] - truth for r in coverage_rows]
        summary["coverage"] = {
            "policy": "d3_star", "truth": truth, "n": len(coverage_rows),
            "coverage": float(np.mean(covered)),
            "mean_ci_length": float(np.mean(lengths)),
            "rmse": float(np.sqrt(np.mean(np.square(errors)))),
        }
        with open(os.path.join(out_dir, "coverage.jsonl"), "w", encoding="utf-8") as fh:
            for row in coverage_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    summary["wall_clock_s"] = round(time.perf_counter() - t0, 6)
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    if failures:
        raise NumericOverflowError(f"{failures} replicate(s) failed; see results.jsonl")
    return summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxitr",
        description="Simulate, fit, and evaluate treatment rules under proxy-based "
                    "identification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, flags=("seed",)):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--emit-defaults", action="store_true",
                       help="print the default config for this command and exit")
        if "seed" in flags:
            p.add_argument("--seed", type=int, default=None)

    p_sim = sub.add_parser("simulate", help="write a synthetic dataset as CSV")
    common(p_sim)
    p_sim.add_argument("--scenario", default=None)
    p_sim.add_argument("--n", type=int, default=None)

    p_fit = sub.add_parser("fit", help="fit bridges and a policy learner")
    common(p_fit)
    p_fit.add_argument("--data", default=None, help="training data CSV")
    p_fit.add_argument("--learner", default=None, choices=LEARNER_IDS)

    p_eval = sub.add_parser("evaluate", help="evaluate a fitted model on a dataset")
    common(p_eval)
    p_eval.add_argument("--model", default=None, help="model JSON from fit")
    p_eval.add_argument("--data", default=None, help="evaluation data CSV")
    p_eval.add_argument("--truth", default=None, help="optional ground-truth CSV")

    p_bench = sub.add_parser("benchmark", help="replicated simulate/fit/evaluate study")
    common(p_bench)
    p_bench.add_argument("--scenario", default=None)
    p_bench.add_argument("--n", type=int, default=None)
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.add_argument("--learner", default=None, choices=LEARNER_IDS,
                         help="restrict to a single learner")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PROXITR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.emit_defaults:
            print(json.dumps(default_config(args.command), indent=2, sort_keys=True))
            return EXIT_OK
        overrides = {}
        for key in ("scenario", "n", "seed", "workers"):
            if hasattr(args, key):
                overrides[key] = getattr(args, key)
        if getattr(args, "learner", None) is not None:
            if args.command == "benchmark":
                overrides["learners"] = [args.learner]
            else:
                overrides["learner"] = args.learner
        cfg = load_config(args.command, args.config, overrides)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "fit":
            if args.data is None:
                raise ConfigError("fit requires --data")
            cmd_fit(cfg, args.data, args.out)
        elif args.command == "evaluate":
            if args.model is None or args.data is None:
                raise ConfigError("evaluate requires --model and --data")
            cmd_evaluate(cfg, args.model, args.data, args.out, truth_path=args.truth)
        elif args.command == "benchmark":
            cmd_benchmark(cfg, args.out)
        return EXIT_OK
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericOverflowError, DegenerateDataError, np.linalg.LinAlgError) as exc:
        log.error("numeric failure: %s", exc)
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
