"""Batch command-line surface for the forecasting/dispatch pipeline.

Subcommands: ``gen-data``, ``pretrain``, ``train``, ``dispatch``,
``evaluate``, ``compare``.  Every command writes a run manifest next to its
primary output listing inputs, outputs, seeds, and wall time.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from datetime import date

import numpy as np

from . import __version__
from . import metrics as metrics_mod
from . import net as net_mod
from . import sed as sed_mod
from . import taskgrad
from .data import (
    DataError,
    Dataset,
    build_features,
    denormalize,
    group_days,
    load_csv,
    prepare_dataset_with_stats,
    split,
    synth_generate,
    write_csv,
)
from .grid import SystemValidationError, system_from_json
from .solver import QpError, solve_sed
from .taskgrad import SensitivityError
from .train import (
    ModelBundle,
    TooManySkips,
    TrainingConfig,
    TrainingDiverged,
    load_model,
    pretrain,
    refresh_sigma2,
    save_model,
    task_train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse failures to exit code 1
        raise _UsageError(message)


def _write_manifest(path, command, argv, config_paths, seeds, inputs, outputs, wall_ms):
    doc = {
        "command": command,
        "argv": list(argv),
        "config_paths": config_paths,
        "seeds": seeds,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "wall_ms": wall_ms,
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    os.replace(tmp, str(path))


def _training_config(path) -> TrainingConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    known = {f.name for f in dataclasses.fields(TrainingConfig)}
    unknown = set(doc) - known
    if unknown:
        raise DataError(f"{path}: unknown training-config keys {sorted(unknown)}")
    return TrainingConfig(**doc)


def _load_dataset(data_path, seed, stats=None) -> Dataset:
    records = load_csv(data_path)
    return prepare_dataset_with_stats(records, seed, stats)


def _cmd_gen_data(args, argv) -> list:
    records = synth_generate(args.seed, args.years)
    write_csv(records, args.out)
    return [args.out]


def _cmd_pretrain(args, argv) -> list:
    config = _training_config(args.train_config)
    system = system_from_json(args.system)
    dataset = _load_dataset(args.data, config.seed)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = net_mod.init_params(rng, dataset.examples[0].x.size)
    params, log = pretrain(params, dataset.splits, config)
    sigma2 = refresh_sigma2(params, dataset.splits.train)
    save_model(ModelBundle(params=params, sigma2=sigma2, stats=dataset.stats), args.out_model)
    log_path = str(args.out_model) + ".log.csv"
    log.write_csv(log_path)
    del system  # validated for early error reporting; pretraining is data-only
    return [args.out_model, log_path]


def _cmd_train(args, argv) -> list:
    config = _training_config(args.train_config)
    system = system_from_json(args.system)
    bundle = load_model(args.in_model)
    dataset = _load_dataset(args.data, config.seed, stats=bundle.stats)
    params, sigma2, log = task_train(
        bundle.params, dataset.splits, system, bundle.stats, config
    )
    save_model(ModelBundle(params=params, sigma2=sigma2, stats=bundle.stats), args.out_model)
    log_path = str(args.out_model) + ".log.csv"
    log.write_csv(log_path)
    tradeoff_path = str(args.out_model) + ".tradeoff.csv"
    metrics_mod.write_tradeoff_csv(tradeoff_path, log)
    return [args.out_model, log_path, tradeoff_path]


def _cmd_dispatch(args, argv) -> list:
    system = system_from_json(args.system)
    bundle = load_model(args.model)
    target = date.fromisoformat(args.date)
    days = group_days(load_csv(args.data))
    idx = next((i for i, d in enumerate(days) if d.day == target), None)
    if idx is None:
        raise DataError(f"target date {target.isoformat()} not present in {args.data}")
    example = build_features(days, idx, bundle.stats)
    y_hat, _ = net_mod.forward(bundle.params, example.x, mode="eval")
    dist = taskgrad.forecast_to_distribution(y_hat, bundle.sigma2, bundle.stats)
    prob = sed_mod.make_problem(system, dist)
    result = solve_sed(prob)
    if not result.converged:
        raise QpError("max_iterations", "dispatch solve did not converge")

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("hour,gen_id,mw\n")
        for t in range(system.horizon):
            for g, gen in enumerate(system.generators):
                fh.write(f"{t},{gen.id},{result.p_star[t, g]!r}\n")
    forecast_path = str(args.out) + ".forecast.csv"
    with open(forecast_path, "w", encoding="utf-8") as fh:
        fh.write("hour,mu_mw,sigma2\n")
        for t in range(system.horizon):
            fh.write(f"{t},{dist.mu[t]!r},{dist.sigma2[t]!r}\n")
    return [args.out, forecast_path]


def _cmd_evaluate(args, argv) -> list:
    system = system_from_json(args.system)
    bundle = load_model(args.model)
    dataset = _load_dataset(args.data, seed=0, stats=bundle.stats)
    evaluation = metrics_mod.evaluate_model(bundle, dataset.splits.test, system)
    base = float(evaluation.cost_per_day.mean())
    report = metrics_mod.build_report(
        evaluation, percent_base=base, note="base = this model's mean daily cost"
    )
    with open(args.out_report, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    root = os.path.splitext(str(args.out_report))[0]
    cost_csv = root + ".hourly_cost.csv"
    task_csv = root + ".hourly_taskloss.csv"
    metrics_mod.write_hourly_csv(
        cost_csv, ["cost_mean", "cost_std"], [report.hourly_cost_mean, report.hourly_cost_std]
    )
    metrics_mod.write_hourly_csv(
        task_csv,
        ["taskloss_mean", "taskloss_std"],
        [report.hourly_task_loss_mean, report.hourly_task_loss_std],
    )
    return [args.out_report, cost_csv, task_csv]


def _cmd_compare(args, argv) -> list:
    system = system_from_json(args.system)
    bundle_a = load_model(args.model_a)
    bundle_b = load_model(args.model_b)
    dataset = _load_dataset(args.data, seed=0, stats=bundle_a.stats)
    eval_a = metrics_mod.evaluate_model(bundle_a, dataset.splits.test, system)
    eval_b = metrics_mod.evaluate_model(bundle_b, dataset.splits.test, system)

    common = sorted(set(eval_a.days) & set(eval_b.days))
    idx_a = {d: i for i, d in enumerate(eval_a.days)}
    idx_b = {d: i for i, d in enumerate(eval_b.days)}
    order_a = np.array([idx_a[d] for d in common])
    order_b = np.array([idx_b[d] for d in common])
    base = float(eval_a.cost_per_day[order_a].mean())

    rng = np.random.Generator(np.random.PCG64(args.seed))
    rows = []
    n = len(common)
    for repeat in range(1, args.repeats + 1):
        pick = rng.integers(0, n, size=n)
        sel_a, sel_b = order_a[pick], order_b[pick]
        rows.append(
            {
                "repeat": repeat,
                "mape_a": metrics_mod.mape(
                    eval_a.forecasts_mw[sel_a], eval_a.actuals_mw[sel_a]
                ),
                "mape_b": metrics_mod.mape(
                    eval_b.forecasts_mw[sel_b], eval_b.actuals_mw[sel_b]
                ),
                "cost_percent_a": 100.0 * float(eval_a.cost_per_day[sel_a].mean()) / base,
                "cost_percent_b": 100.0 * float(eval_b.cost_per_day[sel_b].mean()) / base,
            }
        )
    report = {
        "percent_base": base,
        "percent_base_note": "base = model_a mean daily cost over the common test days",
        "n_test_days": n,
        "model_a": {
            "path": str(args.model_a),
            "mape_percent": metrics_mod.mape(
                eval_a.forecasts_mw[order_a], eval_a.actuals_mw[order_a]
            ),
            "cost_percent": 100.0,
        },
        "model_b": {
            "path": str(args.model_b),
            "mape_percent": metrics_mod.mape(
                eval_b.forecasts_mw[order_b], eval_b.actuals_mw[order_b]
            ),
            "cost_percent": 100.0 * float(eval_b.cost_per_day[order_b].mean()) / base,
        },
        "repeats": rows,
        "mean_cost_percent_a": float(np.mean([r["cost_percent_a"] for r in rows])),
        "mean_cost_percent_b": float(np.mean([r["cost_percent_b"] for r in rows])),
        "mean_mape_a": float(np.mean([r["mape_a"] for r in rows])),
        "mean_mape_b": float(np.mean([r["mape_b"] for r in rows])),
    }
    with open(args.out_report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)

    root = os.path.splitext(str(args.out_report))[0]
    forecast_csv = root + ".forecast_vs_actual.csv"
    metrics_mod.write_forecast_csv(forecast_csv, eval_a, eval_b)
    cost_csv = root + ".hourly_cost.csv"
    mean_a, std_a = metrics_mod.hourly_stats(eval_a.hourly_cost[order_a])
    mean_b, std_b = metrics_mod.hourly_stats(eval_b.hourly_cost[order_b])
    metrics_mod.write_hourly_csv(
        cost_csv,
        ["lfednet_mean", "lfednet_std", "lfnet_mean", "lfnet_std"],
        [mean_a, std_a, mean_b, std_b],
    )
    task_csv = root + ".hourly_taskloss.csv"
    tmean_a, tstd_a = metrics_mod.hourly_stats(eval_a.hourly_task_loss[order_a])
    tmean_b, tstd_b = metrics_mod.hourly_stats(eval_b.hourly_task_loss[order_b])
    metrics_mod.write_hourly_csv(
        task_csv,
        ["lfednet_mean", "lfednet_std", "lfnet_mean", "lfnet_std"],
        [tmean_a, tstd_a, tmean_b, tstd_b],
    )
    return [args.out_report, forecast_csv, cost_csv, task_csv]


def _build_parser() -> _Parser:
    parser = _Parser(prog="taskcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic hourly dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--years", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="fit the forecaster to prediction loss")
    p.add_argument("--data", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--train-config", required=True)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train", help="task-train a pretrained forecaster")
    p.add_argument("--data", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--train-config", required=True)
    p.add_argument("--in-model", required=True)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("dispatch", help="forecast one day and solve the dispatch")
    p.add_argument("--data", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--date", required=True, help="target day, ISO format")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dispatch)

    p = sub.add_parser("evaluate", help="score a model on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-report", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="repeated-resampling comparison of two models")
    p.add_argument("--data", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-report", required=True)
    p.set_defaults(func=_cmd_compare)

    return parser


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    t0 = time.perf_counter()
    try:
        outputs = args.func(args, argv)
    except (DataError, SystemValidationError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (QpError, SensitivityError, TrainingDiverged, TooManySkips, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    wall_ms = (time.perf_counter() - t0) * 1e3
    primary = outputs[0]
    manifest_path = str(primary) + ".manifest.json"
    config_paths = {
        key: str(getattr(args, key))
        for key in ("system", "train_config")
        if hasattr(args, key)
    }
    seeds = {key: getattr(args, key) for key in ("seed",) if hasattr(args, key)}
    inputs = [
        str(getattr(args, key))
        for key in ("data", "model", "in_model", "model_a", "model_b")
        if hasattr(args, key)
    ]
    _write_manifest(
        manifest_path, args.command, argv, config_paths, seeds, inputs, outputs, wall_ms
    )
    return EXIT_OK


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
