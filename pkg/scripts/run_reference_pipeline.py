"""End-to-end reference study: synthesize data, pretrain, task-train, compare.

Writes all artifacts under an output directory and prints the headline
numbers (MAPE and mean realized dispatch cost for both training regimes).

Usage: python scripts/run_reference_pipeline.py [--seed 1] [--years 5] [--out out/]
"""

import argparse
import json
import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from taskcast import net
from taskcast.data import prepare_dataset, synth_generate
from taskcast.metrics import evaluate_model
from taskcast.reference import desk_training_config, reference_system
from taskcast.train import (
    ModelBundle,
    pretrain,
    refresh_sigma2,
    save_model,
    task_train,
)


def run_study(seed: int, years: int, out_dir: pathlib.Path, config=None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    system = reference_system()
    config = config or desk_training_config(seed=seed)

    t0 = time.perf_counter()
    records = synth_generate(seed, years)
    dataset = prepare_dataset(records, seed=config.seed)
    print(f"[{seed}] dataset: {len(dataset.examples)} days "
          f"({len(dataset.splits.train)}/{len(dataset.splits.validation)}/"
          f"{len(dataset.splits.test)} train/val/test)")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    params0 = net.init_params(rng, dataset.examples[0].x.size)
    params_pre, pre_log = pretrain(params0, dataset.splits, config)
    sigma2_pre = refresh_sigma2(params_pre, dataset.splits.train)
    bundle_pre = ModelBundle(params=params_pre, sigma2=sigma2_pre, stats=dataset.stats)
    save_model(bundle_pre, out_dir / f"model_pre_{seed}.json")
    t1 = time.perf_counter()
    print(f"[{seed}] pretraining done in {t1 - t0:.1f}s, "
          f"final pred loss {pre_log.records[-1].pred_loss_train:.5f}")

    params_task, sigma2_task, task_log = task_train(
        params_pre, dataset.splits, system, dataset.stats, config
    )
    bundle_task = ModelBundle(params=params_task, sigma2=sigma2_task, stats=dataset.stats)
    save_model(bundle_task, out_dir / f"model_task_{seed}.json")
    task_log.write_csv(out_dir / f"task_log_{seed}.csv")
    t2 = time.perf_counter()
    print(f"[{seed}] task training done in {t2 - t1:.1f}s")

    eval_task = evaluate_model(bundle_task, dataset.splits.test, system)
    eval_pre = evaluate_model(bundle_pre, dataset.splits.test, system)
    t3 = time.perf_counter()

    base = float(eval_task.cost_per_day.mean())
    result = {
        "seed": seed,
        "mape_task": eval_task.mape_percent,
        "mape_pre": eval_pre.mape_percent,
        "cost_task": base,
        "cost_pre": float(eval_pre.cost_per_day.mean()),
        "cost_percent_pre": 100.0 * float(eval_pre.cost_per_day.mean()) / base,
        "val_start": task_log.records[0].task_loss_val if task_log.records else None,
        "val_best": min(r.task_loss_val for r in task_log.records) if task_log.records else None,
        "wall_s": t3 - t0,
    }
    print(f"[{seed}] MAPE task {result['mape_task']:.3f}% vs pre {result['mape_pre']:.3f}% | "
          f"cost task 100.00% vs pre {result['cost_percent_pre']:.3f}% | {t3 - t0:.0f}s")
    return result


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--years", type=int, default=5)
    ap.add_argument("--out", default="out/reference")
    ap.add_argument("--repeats", type=int, default=1)
    args = ap.parse_args()

    results = []
    for k in range(args.repeats):
        results.append(run_study(args.seed + k, args.years, pathlib.Path(args.out)))
    with open(pathlib.Path(args.out) / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2)
    if len(results) > 1:
        gap = np.mean([r["cost_percent_pre"] - 100.0 for r in results])
        print(f"mean prediction-only cost premium: {gap:.3f}%")


if __name__ == "__main__":
    main()
