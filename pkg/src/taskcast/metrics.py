"""Evaluation: forecast accuracy, realized dispatch cost, hourly statistics.

``realized_cost`` is by definition the same arithmetic as the task loss with
generation cost included; it is exposed in dollars and decomposed by
component.  Percentages are reported against a documented base value
(conventionally the task-trained model's mean cost over the evaluation set).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import net as net_mod
from . import sed as sed_mod
from . import taskgrad
from .data import DatasetStats, TrainingExample, denormalize
from .grid import SystemConfig
from .solver import QpError, SqpSettings, solve_sed
from .taskgrad import TaskLossValue
from .train import ModelBundle, TrainingLog


def mape(pred: np.ndarray, actual: np.ndarray) -> float:
    """Mean absolute percentage error, in percent."""
    pred = np.asarray(pred, dtype=float).reshape(-1)
    actual = np.asarray(actual, dtype=float).reshape(-1)
    if pred.shape != actual.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {actual.shape}")
    if np.any(actual <= 0):
        raise ValueError("actual values must be positive for MAPE")
    return float(100.0 * np.mean(np.abs(pred - actual) / actual))


def realized_cost(
    p_star: np.ndarray,
    y_actual: np.ndarray,
    system: SystemConfig,
    include_cost: bool = True,
) -> TaskLossValue:
    """Dollar-valued realized dispatch cost, decomposed by component."""
    return taskgrad.task_loss(p_star, y_actual, system, include_cost)


def hourly_stats(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and std per hour of day across days (rows)."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError("need a (days, hours) matrix with at least 2 days")
    return values.mean(axis=0), values.std(axis=0)


def tradeoff_points(log: TrainingLog) -> list[tuple[float, float]]:
    """(task loss, prediction loss) pairs in epoch order."""
    if not log.records:
        raise ValueError("empty training log")
    return [(r.task_loss_train, r.pred_loss_train) for r in log.records]


@dataclass
class ModelEvaluation:
    """Per-day evaluation artifacts for one model over a set of examples."""

    days: list
    mape_percent: float
    cost_per_day: np.ndarray                    # ($) total per day
    cost_components: dict[str, np.ndarray]      # per-day sums by component
    hourly_cost: np.ndarray                     # (days, 24) realized cost per hour
    hourly_task_loss: np.ndarray                # (days, 24) cost excluding generation
    forecasts_mw: np.ndarray                    # (days, 24)
    actuals_mw: np.ndarray                      # (days, 24)
    skipped_days: int = 0


def evaluate_model(
    bundle: ModelBundle,
    examples: list[TrainingExample],
    system: SystemConfig,
    settings: SqpSettings = SqpSettings(),
) -> ModelEvaluation:
    """Forecast, dispatch, and score every example day against actual loads."""
    days = []
    forecasts = []
    actuals = []
    per_hour_cost = []
    per_hour_task = []
    per_day_components: dict[str, list] = {
        "shortage": [],
        "excess": [],
        "flow_over": [],
        "flow_under": [],
        "regularizer": [],
        "generation_cost": [],
    }
    skipped = 0
    for ex in examples:
        y_hat, _ = net_mod.forward(bundle.params, ex.x, mode="eval")
        dist = taskgrad.forecast_to_distribution(y_hat, bundle.sigma2, bundle.stats)
        prob = sed_mod.make_problem(system, dist)
        try:
            result = solve_sed(prob, settings=settings)
        except QpError:
            skipped += 1
            continue
        y_actual = denormalize(ex.y_train, bundle.stats.load)
        value = realized_cost(result.p_star, y_actual, system, include_cost=True)
        hourly_total = (
            value.shortage
            + value.excess
            + value.flow_over
            + value.flow_under
            + value.regularizer
            + value.generation_cost
        )
        hourly_task = hourly_total - value.generation_cost
        days.append(ex.target_day)
        forecasts.append(denormalize(y_hat, bundle.stats.load))
        actuals.append(y_actual)
        per_hour_cost.append(hourly_total)
        per_hour_task.append(hourly_task)
        for name in per_day_components:
            per_day_components[name].append(float(getattr(value, name).sum()))

    if not days:
        raise ValueError("no evaluable days (all dispatch solves failed)")
    forecasts = np.array(forecasts)
    actuals = np.array(actuals)
    hourly_cost = np.array(per_hour_cost)
    return ModelEvaluation(
        days=days,
        mape_percent=mape(forecasts, actuals),
        cost_per_day=hourly_cost.sum(axis=1),
        cost_components={k: np.array(v) for k, v in per_day_components.items()},
        hourly_cost=hourly_cost,
        hourly_task_loss=np.array(per_hour_task),
        forecasts_mw=forecasts,
        actuals_mw=actuals,
        skipped_days=skipped,
    )


@dataclass
class EvalReport:
    mape_percent: float
    realized_cost_total: float
    realized_cost_percent: float
    percent_base: float
    percent_base_note: str
    hourly_cost_mean: np.ndarray
    hourly_cost_std: np.ndarray
    hourly_task_loss_mean: np.ndarray
    hourly_task_loss_std: np.ndarray
    cost_components: dict[str, float] = field(default_factory=dict)
    skipped_days: int = 0

    def to_dict(self) -> dict:
        return {
            "mape_percent": self.mape_percent,
            "realized_cost_total": self.realized_cost_total,
            "realized_cost_percent": self.realized_cost_percent,
            "percent_base": self.percent_base,
            "percent_base_note": self.percent_base_note,
            "hourly_cost_mean": self.hourly_cost_mean.tolist(),
            "hourly_cost_std": self.hourly_cost_std.tolist(),
            "hourly_task_loss_mean": self.hourly_task_loss_mean.tolist(),
            "hourly_task_loss_std": self.hourly_task_loss_std.tolist(),
            "cost_components": self.cost_components,
            "skipped_days": self.skipped_days,
        }


def build_report(evaluation: ModelEvaluation, percent_base: float, note: str) -> EvalReport:
    cost_mean, cost_std = hourly_stats(evaluation.hourly_cost)
    task_mean, task_std = hourly_stats(evaluation.hourly_task_loss)
    mean_cost = float(evaluation.cost_per_day.mean())
    return EvalReport(
        mape_percent=evaluation.mape_percent,
        realized_cost_total=float(evaluation.cost_per_day.sum()),
        realized_cost_percent=100.0 * mean_cost / percent_base,
        percent_base=percent_base,
        percent_base_note=note,
        hourly_cost_mean=cost_mean,
        hourly_cost_std=cost_std,
        hourly_task_loss_mean=task_mean,
        hourly_task_loss_std=task_std,
        cost_components={
            k: float(v.sum()) for k, v in evaluation.cost_components.items()
        },
        skipped_days=evaluation.skipped_days,
    )


def write_hourly_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["hour"] + header) + "\n")
        for hour in range(len(columns[0])):
            row = [str(hour)] + [repr(float(c[hour])) for c in columns]
            fh.write(",".join(row) + "\n")


def write_tradeoff_csv(path, log: TrainingLog) -> None:
    points = tradeoff_points(log)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,task_loss,pred_loss\n")
        for rec, (task, pred) in zip(log.records, points):
            fh.write(f"{rec.epoch},{task!r},{pred!r}\n")


def write_forecast_csv(path, eval_a: ModelEvaluation, eval_b: ModelEvaluation) -> None:
    """Per-hour actual vs both models' forecasts; columns day, hour, actual,
    lfednet (task-trained model), lfnet (prediction-only baseline)."""
    days_b = {d: i for i, d in enumerate(eval_b.days)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("day,hour,actual,lfednet,lfnet\n")
        for i, day in enumerate(eval_a.days):
            if day not in days_b:
                continue
            j = days_b[day]
            for hour in range(24):
                fh.write(
                    f"{day.isoformat()},{hour},{eval_a.actuals_mw[i, hour]!r},"
                    f"{eval_a.forecasts_mw[i, hour]!r},{eval_b.forecasts_mw[j, hour]!r}\n"
                )
