"""Training loops: mean-squared pretraining and dispatch-cost task training.

Pretraining fits the forecaster to the data alone.  Task training then
lowers the realized dispatch cost: every minibatch runs the forecaster,
solves one dispatch per sample, scores the schedules at the actual loads,
and backpropagates through the optimizer via KKT sensitivities.  The
returned parameters are the validation-best checkpoint.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import net as net_mod
from . import sed as sed_mod
from . import taskgrad
from .data import DataSplits, DatasetStats, NormStats, TrainingExample, denormalize
from .grid import SystemConfig
from .net import NetworkParams
from .solver import QpError, SqpSettings, solve_sed
from .taskgrad import SensitivityError


class TrainingDiverged(RuntimeError):
    pass


class TooManySkips(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    n_train: int = 900                 # task-training epochs
    pretrain_epochs: int = 1000
    pretrain_batch: int = 32
    task_batch: int = 8
    pretrain_lr: float = 1e-3
    task_lr: float = 1e-4
    optimizer: str = "adam"            # "adam" or "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    include_cost: bool = True
    sigma_refresh_every: int = 1       # epochs between variance refreshes
    divergence_threshold: float = 1e6
    max_skip_fraction: float = 0.2
    task_samples_per_epoch: int | None = None   # None = full training split
    val_samples: int | None = None               # None = full validation split

    def __post_init__(self):
        if self.n_train < 0:
            raise ValueError("n_train must be >= 0")
        if self.pretrain_lr <= 0 or self.task_lr <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class EpochRecord:
    epoch: int
    pred_loss_train: float
    task_loss_train: float
    task_loss_val: float
    wall_ms: float
    skipped: int


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        if not all(
            np.isfinite(v)
            for v in (rec.pred_loss_train, rec.task_loss_train, rec.task_loss_val)
            if not np.isnan(v)
        ):
            raise ValueError("non-finite loss in training log")
        self.records.append(rec)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,pred_loss_train,task_loss_train,task_loss_val,wall_ms,skipped\n")
            for r in self.records:
                fh.write(
                    f"{r.epoch},{r.pred_loss_train!r},{r.task_loss_train!r},"
                    f"{r.task_loss_val!r},{r.wall_ms!r},{r.skipped}\n"
                )


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class OptimizerState:
    method: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def make_optimizer(config: TrainingConfig, lr: float) -> OptimizerState:
    return OptimizerState(
        method=config.optimizer,
        lr=lr,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )


def optimizer_step(
    state: OptimizerState, grads: dict[str, np.ndarray], params: NetworkParams
) -> bool:
    """Apply one update in place.  Returns False (step skipped) if any
    gradient entry is non-finite."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            return False
    if state.method == "sgd":
        for name, g in grads.items():
            params.arrays[name] -= state.lr * g
        return True
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        params.arrays[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return True


# ---------------------------------------------------------------------------
# Pretraining (prediction-loss regime)


def _batch_arrays(examples: list[TrainingExample]):
    x = np.stack([ex.x for ex in examples])
    y = np.stack([ex.y_train for ex in examples])
    return x, y


def pretrain(
    params: NetworkParams, splits: DataSplits, config: TrainingConfig
) -> tuple[NetworkParams, TrainingLog]:
    """Minibatch optimization of the mean-squared prediction loss."""
    params = params.copy()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    opt = make_optimizer(config, config.pretrain_lr)
    log = TrainingLog()
    x_all, y_all = _batch_arrays(splits.train)
    n = x_all.shape[0]
    batch = max(2, min(config.pretrain_batch, n))
    for epoch in range(1, config.pretrain_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n - 1, batch):
            idx = order[start : start + batch]
            if idx.size < 2:
                continue
            y_hat, cache = net_mod.forward(params, x_all[idx], mode="train")
            loss = net_mod.prediction_loss(y_hat, y_all[idx])
            if loss > config.divergence_threshold:
                raise TrainingDiverged(
                    f"prediction loss {loss:.3e} above {config.divergence_threshold:.1e} "
                    f"at epoch {epoch}"
                )
            upstream = net_mod.prediction_loss_grad(y_hat, y_all[idx])
            grads = net_mod.backward(params, cache, upstream)
            optimizer_step(opt, grads, params)
            epoch_loss += loss
            n_batches += 1
        log.append(
            EpochRecord(
                epoch=epoch,
                pred_loss_train=epoch_loss / max(n_batches, 1),
                task_loss_train=float("nan"),
                task_loss_val=float("nan"),
                wall_ms=(time.perf_counter() - t0) * 1e3,
                skipped=0,
            )
        )
    return params, log


def prediction_residuals(
    params: NetworkParams, examples: list[TrainingExample]
) -> np.ndarray:
    """(n, 24) eval-mode forecast errors, normalized units."""
    x, y = _batch_arrays(examples)
    y_hat, _ = net_mod.forward(params, x, mode="eval")
    return y - y_hat


def refresh_sigma2(params: NetworkParams, examples: list[TrainingExample]) -> np.ndarray:
    return net_mod.estimate_variance(prediction_residuals(params, examples))


# ---------------------------------------------------------------------------
# Task training (dispatch-cost regime)


def _mean_task_loss(
    params: NetworkParams,
    examples: list[TrainingExample],
    sigma2: np.ndarray,
    system: SystemConfig,
    stats: DatasetStats,
    config: TrainingConfig,
    settings: SqpSettings,
    warm: dict | None = None,
) -> float:
    """Eval-mode mean task loss over a set of examples (used for validation)."""
    total = 0.0
    count = 0
    for ex in examples:
        y_hat, _ = net_mod.forward(params, ex.x, mode="eval")
        dist = taskgrad.forecast_to_distribution(y_hat, sigma2, stats)
        prob = sed_mod.make_problem(system, dist)
        key = ex.target_day
        try:
            result = solve_sed(
                prob, p_init=None if warm is None else warm.get(key), settings=settings
            )
        except QpError:
            continue
        if warm is not None:
            warm[key] = result.p_star
        y_actual = denormalize(ex.y_train, stats.load)
        total += taskgrad.task_loss(
            result.p_star, y_actual, system, config.include_cost
        ).total
        count += 1
    return total / max(count, 1)


def task_train(
    params: NetworkParams,
    splits: DataSplits,
    system: SystemConfig,
    stats: DatasetStats,
    config: TrainingConfig,
    settings: SqpSettings = SqpSettings(),
) -> tuple[NetworkParams, np.ndarray, TrainingLog]:
    """Dispatch-cost training; returns the validation-best checkpoint.

    Per minibatch: one train-mode forward for the whole batch, one dispatch
    solve and KKT sensitivity per sample, one backward pass of the
    batch-mean loss.  Variances are refreshed from training residuals every
    ``sigma_refresh_every`` epochs and held constant within an update.
    Returns ``(theta, sigma2, log)``.
    """
    params = params.copy()
    rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    opt = make_optimizer(config, config.task_lr)
    log = TrainingLog()
    sigma2 = refresh_sigma2(params, splits.train)

    val_examples = splits.validation
    if config.val_samples is not None and config.val_samples < len(val_examples):
        val_rng = np.random.Generator(np.random.PCG64(config.seed + 2))
        pick = val_rng.choice(len(val_examples), size=config.val_samples, replace=False)
        val_examples = [val_examples[i] for i in sorted(pick)]

    best_params = params.copy()
    best_sigma2 = sigma2.copy()
    best_val = _mean_task_loss(
        params, val_examples, sigma2, system, stats, config, settings
    )
    start_val = best_val

    warm_train: dict = {}
    warm_val: dict = {}
    n = len(splits.train)
    batch = max(2, min(config.task_batch, n))

    for epoch in range(1, config.n_train + 1):
        t0 = time.perf_counter()
        if config.sigma_refresh_every > 0 and (epoch - 1) % config.sigma_refresh_every == 0:
            sigma2 = refresh_sigma2(params, splits.train)
        order = rng.permutation(n)
        if config.task_samples_per_epoch is not None:
            order = order[: max(batch, config.task_samples_per_epoch)]
        skipped = 0
        seen = 0
        loss_sum = 0.0
        loss_count = 0
        for start in range(0, len(order) - 1, batch):
            idx = order[start : start + batch]
            if idx.size < 2:
                continue
            batch_ex = [splits.train[i] for i in idx]
            x_batch, _ = _batch_arrays(batch_ex)
            y_hat_batch, cache = net_mod.forward(params, x_batch, mode="train")
            upstream = np.zeros_like(y_hat_batch)
            used = 0
            for j, ex in enumerate(batch_ex):
                seen += 1
                dist = taskgrad.forecast_to_distribution(y_hat_batch[j], sigma2, stats)
                prob = sed_mod.make_problem(system, dist)
                try:
                    result = solve_sed(
                        prob, p_init=warm_train.get(ex.target_day), settings=settings
                    )
                    if not result.converged:
                        raise QpError("max_iterations", "outer loop did not converge")
                    warm_train[ex.target_day] = result.p_star
                    y_actual = denormalize(ex.y_train, stats.load)
                    up_j, loss_j = taskgrad.upstream_for_sample(
                        result, prob, y_actual, stats, config.include_cost
                    )
                except (QpError, SensitivityError):
                    skipped += 1
                    continue
                upstream[j] = up_j
                loss_sum += loss_j
                loss_count += 1
                used += 1
            if used == 0:
                continue
            grads = net_mod.backward(params, cache, upstream / used)
            optimizer_step(opt, grads, params)
        if seen and skipped / seen > config.max_skip_fraction:
            raise TooManySkips(
                f"{skipped}/{seen} dispatch solves failed in epoch {epoch}"
            )

        pred_loss = float(np.mean(prediction_residuals(params, splits.train) ** 2))
        val_loss = _mean_task_loss(
            params, val_examples, sigma2, system, stats, config, settings, warm_val
        )
        log.append(
            EpochRecord(
                epoch=epoch,
                pred_loss_train=pred_loss,
                task_loss_train=loss_sum / max(loss_count, 1),
                task_loss_val=val_loss,
                wall_ms=(time.perf_counter() - t0) * 1e3,
                skipped=skipped,
            )
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_sigma2 = sigma2.copy()

    # Keep the starting point if no epoch improved on it.
    del start_val
    return best_params, best_sigma2, log


# ---------------------------------------------------------------------------
# Model bundle serialization


MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to forecast and dispatch: parameters, per-hour
    variances, and the normalization statistics the features were built with."""

    params: NetworkParams
    sigma2: np.ndarray
    stats: DatasetStats


def save_model(bundle: ModelBundle, path) -> None:
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "params": json.loads(net_mod.params_to_json(bundle.params)),
        "sigma2": np.asarray(bundle.sigma2, dtype=float).tolist(),
        "norm": {
            "load_mean": bundle.stats.load.mean,
            "load_std": bundle.stats.load.std,
            "temp_actual_mean": bundle.stats.temp_actual.mean,
            "temp_actual_std": bundle.stats.temp_actual.std,
            "temp_forecast_mean": bundle.stats.temp_forecast.mean,
            "temp_forecast_std": bundle.stats.temp_forecast.std,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema: {doc.get('schema_version')!r}")
    norm = doc["norm"]
    stats = DatasetStats(
        load=NormStats(mean=norm["load_mean"], std=norm["load_std"]),
        temp_actual=NormStats(mean=norm["temp_actual_mean"], std=norm["temp_actual_std"]),
        temp_forecast=NormStats(
            mean=norm["temp_forecast_mean"], std=norm["temp_forecast_std"]
        ),
    )
    return ModelBundle(
        params=net_mod.params_from_json(json.dumps(doc["params"])),
        sigma2=np.asarray(doc["sigma2"], dtype=float),
        stats=stats,
    )
