"""Residual four-layer forecaster with batch normalization, hand-derived gradients.

Three hidden layers of width 250 (linear -> batch norm -> ReLU), a linear
output head to the 24 hourly loads, and a learned linear projection from the
input added to the output (the residual path).  Forward and backward passes
are plain numpy; batch statistics are used in ``train`` mode (updating the
running estimates as a side effect) and running statistics in ``eval`` mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .gaussmath import SIGMA2_FLOOR

HIDDEN_WIDTH = 250
OUTPUT_DIM = 24
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PARAMS_SCHEMA_VERSION = 1


@dataclass
class NetworkParams:
    """All learnable arrays plus batch-norm running statistics.

    ``arrays`` maps parameter names to float64 ndarrays.  Hidden layer k
    (1-based) owns ``wK, bK, bnK_scale, bnK_shift``; running statistics are
    ``bnK_mean, bnK_var`` (tracked, not trained).  The output head is
    ``w_out, b_out`` and the residual projection ``w_res``.
    """

    input_dim: int
    hidden_dim: int
    output_dim: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    RUNNING_STATS = ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var", "bn3_mean", "bn3_var")

    def trainable_names(self) -> list[str]:
        return [k for k in self.arrays if k not in self.RUNNING_STATS]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            input_dim=self.input_dim,
            hidden_dim=self.hidden_dim,
            output_dim=self.output_dim,
            arrays={k: v.copy() for k, v in self.arrays.items()},
        )


@dataclass(frozen=True)
class ForecastOutput:
    """Normalized hourly forecasts with per-hour empirical variances."""

    y_hat: np.ndarray
    sigma2: np.ndarray


def init_params(
    rng: np.random.Generator,
    input_dim: int,
    hidden_dim: int = HIDDEN_WIDTH,
    output_dim: int = OUTPUT_DIM,
) -> NetworkParams:
    """Fan-in scaled uniform initialization suited to ReLU stacks."""

    def uniform(fan_in: int, shape) -> np.ndarray:
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    dims = [input_dim, hidden_dim, hidden_dim, hidden_dim]
    arrays: dict[str, np.ndarray] = {}
    for k in range(1, 4):
        arrays[f"w{k}"] = uniform(dims[k - 1], (dims[k - 1], hidden_dim))
        arrays[f"b{k}"] = np.zeros(hidden_dim)
        arrays[f"bn{k}_scale"] = np.ones(hidden_dim)
        arrays[f"bn{k}_shift"] = np.zeros(hidden_dim)
        arrays[f"bn{k}_mean"] = np.zeros(hidden_dim)
        arrays[f"bn{k}_var"] = np.ones(hidden_dim)
    arrays["w_out"] = uniform(hidden_dim, (hidden_dim, output_dim))
    arrays["b_out"] = np.zeros(output_dim)
    arrays["w_res"] = uniform(input_dim, (input_dim, output_dim))
    return NetworkParams(input_dim, hidden_dim, output_dim, arrays)


def forward(params: NetworkParams, x: np.ndarray, mode: str = "eval"):
    """Run the network on a batch (or single vector) of features.

    Returns ``(y_hat, cache)``.  ``train`` mode normalizes with minibatch
    statistics (batch size >= 2 required) and updates the running estimates
    in place; ``eval`` mode is a pure function of (params, x).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ValueError(f"expected {params.input_dim} features, got {x.shape[1]}")
    if mode == "train" and x.shape[0] < 2:
        raise ValueError("train mode needs a batch of at least 2 samples")

    a = params.arrays
    cache: dict = {"mode": mode, "x": x, "single": single, "layers": []}
    h = x
    for k in range(1, 4):
        z = h @ a[f"w{k}"] + a[f"b{k}"]
        if mode == "train":
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            a[f"bn{k}_mean"] *= 1.0 - BN_MOMENTUM
            a[f"bn{k}_mean"] += BN_MOMENTUM * mean
            a[f"bn{k}_var"] *= 1.0 - BN_MOMENTUM
            a[f"bn{k}_var"] += BN_MOMENTUM * var
        else:
            mean = a[f"bn{k}_mean"]
            var = a[f"bn{k}_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        z_hat = (z - mean) * inv_std
        pre_act = z_hat * a[f"bn{k}_scale"] + a[f"bn{k}_shift"]
        h_next = np.maximum(pre_act, 0.0)
        cache["layers"].append(
            {"h_in": h, "z_hat": z_hat, "inv_std": inv_std, "pre_act": pre_act}
        )
        h = h_next
    y = h @ a["w_out"] + a["b_out"] + x @ a["w_res"]
    cache["h_last"] = h
    if single:
        return y[0], cache
    return y, cache


def backward(params: NetworkParams, cache: dict, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss given ``upstream = dL/dy_hat``.

    The cache must come from the matching :func:`forward` call.  Gradients
    are summed over the batch; divide the upstream by the batch size for a
    mean loss.  Batch-norm statistics are differentiated through in train
    mode and treated as constants in eval mode.
    """
    a = params.arrays
    upstream = np.asarray(upstream, dtype=float)
    if cache["single"]:
        upstream = upstream[None, :]
    x = cache["x"]
    n = x.shape[0]
    train = cache["mode"] == "train"

    grads: dict[str, np.ndarray] = {}
    grads["w_out"] = cache["h_last"].T @ upstream
    grads["b_out"] = upstream.sum(axis=0)
    grads["w_res"] = x.T @ upstream
    dh = upstream @ a["w_out"].T

    for k in range(3, 0, -1):
        layer = cache["layers"][k - 1]
        d_pre = dh * (layer["pre_act"] > 0.0)
        grads[f"bn{k}_scale"] = (d_pre * layer["z_hat"]).sum(axis=0)
        grads[f"bn{k}_shift"] = d_pre.sum(axis=0)
        d_zhat = d_pre * a[f"bn{k}_scale"]
        if train:
            z_hat = layer["z_hat"]
            dz = (
                layer["inv_std"]
                / n
                * (n * d_zhat - d_zhat.sum(axis=0) - z_hat * (d_zhat * z_hat).sum(axis=0))
            )
        else:
            dz = d_zhat * layer["inv_std"]
        grads[f"w{k}"] = layer["h_in"].T @ dz
        grads[f"b{k}"] = dz.sum(axis=0)
        dh = dz @ a[f"w{k}"].T

    return grads


def prediction_loss(y_hat: np.ndarray, y_train: np.ndarray) -> float:
    """Mean squared error over every element of the batch."""
    y_hat = np.asarray(y_hat, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if y_hat.shape != y_train.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y_train.shape}")
    if y_hat.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((y_train - y_hat) ** 2))


def prediction_loss_grad(y_hat: np.ndarray, y_train: np.ndarray) -> np.ndarray:
    """dL/dy_hat for :func:`prediction_loss` (summed-over-batch convention)."""
    y_hat = np.asarray(y_hat, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    return 2.0 * (y_hat - y_train) / y_hat.size


def estimate_variance(residuals: np.ndarray) -> np.ndarray:
    """Per-hour mean of squared forecast errors, clamped below the floor.

    ``residuals`` has one row per sample and one column per hour.  Uses the
    uncentered (population) form: the quantity that matters downstream is the
    expected squared deviation of the realized load from the forecast.
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim != 2 or residuals.shape[0] < 2:
        raise ValueError("need at least 2 residual samples per hour")
    return np.maximum(np.mean(residuals**2, axis=0), SIGMA2_FLOOR)


def params_to_json(params: NetworkParams) -> str:
    """Serialize parameters; floats round-trip bit-exactly through repr."""
    doc = {
        "schema_version": PARAMS_SCHEMA_VERSION,
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "output_dim": params.output_dim,
        "arrays": {k: v.tolist() for k, v in params.arrays.items()},
    }
    return json.dumps(doc)


def params_from_json(text: str) -> NetworkParams:
    doc = json.loads(text)
    if doc.get("schema_version") != PARAMS_SCHEMA_VERSION:
        raise ValueError(f"unsupported parameter schema: {doc.get('schema_version')!r}")
    arrays = {k: np.asarray(v, dtype=float) for k, v in doc["arrays"].items()}
    return NetworkParams(
        input_dim=int(doc["input_dim"]),
        hidden_dim=int(doc["hidden_dim"]),
        output_dim=int(doc["output_dim"]),
        arrays=arrays,
    )
