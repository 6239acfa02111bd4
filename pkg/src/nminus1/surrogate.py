"""Residual feed-forward surrogate mapping (bus inputs, topology) to current magnitudes.

Network: linear stem to the hidden width, ``depth`` residual blocks
``h + leaky_relu(h W + b)``, and a linear head. Training uses mini-batch Adam
with a step-decay learning-rate schedule. Pure numpy, float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .case_io import ScenarioRecord
from .grid import GridCase

CHECKPOINT_FORMAT = "nminus1-surrogate"
CHECKPOINT_VERSION = 1

# (residual blocks, hidden width)
VARIANTS = {"small": (2, 256), "medium": (4, 256)}


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureCodec:
    """Input/target layout and z-score statistics from the training split.

    Inputs: ``pg`` and ``vm`` of PV buses, ``pl`` and ``ql`` of PQ buses, then
    the in-service flags. Targets: ``br_i_or``, ``br_i_ex``, ``inj_current``.
    The in-service flags are passed through as 0/1 (mean 0, std 1 in the
    stored statistics): a rarely cut line would otherwise be blown up to tens
    of standard deviations.
    """

    pv: np.ndarray
    pq: np.ndarray
    n_bus: int
    n_branch: int
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @property
    def n_inputs(self) -> int:
        return 2 * len(self.pv) + 2 * len(self.pq) + self.n_branch

    @property
    def n_outputs(self) -> int:
        return 2 * self.n_branch + self.n_bus

    def raw_inputs(self, records: Sequence[ScenarioRecord]) -> np.ndarray:
        self._check(records)
        return np.array(
            [
                np.concatenate(
                    [
                        r.input_pg[self.pv],
                        r.input_vm[self.pv],
                        r.input_pl[self.pq],
                        r.input_ql[self.pq],
                        r.topology.as_array().astype(float),
                    ]
                )
                for r in records
            ]
        ).reshape(len(records), self.n_inputs)

    def raw_targets(self, records: Sequence[ScenarioRecord]) -> np.ndarray:
        self._check(records)
        return np.array([np.concatenate([r.br_i_or, r.br_i_ex, r.inj_current]) for r in records]).reshape(
            len(records), self.n_outputs
        )

    def _check(self, records: Sequence[ScenarioRecord]) -> None:
        for r in records:
            if r.n_bus != self.n_bus or r.n_branch != self.n_branch:
                raise DimensionError(
                    f"record {r.instance_id} has {r.n_bus} buses / {r.n_branch} branches; "
                    f"model expects {self.n_bus} buses / {self.n_branch} branches"
                )

    def encode_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_std

    def decode_inputs(self, z: np.ndarray) -> np.ndarray:
        return z * self.x_std + self.x_mean

    def encode_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_std

    def decode_targets(self, z: np.ndarray) -> np.ndarray:
        return z * self.y_std + self.y_mean


def _std_or_one(a: np.ndarray) -> np.ndarray:
    s = a.std(axis=0)
    # rounding leaves ~1e-17 on constant columns
    floor = 1e-12 * np.maximum(1.0, np.abs(a.mean(axis=0)))
    return np.where(s > floor, s, 1.0)


def fit_codec(train_records: Sequence[ScenarioRecord], case: GridCase) -> FeatureCodec:
    if len(train_records) < 2:
        raise ValueError("need at least two training records to fit normalisation statistics")
    blank = FeatureCodec(
        pv=case.pv,
        pq=case.pq,
        n_bus=case.n_bus,
        n_branch=case.n_branch,
        x_mean=np.zeros(0),
        x_std=np.zeros(0),
        y_mean=np.zeros(0),
        y_std=np.zeros(0),
    )
    x = blank.raw_inputs(train_records)
    y = blank.raw_targets(train_records)
    x_mean, x_std = x.mean(axis=0), _std_or_one(x)
    x_mean[-case.n_branch :] = 0.0
    x_std[-case.n_branch :] = 1.0
    return FeatureCodec(
        pv=case.pv,
        pq=case.pq,
        n_bus=case.n_bus,
        n_branch=case.n_branch,
        x_mean=x_mean,
        x_std=x_std,
        y_mean=y.mean(axis=0),
        y_std=_std_or_one(y),
    )


@dataclass
class Dense:
    weight: np.ndarray  # (n_in, n_out)
    bias: np.ndarray


@dataclass
class ModelParams:
    stem: Dense
    blocks: list[Dense]
    head: Dense
    variant: str = "custom"
    negative_slope: float = 0.01

    @property
    def n_inputs(self) -> int:
        return self.stem.weight.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.head.weight.shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = [self.stem.weight, self.stem.bias]
        for blk in self.blocks:
            out += [blk.weight, blk.bias]
        return out + [self.head.weight, self.head.bias]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> ModelParams:
        a = list(arrays)
        blocks = [Dense(a[2 + 2 * i], a[3 + 2 * i]) for i in range(len(self.blocks))]
        return ModelParams(Dense(a[0], a[1]), blocks, Dense(a[-2], a[-1]), self.variant, self.negative_slope)

    def copy(self) -> ModelParams:
        return self.with_arrays([a.copy() for a in self.arrays()])


def _he_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> Dense:
    bound = math.sqrt(6.0 / n_in)
    return Dense(rng.uniform(-bound, bound, size=(n_in, n_out)), np.zeros(n_out))


def init_params(
    n_inputs: int,
    n_outputs: int,
    variant: str = "small",
    seed: int = 0,
    *,
    depth: int | None = None,
    width: int | None = None,
) -> ModelParams:
    """Seeded He-uniform initialisation; ``depth``/``width`` override the variant."""
    if variant in VARIANTS:
        d, w = VARIANTS[variant]
    elif depth is None or width is None:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    depth = d if depth is None else depth
    width = w if width is None else width
    rng = np.random.default_rng(seed)
    stem = _he_uniform(rng, n_inputs, width)
    # residual branches start small so the identity path dominates early on
    blocks = []
    for _ in range(depth):
        blk = _he_uniform(rng, width, width)
        blk.weight *= 1.0 / math.sqrt(depth)
        blocks.append(blk)
    head = _he_uniform(rng, width, n_outputs)
    head.weight *= 0.1
    return ModelParams(stem, blocks, head, variant)


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def _check_input(params: ModelParams, x: np.ndarray) -> None:
    if x.shape[-1] != params.n_inputs:
        raise DimensionError(f"input has {x.shape[-1]} features, model expects {params.n_inputs}")


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a batch (rows)."""
    x = np.asarray(x, dtype=float)
    _check_input(params, x)
    h = x @ params.stem.weight + params.stem.bias
    for blk in params.blocks:
        h = h + _leaky(h @ blk.weight + blk.bias, params.negative_slope)
    return h @ params.head.weight + params.head.bias


def mse_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    y_hat, y = np.asarray(y_hat, dtype=float), np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise DimensionError(f"prediction shape {y_hat.shape} does not match target shape {y.shape}")
    return float(np.mean((y_hat - y) ** 2))


def backward(params: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Loss and gradients (aligned with ``params.arrays()``) for a batch."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    _check_input(params, x)
    slope = params.negative_slope

    hs = [x @ params.stem.weight + params.stem.bias]
    zs = []
    for blk in params.blocks:
        z = hs[-1] @ blk.weight + blk.bias
        zs.append(z)
        hs.append(hs[-1] + _leaky(z, slope))
    y_hat = hs[-1] @ params.head.weight + params.head.bias
    loss = mse_loss(y_hat, y)

    d_out = 2.0 * (y_hat - y) / y.size
    grads = [hs[-1].T @ d_out, d_out.sum(axis=0)]
    dh = d_out @ params.head.weight.T
    for i in range(len(params.blocks) - 1, -1, -1):
        blk = params.blocks[i]
        dz = dh * np.where(zs[i] > 0, 1.0, slope)
        grads = [hs[i].T @ dz, dz.sum(axis=0)] + grads
        dh = dh + dz @ blk.weight.T
    grads = [x.T @ dh, dh.sum(axis=0)] + grads
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    learning_rate: float = 0.001
    batch_size: int = 128
    scheduler_step: int = 5
    scheduler_gamma: float = 0.5
    seed: int = 0
    variant: str = "small"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.scheduler_step < 1:
            raise ValueError("epochs, batch_size and scheduler_step must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.scheduler_gamma ** (epoch // self.scheduler_step)


class TrainResult(NamedTuple):
    params: ModelParams
    codec: FeatureCodec
    losses: list[float]


def train(
    train_records: Sequence[ScenarioRecord],
    case: GridCase,
    cfg: TrainConfig | None = None,
    init: ModelParams | None = None,
) -> TrainResult:
    """Fit a surrogate on the given records.

    The share of N-1 records is whatever the dataset carries; the trainer does
    not resample. Returns parameters, the codec and per-epoch mean loss.
    """
    cfg = cfg or TrainConfig()
    codec = fit_codec(train_records, case)
    x = codec.encode_inputs(codec.raw_inputs(train_records))
    y = codec.encode_targets(codec.raw_targets(train_records))
    params = (init or init_params(codec.n_inputs, codec.n_outputs, cfg.variant, seed=cfg.seed)).copy()
    if params.n_inputs != codec.n_inputs or params.n_outputs != codec.n_outputs:
        raise DimensionError(
            f"initial params are {params.n_inputs}->{params.n_outputs}, data is {codec.n_inputs}->{codec.n_outputs}"
        )

    arrays = params.arrays()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(x)
    step = 0
    losses = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = backward(params, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            total += loss * len(idx)
            step += 1
            c1 = 1 - cfg.beta1**step
            c2 = 1 - cfg.beta2**step
            for a, g, m_i, v_i in zip(arrays, grads, m, v):
                m_i *= cfg.beta1
                m_i += (1 - cfg.beta1) * g
                v_i *= cfg.beta2
                v_i += (1 - cfg.beta2) * g * g
                a -= lr * (m_i / c1) / (np.sqrt(v_i / c2) + cfg.eps)
        losses.append(total / n)
    return TrainResult(params, codec, losses)


def predict_many(params: ModelParams, codec: FeatureCodec, records: Sequence[ScenarioRecord]) -> np.ndarray:
    """Denormalised current predictions, one row per record."""
    if params.n_inputs != codec.n_inputs or params.n_outputs != codec.n_outputs:
        raise DimensionError(
            f"model is {params.n_inputs}->{params.n_outputs}, codec is {codec.n_inputs}->{codec.n_outputs}"
        )
    z = forward(params, codec.encode_inputs(codec.raw_inputs(records)))
    return codec.decode_targets(z)


def predict(params: ModelParams, codec: FeatureCodec, record: ScenarioRecord) -> np.ndarray:
    return predict_many(params, codec, [record])[0]


def save_checkpoint(path: str | Path, params: ModelParams, codec: FeatureCodec) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": params.variant,
        "negative_slope": params.negative_slope,
        "n_blocks": len(params.blocks),
        "layer_dims": [list(a.shape) for a in params.arrays()],
        "n_bus": codec.n_bus,
        "n_branch": codec.n_branch,
    }
    arrays = {f"w{i:03d}": np.ascontiguousarray(a) for i, a in enumerate(params.arrays())}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.array(json.dumps(header)),
            pv=codec.pv,
            pq=codec.pq,
            x_mean=codec.x_mean,
            x_std=codec.x_std,
            y_mean=codec.y_mean,
            y_std=codec.y_std,
            **arrays,
        )


def load_checkpoint(path: str | Path) -> tuple[ModelParams, FeatureCodec]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a surrogate checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header['version']} is newer than supported")
        arrays = [data[f"w{i:03d}"] for i in range(len(header["layer_dims"]))]
        codec = FeatureCodec(
            pv=data["pv"],
            pq=data["pq"],
            n_bus=header["n_bus"],
            n_branch=header["n_branch"],
            x_mean=data["x_mean"],
            x_std=data["x_std"],
            y_mean=data["y_mean"],
            y_std=data["y_std"],
        )
    blocks = [Dense(arrays[2 + 2 * i], arrays[3 + 2 * i]) for i in range(header["n_blocks"])]
    params = ModelParams(
        Dense(arrays[0], arrays[1]),
        blocks,
        Dense(arrays[-2], arrays[-1]),
        header["variant"],
        header["negative_slope"],
    )
    return params, codec
