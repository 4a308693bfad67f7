"""The training loop: precision warmup, per-layer strategies, deterministic
batching, optional basis calibration, and per-epoch metrics."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..backprop import BackwardStrategy, ht_axis_for
from ..errors import ParameterError
from ..hadamard import _fwht_last_axis, select_bases
from ..quantize import RngState
from ..tensor import Tensor, pad_axis
from .model import Model, ModelSpec
from .optim import build_optimizer, scheduled_lr

STRATEGY_NAMES = ("vanilla", "int4", "int8", "hq", "lbp-wht", "hlq")


@dataclass
class TrainConfig:
    epochs: int = 16
    batch_size: int = 128
    optimizer: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    schedule: str = "step"  # step | cosine | none
    warmup_epochs: int | None = None  # None -> epochs // 8
    warmup_bits: int = 8
    strategy: str = "vanilla"
    bits_gx: int = 4
    bits_gw: int = 8
    rank: int = 8
    block: int = 16
    rounding: str = "pseudo"  # pseudo | stochastic
    calibrate_bases: bool = False
    pad_small_axes: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ParameterError("epochs and batch_size must be positive")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ParameterError("rates must be non-negative")
        if self.warmup_epochs is not None and self.warmup_epochs > self.epochs:
            raise ParameterError("warmup_epochs cannot exceed epochs")
        if self.rounding not in ("pseudo", "stochastic"):
            raise ParameterError(f"unknown rounding mode {self.rounding!r}")

    @property
    def resolved_warmup_epochs(self) -> int:
        return self.epochs // 8 if self.warmup_epochs is None else self.warmup_epochs

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["warmup_epochs"] = self.resolved_warmup_epochs
        return d


def strategy_from_config(name: str, cfg: TrainConfig) -> BackwardStrategy:
    if name == "vanilla":
        s = BackwardStrategy.vanilla()
    elif name == "int4":
        s = BackwardStrategy.naive_quant(4)
    elif name == "int8":
        s = BackwardStrategy.naive_quant(8)
    elif name == "hq":
        s = BackwardStrategy.hq(cfg.bits_gx, cfg.bits_gx, block=cfg.block)
    elif name == "lbp-wht":
        s = BackwardStrategy.lbp_wht(rank=cfg.rank, block=cfg.block)
    elif name == "hlq":
        s = BackwardStrategy.hlq(bits_gx=cfg.bits_gx, bits_gw=cfg.bits_gw,
                                 rank=cfg.rank, block=cfg.block)
    else:
        raise ParameterError(f"unknown strategy {name!r}; choose from {STRATEGY_NAMES}")
    return replace(s, pad_small_axes=cfg.pad_small_axes)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    strategy: str
    lr: float
    wall_time: float  # informational only; excluded from persisted reports

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_acc": self.val_acc,
            "strategy": self.strategy,
            "lr": self.lr,
        }


@dataclass
class MetricsHistory:
    records: list = field(default_factory=list)

    @property
    def final(self) -> EpochMetrics:
        return self.records[-1]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_record(), sort_keys=True) + "\n"
                       for r in self.records)

    def summary(self) -> dict:
        last = self.final
        return {
            "epochs": len(self.records),
            "final_train_loss": last.train_loss,
            "final_train_acc": last.train_acc,
            "final_val_acc": last.val_acc,
            "strategy": last.strategy,
        }


def _basis_energy(gy3: np.ndarray, axis: int, block: int) -> np.ndarray:
    """Per-block |coefficient| matrix (num_blocks_total, block) of gy3."""
    padded = pad_axis(Tensor(gy3), axis, block).data
    moved = np.moveaxis(padded, axis, -1)
    blocks = moved.shape[-1] // block
    coeffs = _fwht_last_axis(np.ascontiguousarray(moved).reshape(*moved.shape[:-1], blocks, block))
    return np.abs(coeffs).reshape(-1, block)


def calibrate_bases(model: Model, strategies: dict, x: np.ndarray, y: np.ndarray,
                    cfg: TrainConfig) -> dict:
    """One-batch L1 basis selection: pick, per layer, the bases where the
    upstream gradient carries the most energy; frozen afterwards."""
    sinks: dict = {i: [] for i in strategies}

    def make_hook(sink, block, pad_small):
        def hook(gy3):
            axis = ht_axis_for(gy3.shape[0], gy3.shape[1], block, pad_small)
            sink.append(_basis_energy(gy3, axis, block))
        return hook

    for i, s in strategies.items():
        model.layers[i].calib_sink = make_hook(sinks[i], s.plan.block_size,
                                               s.pad_small_axes)
    try:
        logits = model.forward(x, strategies={}, train=True)
        _, g = model.loss_and_grad(logits, y)
        model.backward(g, strategies={})
    finally:
        for i in sinks:
            model.layers[i].calib_sink = None
    out = {}
    for i, s in strategies.items():
        if s.plan.full_rank or not sinks[i]:
            out[i] = s
            continue
        energy = np.concatenate(sinks[i], axis=0)
        idx = select_bases(Tensor(energy), s.plan.rank)
        out[i] = s.with_plan(s.plan.with_bases(idx))
    return out


def train(spec: ModelSpec, cfg: TrainConfig, train_data, val_data,
          strategy: BackwardStrategy | None = None) -> MetricsHistory:
    """Deterministic training run; identical (spec, cfg, data) reproduce the
    history bit for bit. ``strategy`` overrides the config preset (used by
    the ablation grids for composite per-path rows)."""
    train_x, train_y = train_data
    val_x, val_y = val_data
    model = Model(spec, init_seed=cfg.seed)
    base = strategy if strategy is not None else strategy_from_config(cfg.strategy, cfg)

    layer_strategies = {}
    for idx, ls in ((i, model.spec.layers[i]) for i in model.gemm_indices()):
        s = base if ls.strategy is None else strategy_from_config(ls.strategy, cfg)
        layer_strategies[idx] = s

    optimizer = build_optimizer(cfg.optimizer, model.parameters(), lr=cfg.lr,
                                momentum=cfg.momentum, betas=(cfg.beta1, cfg.beta2),
                                weight_decay=cfg.weight_decay)
    warmup_epochs = cfg.resolved_warmup_epochs
    n = len(train_x)
    steps = n // cfg.batch_size
    if steps == 0:
        raise ParameterError("dataset smaller than one batch")
    history = MetricsHistory()
    calibrated = cfg.resolved_warmup_epochs == 0 or not cfg.calibrate_bases

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        warm = epoch < warmup_epochs
        if not warm and not calibrated:
            order = np.random.Generator(
                np.random.Philox(key=np.array([cfg.seed, 0xCA11B], dtype=np.uint64))
            ).permutation(n)[:cfg.batch_size]
            layer_strategies = calibrate_bases(
                model, layer_strategies, train_x[order], train_y[order], cfg)
            calibrated = True
        effective = {
            i: (s.with_warmup_bits(cfg.warmup_bits) if warm else s)
            for i, s in layer_strategies.items()
        }
        lr = scheduled_lr(cfg.lr, epoch, cfg.epochs, cfg.schedule)
        shuffle = np.random.Generator(
            np.random.Philox(key=np.array([cfg.seed, epoch], dtype=np.uint64)))
        order = shuffle.permutation(n)
        loss_sum = 0.0
        for step in range(steps):
            sel = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            xb, yb = train_x[sel], train_y[sel]
            rng = (RngState(cfg.seed).split(0x57EB, epoch, step)
                   if cfg.rounding == "stochastic" else None)
            logits = model.forward(xb, strategies=effective, rng=rng, train=True)
            loss, g = model.loss_and_grad(logits, yb)
            model.backward(g, strategies=effective, rng=rng)
            optimizer.step(model.gradients(), lr=lr)
            loss_sum += loss
        label = next(iter(effective.values())).name if effective else "vanilla"
        history.records.append(EpochMetrics(
            epoch=epoch,
            train_loss=loss_sum / steps,
            train_acc=model.accuracy(train_x, train_y),
            val_acc=model.accuracy(val_x, val_y),
            strategy=label,
            lr=lr,
            wall_time=time.perf_counter() - t0,
        ))
    return history


__all__ = [
    "TrainConfig", "EpochMetrics", "MetricsHistory", "train",
    "strategy_from_config", "calibrate_bases", "STRATEGY_NAMES",
]
