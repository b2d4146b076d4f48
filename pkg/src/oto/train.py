"""SGD training loop with momentum, weight decay and step learning-rate decay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence, TextIO

import numpy as np

from oto.data import PairDataset
from oto.metrics import MetricsConfig, MetricsReport, evaluate_pair, mean_report
from oto.net import ConfigError, OtoModel, read_alpha
from oto.tensor import Parameter, Tensor, mse_loss

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became NaN/Inf; ``snapshot`` carries the state at the failing iteration."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    momentum: float = 0.9
    weight_decay: float = 0.001
    lr0: float = 0.01
    decay_factor: float = 0.9
    decay_every: int = 30000
    max_iters: int = 120000
    batch_size: int = 64
    seed: int = 0
    desk_scale: bool = False
    log_every: int = 100
    alpha_every: int = 1000
    eval_every: int | None = None  # defaults to decay_every
    loss_reduction: str = "mean"  # "mean" or "sum" (per-sample sum, Caffe Euclidean style)
    output_lr_mult: float = 1.0  # learning-rate multiplier for the final conv only

    def __post_init__(self):
        if self.desk_scale:
            self._apply_desk_defaults()
        self.validate()

    def _apply_desk_defaults(self) -> None:
        defaults = {f.name: f.default for f in fields(TrainConfig)}
        desk = {"max_iters": 2000, "decay_every": 500, "batch_size": 8, "lr0": 0.3, "output_lr_mult": 0.01}
        for key, val in desk.items():
            if getattr(self, key) == defaults[key]:
                setattr(self, key, val)

    def validate(self) -> None:
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1 or self.max_iters < 0 or self.batch_size < 1:
            raise ConfigError("decay_every and batch_size must be positive, max_iters non-negative")
        if self.output_lr_mult <= 0:
            raise ConfigError(f"output_lr_mult must be positive, got {self.output_lr_mult}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")

    @classmethod
    def desk(cls, **overrides) -> TrainConfig:
        return cls(desk_scale=True, **overrides)


@dataclass
class TrainState:
    iter: int = 0
    lr: float = 0.0
    loss_history: list[tuple[int, float]] = field(default_factory=list)
    alpha_history: list[tuple[int, float]] = field(default_factory=list)
    val_history: list[tuple[int, float]] = field(default_factory=list)
    best_iter: int | None = None
    best_val_psnr: float = -math.inf


def lr_at(config: TrainConfig, it: int) -> float:
    """``lr0 * decay_factor ** floor(it / decay_every)``."""
    if it < 0 or it > config.max_iters:
        raise ValueError(f"iteration {it} outside [0, {config.max_iters}]")
    return config.lr0 * config.decay_factor ** (it // config.decay_every)


def sgd_step(params: Sequence[Parameter], lr: float, config: TrainConfig) -> None:
    """In-place momentum SGD; weight decay only on parameters flagged ``decay`` (conv weights)."""
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
    for p in params:
        g = p.grad
        if p.decay and config.weight_decay:
            g = g + config.weight_decay * p.data
        p.momentum_buffer *= config.momentum
        p.momentum_buffer += g
        p.data -= (lr * p.lr_mult) * p.momentum_buffer


def _snapshot(model: OtoModel) -> dict:
    return {
        "params": [p.data.copy() for p in model.parameters()],
        "bn": [(bn.stats.mean.copy(), bn.stats.var.copy()) for bn in model.bn_layers()],
    }


def _restore_snapshot(model: OtoModel, snap: dict) -> None:
    for p, arr in zip(model.parameters(), snap["params"]):
        p.data[...] = arr
    for bn, (m, v) in zip(model.bn_layers(), snap["bn"]):
        bn.stats.mean[...] = m
        bn.stats.var[...] = v


def _has_alpha(model: OtoModel) -> bool:
    return any(n.endswith("alpha") for n, _ in model.named_parameters())


def train_step(model: OtoModel, degraded: np.ndarray, clean: np.ndarray, lr: float, config: TrainConfig) -> float:
    """One SGD step on a batch of ``(k, h, w)`` [0, 255] patches; returns the batch MSE in [0, 1] units."""
    dtype = model.stem.weight.dtype
    x = Tensor(degraded[:, None] / 255.0, dtype=dtype)
    y = Tensor(clean[:, None] / 255.0, dtype=dtype)
    model.train()
    model.zero_grad()
    loss = mse_loss(model(x), y)
    value = float(loss.data)
    if math.isfinite(value):
        if config.loss_reduction == "sum":
            seed = np.asarray(x.data[0].size, dtype=dtype)  # mean -> per-sample sum
        else:
            seed = None
        loss.backward(seed)
        sgd_step(model.parameters(), lr, config)
    return value


def train(
    model: OtoModel,
    patches: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    val: PairDataset | None = None,
    metrics_config: MetricsConfig | None = None,
    log: TextIO | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[OtoModel, TrainState]:
    """Train on ``(degraded, clean)`` patch stacks.

    Batches are drawn from a seeded per-epoch permutation.  When ``val`` is
    given the model is evaluated every ``eval_every`` iterations (and at the
    end) and the best-PSNR snapshot is restored before returning.  ``log``
    receives ``iter,lr,loss[,alpha]`` lines.
    """
    degraded, clean = patches
    if degraded.shape != clean.shape:
        raise ValueError(f"patch stacks differ in shape: {degraded.shape} vs {clean.shape}")
    if len(degraded) == 0:
        raise ValueError("no training patches")
    rng = np.random.default_rng(config.seed)
    state = TrainState()
    has_alpha = _has_alpha(model)
    model.out.weight.lr_mult = model.out.bias.lr_mult = config.output_lr_mult
    eval_every = config.eval_every or config.decay_every
    best = None
    order = rng.permutation(len(degraded))
    cursor = 0
    for it in range(config.max_iters):
        idx = []
        while len(idx) < config.batch_size:
            if cursor == len(order):
                order, cursor = rng.permutation(len(degraded)), 0
            take = min(config.batch_size - len(idx), len(order) - cursor)
            idx.extend(order[cursor:cursor + take])
            cursor += take
        lr = lr_at(config, it)
        loss = train_step(model, degraded[idx], clean[idx], lr, config)
        state.iter, state.lr = it + 1, lr
        if not math.isfinite(loss):
            snap = {"iter": it, "lr": lr, "batch": np.asarray(idx), "loss_history": list(state.loss_history)}
            snap["nonfinite_params"] = [p.name for p in model.parameters() if not np.all(np.isfinite(p.data))]
            raise TrainingDiverged(f"loss became {loss} at iteration {it}", snap)
        if it % config.log_every == 0 or it == config.max_iters - 1:
            state.loss_history.append((it, loss))
            line = f"{it},{lr:.10g},{loss:.10g}"
            if has_alpha and it % config.alpha_every == 0:
                a = read_alpha(model)
                state.alpha_history.append((it, a))
                line += f",{a:.10g}"
            if log is not None:
                log.write(line + "\n")
            logger.debug(line)
        if progress is not None:
            progress(it, loss)
        last = it == config.max_iters - 1
        if val is not None and ((it + 1) % eval_every == 0 or last):
            score = mean_report(evaluate(model, val, metrics_config)[0]).psnr
            state.val_history.append((it + 1, score))
            if score > state.best_val_psnr:
                state.best_val_psnr, state.best_iter = score, it + 1
                best = _snapshot(model)
    if has_alpha and state.alpha_history and state.alpha_history[-1][0] != state.iter - 1:
        state.alpha_history.append((state.iter - 1, read_alpha(model)))
    if best is not None:
        _restore_snapshot(model, best)
    model.eval()
    return model, state


def restore_image(model: OtoModel, luma: np.ndarray) -> np.ndarray:
    return np.clip(model.restore(luma), 0, 255)


def evaluate(
    model: OtoModel,
    dataset: PairDataset,
    metrics_config: MetricsConfig | None = None,
) -> tuple[list[MetricsReport], list[MetricsReport]]:
    """Per-image reports for restored outputs and for the unrestored degraded inputs."""
    metrics_config = metrics_config or MetricsConfig()
    restored, baseline = [], []
    for name, deg, cln in zip(dataset.names, dataset.degraded, dataset.clean):
        if deg.shape != cln.shape:
            raise ValueError(f"{name}: degraded {deg.shape} and clean {cln.shape} differ")
        restored.append(evaluate_pair(cln, restore_image(model, deg), metrics_config, name))
        baseline.append(evaluate_pair(cln, deg, metrics_config, name))
    return restored, baseline
