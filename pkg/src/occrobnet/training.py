"""Optimisers, the deterministic data schedule, and the training loop."""

from __future__ import annotations

import hashlib
import logging
import math
from typing import Callable

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .config import RunConfig
from .errors import NonFiniteError
from .losses import LOSS_FIELDS, LossBreakdown
from .model import OccRobNet, SceneTargets
from .synthdata import Scene

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("iteration",) + LOSS_FIELDS + ("total",)


class Optimizer:
    """Gradient descent (``sgd``) or Adam, with global-norm clipping."""

    def __init__(self, params: list[T.Parameter], kind: str = "adam", step_size: float = 1e-3,
                 clip_norm: float | None = 10.0, betas=(0.9, 0.999), eps: float = 1e-8,
                 multipliers: list[float] | None = None):
        self.params = params
        self.multipliers = multipliers or [1.0] * len(params)
        self.kind = kind
        self.step_size = step_size
        self.clip_norm = clip_norm
        self.betas = betas
        self.eps = eps
        self.steps = 0
        self.m = [np.zeros_like(p.data) for p in params] if kind == "adam" else []
        self.v = [np.zeros_like(p.data) for p in params] if kind == "adam" else []

    def grad_norm(self) -> float:
        return math.sqrt(math.fsum(float((p.grad * p.grad).sum()) for p in self.params))

    def step(self) -> float:
        norm = self.grad_norm()
        scale = 1.0
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.steps += 1
        if self.kind == "sgd":
            for p, k in zip(self.params, self.multipliers):
                p.data -= self.step_size * k * scale * p.grad
            return norm
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.steps
        c2 = 1.0 - b2 ** self.steps
        for p, m, v, k in zip(self.params, self.m, self.v, self.multipliers):
            g = scale * p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.step_size * k * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"adam_m/{p.name}"] = m
            out[f"adam_v/{p.name}"] = v
        return out

    def load_state(self, steps: int, arrays: dict[str, np.ndarray]) -> None:
        self.steps = steps
        if self.kind == "adam":
            self.m = [np.array(arrays[f"adam_m/{p.name}"]) for p in self.params]
            self.v = [np.array(arrays[f"adam_v/{p.name}"]) for p in self.params]


def learning_rate(config: RunConfig, iteration: int) -> float:
    """Linear warm-up, then cosine decay to 5% of ``step_size`` at the last iteration."""
    base = config.step_size
    if iteration < config.warmup:
        return base * (iteration + 1) / config.warmup
    if config.lr_decay == "constant":
        return base
    span = max(config.iterations - config.warmup, 1)
    frac = min((iteration - config.warmup) / span, 1.0)
    return base * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * frac)))


TRANSFORMER_PREFIXES = ("hand_embed.", "object_embed.", "transformer.")


def make_optimizer(model: OccRobNet, config: RunConfig) -> Optimizer:
    """Token embeddings and the transformer step at ``transformer_step_size``, the rest at ``step_size``."""
    named = list(model.named_parameters())
    ratio = config.transformer_step_size / config.step_size
    multipliers = [ratio if name.startswith(TRANSFORMER_PREFIXES) else 1.0 for name, _ in named]
    return Optimizer([p for _, p in named], config.optimizer, config.step_size, config.clip_norm,
                     multipliers=multipliers)


def schedule_index(seed: int, iteration: int, n: int) -> int:
    """Scene visited at ``iteration``: a fresh permutation per pass over the data."""
    epoch, offset = divmod(iteration, n)
    return int(rngmod.stream(seed, rngmod.SCHEDULE, epoch).permutation(n)[offset])


def schedule(seed: int, iterations: int, n: int) -> list[int]:
    return [schedule_index(seed, i, n) for i in range(iterations)] if n else []


def schedule_hash(seed: int, iterations: int, n: int) -> str:
    order = np.array(schedule(seed, iterations, n), dtype="<i8")
    return hashlib.sha256(order.tobytes()).hexdigest()[:16]


def check_finite(model: OccRobNet, breakdown: LossBreakdown) -> None:
    for name, value in breakdown.as_dict().items():
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite loss term {name} = {value}")
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in {name}")
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteError(f"non-finite value in {name}")


def train(model: OccRobNet, scenes: list[Scene], config: RunConfig, optimizer: Optimizer | None = None,
          start: int = 0, on_step: Callable[[int, LossBreakdown], None] | None = None,
          targets: list[SceneTargets] | None = None,
          stop: int | None = None) -> tuple[Optimizer, list[LossBreakdown]]:
    """Run iterations ``start .. stop - 1`` (default: to ``config.iterations``) with batch size 1.

    The step-size schedule always spans ``config.iterations``, so a run cut at
    ``stop`` and resumed from there matches an uninterrupted one.
    """
    optimizer = optimizer or make_optimizer(model, config)
    targets = targets or [SceneTargets(s, config.sigma) for s in scenes]
    history = []
    if not scenes:
        return optimizer, history
    for it in range(start, config.iterations if stop is None else min(stop, config.iterations)):
        idx = schedule_index(config.seed, it, len(scenes))
        T.zero_grads(optimizer.params)
        total, breakdown = model.loss(targets[idx], rngmod.derive_seed(config.seed, rngmod.SAMPLING, it))
        T.backward(total)
        check_finite(model, breakdown)
        optimizer.step_size = learning_rate(config, it)
        optimizer.step()
        history.append(breakdown)
        if on_step is not None:
            on_step(it, breakdown)
        if it % 100 == 0:
            log.info("iter %d total %.4f", it, breakdown.total)
    return optimizer, history
