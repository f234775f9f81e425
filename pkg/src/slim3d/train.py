"""Toy training of the masked decoder on the synthetic grounding task."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import DecoderConfig, DecoderParams, SequenceBatch, forward, loss_and_grads
from .errors import ConfigurationError, TrainingFailure
from .masks import MaskStrategy
from .scene import segment_spans
from .scene_gen import DEFAULT_TASK_RECIPE, SceneRecipe, TaskSet, build_task_set


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-3
    optimizer: str = "adam"
    n_train: int = 12000
    n_eval: int = 600
    decoys: int = 1
    eval_every: int = 400
    d_model: int = 32
    n_heads: int = 2
    d_head: int = 16
    n_layers: int = 2
    d_ff: int = 64
    object_positions: str = "shared"
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.n_layers > 2 or self.n_heads > 4 or self.d_model > 64:
            raise ConfigurationError("toy decoder is limited to 2 layers, 4 heads, d_model 64")


@dataclass
class TrainResult:
    strategy: str
    seed: int
    accuracy: float
    final_loss: float
    steps: int
    curve: list = field(default_factory=list)  # (step, loss, accuracy)

    def summary(self) -> str:
        return (f"strategy={self.strategy}, seed={self.seed}, "
                f"accuracy={self.accuracy:.4f}, steps={self.steps}")

    def curve_csv(self) -> str:
        rows = ["step,loss,accuracy"]
        rows += [f"{s},{l:.10g},{a:.10g}" for s, l, a in self.curve]
        return "\n".join(rows) + "\n"


def model_config(ts: TaskSet, cfg: TrainConfig) -> DecoderConfig:
    return DecoderConfig(vocab_size=ts.vocab.size, d_model=cfg.d_model, n_heads=cfg.n_heads,
                         d_head=cfg.d_head, n_layers=cfg.n_layers, d_ff=cfg.d_ff,
                         max_positions=ts.layout.n, feature_dim=ts.features.shape[-1],
                         object_positions=cfg.object_positions)


def task_batch(ts: TaskSet, strategy: MaskStrategy, idx=None) -> SequenceBatch:
    allow = ts.masks(strategy)
    if idx is None:
        idx = np.arange(len(ts))
    return SequenceBatch(ts.token_ids[idx], ts.layout, allow[idx], ts.features[idx],
                         ts.targets[idx], ts.candidates)


def accuracy(params: DecoderParams, batch: SequenceBatch) -> float:
    """Fraction of sequences whose first response logit, restricted to the candidate ids, picks the target."""
    span = segment_spans(batch.layout).response
    logits = forward(params, batch, rows=slice(span.start, span.start + 1))[:, 0]
    cand = batch.candidates
    pred = cand[np.argmax(logits[:, cand], axis=-1)]
    return float(np.mean(pred == batch.targets[:, 0]))


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, arrays, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            arrays[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _clip(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        for g in grads.values():
            g *= max_norm / total
    return total


def ablation_task_sets(seed: int, config: TrainConfig, recipe: SceneRecipe = DEFAULT_TASK_RECIPE):
    """The training and held-out task sets :func:`toy_train` builds for ``seed``."""
    return (build_task_set(recipe, config.n_train, seed=2 * seed + 1, decoys=config.decoys),
            build_task_set(recipe, config.n_eval, seed=2 * seed + 2, decoys=config.decoys))


def toy_train(strategy: MaskStrategy, seed: int = 0, config: TrainConfig = TrainConfig(),
              recipe: SceneRecipe = DEFAULT_TASK_RECIPE, train_set: TaskSet | None = None,
              eval_set: TaskSet | None = None) -> TrainResult:
    """Train a fresh decoder under ``strategy`` and report held-out accuracy.

    Data, initialisation and minibatch order depend only on ``seed``, so runs
    with different strategies but the same seed see identical examples.
    """
    if train_set is None or eval_set is None:
        built = ablation_task_sets(seed, config, recipe)
        train_set = built[0] if train_set is None else train_set
        eval_set = built[1] if eval_set is None else eval_set
    params = DecoderParams.init(model_config(train_set, config), seed=seed)
    train_batch = task_batch(train_set, strategy)
    eval_batch = task_batch(eval_set, strategy)
    rng = np.random.default_rng([seed, 17])
    opt = _Adam(config.lr) if config.optimizer == "adam" else None
    curve = []
    loss = float("nan")
    n = len(train_set)
    order = rng.permutation(n)
    cursor = 0
    for step in range(config.steps):
        if cursor + config.batch_size > n:
            order, cursor = rng.permutation(n), 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        loss, grads, _ = loss_and_grads(params, train_batch.subset(idx))
        if not np.isfinite(loss):
            raise TrainingFailure(f"loss diverged at step {step} under {strategy.name}")
        _clip(grads, config.grad_clip)
        if opt is None:
            for k, g in grads.items():
                params.arrays[k] -= config.lr * g
        else:
            opt.step(params.arrays, grads)
        if config.eval_every and (step + 1) % config.eval_every == 0:
            curve.append((step + 1, loss, accuracy(params, eval_batch)))
    acc = accuracy(params, eval_batch)
    if config.steps == 0 or not curve or curve[-1][0] != config.steps:
        curve.append((config.steps, loss, acc))
    return TrainResult(strategy.name, seed, acc, loss, config.steps, curve)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
