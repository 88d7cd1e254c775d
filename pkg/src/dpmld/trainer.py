"""Alternating optimization of model parameters and per-feature dropout rates.

Each mini-batch runs one parameter step followed by one rate step. Training
uses the Gumbel-Softmax keep mask so the rate logits receive gradients both
through the mask and through the noise scale ``1 / eps'(w)``; evaluation
uses hard Gumbel-Max masks and real Laplace noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ModalitySample, split
from .gumbel import GumbelConfig, anneal, sample_gumbel, sample_hard, sample_soft, soft_keep_mask
from .model import BLOCKS, ModelConfig, MultimodalModel, PreparedData
from .privacy import (
    W_MAX,
    W_MIN,
    DropoutRates,
    PrivacyBudget,
    allocate_budget,
    matched_baseline,
    noise_scale_tensor,
    sample_mask,
    sample_unit_laplace,
)

SCHEMES = ("elementwise", "uniform", "non-private")


@dataclass(frozen=True)
class TrainConfig:
    epsilon: float = 1.0
    epochs: int = 30
    batch_size: int = 32
    lr_p: float = 1e-2
    lr_w: float = 1e-3
    momentum: float = 0.9
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    seed: int = 0
    p_steps: int = 1
    w_steps: int = 1
    train_frac: float = 0.7
    scheme: str = "elementwise"
    mu: float = 0.5
    init_rate: float = 0.5
    w_min: float = W_MIN
    w_max: float = W_MAX
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.scheme != "non-private":
            PrivacyBudget(self.epsilon)
        if self.epochs < 0 or self.batch_size < 1 or self.p_steps < 1 or self.w_steps < 0:
            raise ValueError("epochs must be >= 0, batch_size and p_steps >= 1, w_steps >= 0")
        if self.lr_p < 0 or self.lr_w < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning rates must be >= 0 and momentum in [0, 1)")
        if not 0 < self.mu < 1 or not self.w_min <= self.init_rate <= self.w_max:
            raise ValueError("mu and init_rate must be valid rates")

    @property
    def private(self) -> bool:
        return self.scheme != "non-private"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochMetrics:
    epoch: int
    train_acc: float
    test_acc: float
    train_loss: float
    test_loss: float
    macro_f1: float
    tau: float
    mean_rate: dict[str, float] = field(default_factory=dict)
    mean_scale: dict[str, float] = field(default_factory=dict)

    def record(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: MultimodalModel
    rates: DropoutRates
    metrics: list[EpochMetrics]
    train: PreparedData
    test: PreparedData
    config: TrainConfig

    @property
    def best_test_acc(self) -> float:
        return max((m.test_acc for m in self.metrics), default=float("nan"))

    @property
    def best_macro_f1(self) -> float:
        return max((m.macro_f1 for m in self.metrics), default=float("nan"))


class Momentum:
    """Heavy-ball gradient descent over named arrays."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, name: str, value: np.ndarray, grad: np.ndarray) -> np.ndarray:
        v = self.velocity.get(name)
        v = grad.copy() if v is None else self.momentum * v + grad
        self.velocity[name] = v
        return value - self.lr * v


def classification_metrics(preds, labels) -> tuple[float, float]:
    """Accuracy and macro-F1 (unweighted mean over classes seen in labels or predictions)."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError("predictions and labels must be non-empty and aligned")
    acc = float(np.mean(preds == labels))
    scores = []
    for c in np.union1d(preds, labels):
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        scores.append(2 * tp / (2 * tp + fp + fn))
    return acc, float(np.mean(scores))


def _check_loss(loss: Tensor, where: str) -> None:
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite loss ({loss.item()}) in {where}; lower the learning rate")


def relaxed_noise(batch_shape: tuple[int, int], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Fresh Gumbel draws ``[B, k, 2]`` and unit Laplace draws ``[B, k]``."""
    return sample_gumbel(batch_shape + (2,), rng), sample_unit_laplace(batch_shape, rng)


def model_loss(model: MultimodalModel, batch: PreparedData, mask, noise) -> Tensor:
    """Cross-entropy of ``classify(f * mask + noise)``; ``mask``/``noise`` are constants (or None)."""
    f = model.forward_features(batch)
    if mask is not None:
        f = f * Tensor(mask) + Tensor(noise)
    return ad.cross_entropy(model.classify(f), batch.labels)


def rates_loss(
    model: MultimodalModel,
    features: np.ndarray,
    labels: np.ndarray,
    logits: Tensor,
    eps: float,
    tau: float,
    gumbel: np.ndarray,
    unit_noise: np.ndarray,
    w_min: float = W_MIN,
    w_max: float = W_MAX,
    noise_path: bool = True,
) -> Tensor:
    """Loss as a function of the rate logits with the features held fixed.

    Gradients reach ``logits`` through the relaxed keep mask and, unless
    ``noise_path`` is off, through the noise scale ``1 / eps'(w)``.
    """
    w = ad.clip(ad.sigmoid(logits), w_min, w_max)
    shape = features.shape
    mask = soft_keep_mask(ad.broadcast_to(w, shape), gumbel, tau)
    scale = noise_scale_tensor(w, eps)
    if not noise_path:
        scale = scale.detach()
    released = Tensor(features) * mask + Tensor(unit_noise) * ad.broadcast_to(scale, shape)
    return ad.cross_entropy(model.classify(released), labels)


def step_model(
    model: MultimodalModel,
    batch: PreparedData,
    rates: DropoutRates,
    cfg: TrainConfig,
    tau: float,
    rng: np.random.Generator,
    opt: Momentum,
) -> tuple[float, float]:
    """One gradient step on the model parameters; returns (batch loss, batch accuracy)."""
    shape = (len(batch), model.cfg.n_features)
    mask = noise = None
    if cfg.scheme == "elementwise":
        g, t = relaxed_noise(shape, rng)
        w = rates.rates
        pi = np.broadcast_to(np.stack([w, 1.0 - w], axis=-1), shape + (2,))
        mask = sample_soft(pi, tau, g=g)[..., 1]
        noise = t * allocate_budget(w, cfg.epsilon).scales
    elif cfg.scheme == "uniform":
        base = matched_baseline(cfg.mu, cfg.epsilon)
        mask = sample_mask(np.full(shape[1], cfg.mu), rng, size=shape[0])
        noise = sample_unit_laplace(shape, rng) / base.eps_prime_uniform

    model.params.zero_grad()
    f = model.forward_features(batch)
    released = f if mask is None else f * Tensor(mask) + Tensor(noise)
    logits = model.classify(released)
    loss = ad.cross_entropy(logits, batch.labels)
    _check_loss(loss, "step_model")
    loss.backward()
    for name, p in model.params.items():
        if p.grad is not None:
            p.data = opt.step(name, p.data, p.grad)
    model.params.zero_grad()
    acc = float(np.mean(np.argmax(logits.data, axis=1) == batch.labels))
    return loss.item(), acc


def step_rates(
    model: MultimodalModel,
    batch: PreparedData,
    rates: DropoutRates,
    cfg: TrainConfig,
    tau: float,
    rng: np.random.Generator,
    opt: Momentum,
    noise_path: bool = True,
) -> float:
    """One gradient step on the dropout logits with the model held fixed; returns the batch loss."""
    with ad.no_grad():
        features = model.forward_features(batch).data
    g, t = relaxed_noise(features.shape, rng)
    logits = Tensor(rates.logits, requires_grad=True)
    loss = rates_loss(model, features, batch.labels, logits, cfg.epsilon, tau, g, t, rates.w_min, rates.w_max, noise_path)
    _check_loss(loss, "step_rates")
    loss.backward()
    model.params.zero_grad()
    new = opt.step("logits", rates.logits, logits.grad)
    lo, hi = np.log(rates.w_min / (1 - rates.w_min)), np.log(rates.w_max / (1 - rates.w_max))
    rates.logits = np.clip(new, lo, hi)
    return loss.item()


def release_for_eval(
    f: np.ndarray, rates: DropoutRates | None, cfg: TrainConfig, rng: np.random.Generator
) -> np.ndarray:
    """Hard Gumbel-Max keep mask and real Laplace noise on normalized features."""
    if cfg.scheme == "non-private":
        return f
    if cfg.scheme == "uniform":
        base = matched_baseline(cfg.mu, cfg.epsilon)
        mask = sample_mask(np.full(f.shape[1], cfg.mu), rng, size=f.shape[0])
        return f * mask + sample_unit_laplace(f.shape, rng) / base.eps_prime_uniform
    w = rates.rates
    pi = np.broadcast_to(np.stack([w, 1.0 - w], axis=-1), f.shape + (2,))
    mask = sample_hard(pi, rng)[..., 1]
    return f * mask + sample_unit_laplace(f.shape, rng) * allocate_budget(w, cfg.epsilon).scales


def evaluate(
    model: MultimodalModel,
    data: PreparedData,
    rates: DropoutRates | None,
    cfg: TrainConfig,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> tuple[float, float, float]:
    """(accuracy, macro-F1, mean cross-entropy) under a fresh private release per sample."""
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty split")
    preds, losses = [], []
    with ad.no_grad():
        for i in range(0, len(data), batch_size):
            batch = data.subset(slice(i, i + batch_size))
            f = model.forward_features(batch).data
            logits = model.classify(release_for_eval(f, rates, cfg, rng))
            losses.append(ad.cross_entropy(logits, batch.labels).item() * len(batch))
            preds.append(np.argmax(logits.data, axis=1))
    acc, f1 = classification_metrics(np.concatenate(preds), data.labels)
    return acc, f1, float(np.sum(losses) / len(data))


def _block_means(model: MultimodalModel, rates: DropoutRates, cfg: TrainConfig) -> tuple[dict, dict]:
    if cfg.scheme == "non-private":
        return {}, {}
    if cfg.scheme == "uniform":
        base = matched_baseline(cfg.mu, cfg.epsilon)
        w = np.full(model.cfg.n_features, cfg.mu)
        b = np.full(model.cfg.n_features, 1.0 / base.eps_prime_uniform)
    else:
        w = rates.rates
        b = allocate_budget(w, cfg.epsilon).scales
    slices = model.block_slices()
    return (
        {k: float(w[s].mean()) for k, s in slices.items()},
        {k: float(b[s].mean()) for k, s in slices.items()},
    )


def setup(dataset: Sequence[ModalitySample], cfg: TrainConfig):
    """Split, seed and initialize everything a run needs before the first epoch."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng, order_rng, noise_rng, eval_rng = (np.random.default_rng(s) for s in seeds)
    train_set, test_set = split(dataset, cfg.train_frac, seed=cfg.seed)
    eeg_shape = train_set[0].eeg.shape
    om_dims = train_set[0].om.shape[0]
    mcfg = cfg.model
    if (mcfg.eeg_channels, mcfg.om_dims) != (eeg_shape[0], om_dims):
        mcfg = ModelConfig(**{**asdict(mcfg), "eeg_channels": eeg_shape[0], "om_dims": om_dims})
    model = MultimodalModel.create(mcfg, init_rng)
    model.fit_tokenizer(train_set)
    train, test = model.prepare(train_set), model.prepare(test_set)
    rates = DropoutRates.uniform(mcfg.n_features, cfg.init_rate, w_min=cfg.w_min, w_max=cfg.w_max)
    return model, rates, train, test, (order_rng, noise_rng, eval_rng)


def train(dataset: Sequence[ModalitySample], cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Run the full two-step optimization; deterministic given ``cfg.seed``.

    ``on_epoch`` is called with each :class:`EpochMetrics` as soon as it is ready.
    """
    model, rates, train_data, test_data, (order_rng, noise_rng, eval_rng) = setup(dataset, cfg)
    opt_p = Momentum(cfg.lr_p, cfg.momentum)
    opt_w = Momentum(cfg.lr_w, cfg.momentum)
    metrics: list[EpochMetrics] = []
    learn_rates = cfg.scheme == "elementwise" and cfg.w_steps > 0

    for epoch in range(cfg.epochs):
        tau = anneal(cfg.gumbel, epoch)
        model.fit_normalization(train_data)
        order = order_rng.permutation(len(train_data))
        losses, accs, sizes = [], [], []
        for start in range(0, len(order), cfg.batch_size):
            batch = train_data.subset(order[start : start + cfg.batch_size])
            for _ in range(cfg.p_steps):
                loss, acc = step_model(model, batch, rates, cfg, tau, noise_rng, opt_p)
            if learn_rates:
                for _ in range(cfg.w_steps):
                    step_rates(model, batch, rates, cfg, tau, noise_rng, opt_w)
            losses.append(loss)
            accs.append(acc)
            sizes.append(len(batch))
        if not model.params.all_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
        test_acc, f1, test_loss = evaluate(model, test_data, rates, cfg, eval_rng)
        mean_rate, mean_scale = _block_means(model, rates, cfg)
        m = EpochMetrics(
            epoch=epoch,
            train_acc=float(np.average(accs, weights=sizes)),
            test_acc=test_acc,
            train_loss=float(np.average(losses, weights=sizes)),
            test_loss=test_loss,
            macro_f1=f1,
            tau=tau,
            mean_rate=mean_rate,
            mean_scale=mean_scale,
        )
        metrics.append(m)
        if on_epoch is not None:
            on_epoch(m)

    if model.norm is None:
        model.fit_normalization(train_data)
    return TrainResult(model, rates, metrics, train_data, test_data, cfg)


def allocation_report(
    model: MultimodalModel, w: np.ndarray, b: np.ndarray, data: PreparedData
) -> dict[str, dict[str, np.ndarray | float]]:
    """Per-block drop rate, noise scale and mean |feature| arrays, plus block means."""
    with ad.no_grad():
        feats = np.concatenate(
            [model.forward_features(data.subset(slice(i, i + 256))).data for i in range(0, len(data), 256)]
        )
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    magnitude = np.abs(feats).mean(axis=0)
    report = {}
    for name, s in model.block_slices().items():
        report[name] = {
            "rate": w[s],
            "scale": b[s],
            "magnitude": magnitude[s],
            "mean_rate": float(w[s].mean()),
            "mean_scale": float(b[s].mean()),
            "mean_magnitude": float(magnitude[s].mean()),
        }
    return report


__all__ = [
    "BLOCKS",
    "EpochMetrics",
    "Momentum",
    "TrainConfig",
    "TrainResult",
    "allocation_report",
    "classification_metrics",
    "evaluate",
    "model_loss",
    "rates_loss",
    "release_for_eval",
    "step_model",
    "step_rates",
    "train",
]
