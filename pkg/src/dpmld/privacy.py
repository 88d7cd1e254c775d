"""Element-wise Laplacian dropout: budget allocation, sampling and release.

Each feature ``i`` is dropped with probability ``w_i`` and otherwise kept,
then Laplace noise of scale ``b_i = 1 / eps_i'`` is added. The per-feature
budget is chosen so that ``w_i + (1 - w_i) * exp(eps_i') = exp(eps)``,
which keeps the combined release eps-DP for inputs normalized to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

W_MIN = 1e-4
W_MAX = 1.0 - 1e-4


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps <= 0:
            raise ValueError(f"epsilon must be a positive finite number, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if self.normalized and (np.any(values < 0) or np.any(values > 1)):
            raise ValueError("normalized feature vector has entries outside [0, 1]")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[-1]


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-feature min-max bounds. After mapping, each coordinate has sensitivity 1."""

    lo: np.ndarray
    hi: np.ndarray
    sensitivity: float = field(default=1.0, init=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ValueError(f"lo shape {lo.shape} != hi shape {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("normalization bounds must be finite")
        if np.any(hi <= lo):
            bad = np.flatnonzero(hi <= lo)
            raise ValueError(f"normalization needs hi > lo; violated at indices {bad.tolist()}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def fit(cls, features: np.ndarray, min_width: float = 1e-6) -> NormalizationSpec:
        """Bounds from observed rows of ``features``; flat columns get a small width."""
        features = np.asarray(features, dtype=np.float64)
        lo = features.min(axis=0)
        hi = features.max(axis=0)
        hi = np.maximum(hi, lo + min_width)
        return cls(lo, hi)


class DropoutRates:
    """Per-feature drop probabilities parameterized by logits.

    ``rates = clip(sigmoid(logits), w_min, w_max)``; ``class_probs[i]`` is
    the (drop, keep) pair ``(w_i, 1 - w_i)``.
    """

    def __init__(self, logits, w_min: float = W_MIN, w_max: float = W_MAX):
        if not 0 < w_min < w_max < 1:
            raise ValueError(f"need 0 < w_min < w_max < 1, got {w_min}, {w_max}")
        self.logits = np.array(logits, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("dropout logits must be finite")
        self.w_min = float(w_min)
        self.w_max = float(w_max)

    @classmethod
    def uniform(cls, k: int, rate: float = 0.5, **kw) -> DropoutRates:
        return cls(np.full(k, np.log(rate) - np.log1p(-rate)), **kw)

    @classmethod
    def from_rates(cls, rates, **kw) -> DropoutRates:
        rates = np.asarray(rates, dtype=np.float64)
        return cls(np.log(rates) - np.log1p(-rates), **kw)

    def __len__(self) -> int:
        return self.logits.size

    @property
    def rates(self) -> np.ndarray:
        return np.clip(ad._sigmoid(self.logits), self.w_min, self.w_max)

    @property
    def class_probs(self) -> np.ndarray:
        w = self.rates
        return np.stack([w, 1.0 - w], axis=-1)

    def copy(self) -> DropoutRates:
        return DropoutRates(self.logits.copy(), self.w_min, self.w_max)


@dataclass(frozen=True)
class PerFeatureBudget:
    eps_prime: np.ndarray
    scales: np.ndarray


@dataclass(frozen=True)
class BaselineConfig:
    """Uniform dropout rate ``mu`` with a shared temporary budget ``eps_prime``."""

    mu: float
    eps_prime_uniform: float

    def __post_init__(self):
        if not 0 < self.mu < 1:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")
        if not np.isfinite(self.eps_prime_uniform) or self.eps_prime_uniform <= 0:
            raise ValueError(f"eps_prime_uniform must be positive, got {self.eps_prime_uniform}")


def _epsilon(eps) -> float:
    return eps.epsilon if isinstance(eps, PrivacyBudget) else PrivacyBudget(eps).epsilon


def _rate_array(w) -> np.ndarray:
    w = w.rates if isinstance(w, DropoutRates) else np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("dropout rates must be finite")
    if np.any(w < 0) or np.any(w >= 1):
        raise ValueError("dropout rates must lie in [0, 1)")
    return w


def allocate_budget(w, eps) -> PerFeatureBudget:
    """Per-feature Laplace budgets ``eps_i' = log((e^eps - w_i) / (1 - w_i))``.

    ``w`` may be :class:`DropoutRates` or an array of rates in [0, 1); the
    ``w = 0`` limit gives ``eps_i' = eps``.
    """
    e = _epsilon(eps)
    w = _rate_array(w)
    eps_prime = np.log1p(np.expm1(e) / (1.0 - w))
    return PerFeatureBudget(eps_prime=eps_prime, scales=1.0 / eps_prime)


def budget_gradient(w, eps) -> np.ndarray:
    """d eps_i' / d w_i = (e^eps - 1) / ((e^eps - w_i)(1 - w_i)), always positive."""
    e = _epsilon(eps)
    w = _rate_array(w)
    em1 = np.expm1(e)
    return em1 / ((em1 + 1.0 - w) * (1.0 - w))


def noise_scale_tensor(w: ad.Tensor, eps) -> ad.Tensor:
    """Differentiable ``1 / eps'(w)`` for a tensor of rates."""
    e = _epsilon(eps)
    eps_prime = allocate_budget(w.data, e).eps_prime
    deriv = -budget_gradient(w.data, e) / eps_prime**2
    return ad.elementwise(w, 1.0 / eps_prime, deriv)


def _open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    # strictly inside (0, 1): both inverse CDFs diverge at the endpoints
    return (rng.integers(0, 2**53, size=size).astype(np.float64) + 0.5) / 2.0**53


def laplace_from_uniform(u) -> np.ndarray:
    """Inverse CDF of the standard Laplace distribution."""
    u = np.asarray(u, dtype=np.float64)
    d = u - 0.5
    return -np.sign(d) * np.log1p(-2.0 * np.abs(d))


def sample_unit_laplace(n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(n, (int, np.integer)):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
    elif any(d < 1 for d in n):
        raise ValueError(f"all dimensions must be >= 1, got {n}")
    return laplace_from_uniform(_open_uniform(rng, n))


def scale_noise(t, b) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    scales = b.scales if isinstance(b, PerFeatureBudget) else np.asarray(b, dtype=np.float64)
    if scales.ndim and t.shape[-1] != scales.shape[-1]:
        raise ValueError(f"noise length {t.shape[-1]} does not match {scales.shape[-1]} scales")
    return t * scales


def sample_mask(w, rng: np.random.Generator, size=None) -> np.ndarray:
    """Bernoulli keep-mask: 0 with probability ``w_i``, else 1.

    ``size`` prepends batch dimensions, e.g. ``size=(n,)`` gives ``n`` masks.
    """
    w = w.rates if isinstance(w, DropoutRates) else np.asarray(w, dtype=np.float64)
    shape = w.shape if size is None else tuple(np.atleast_1d(size)) + w.shape
    return (rng.random(shape) >= w).astype(np.float64)


def normalize(f, spec: NormalizationSpec) -> FeatureVector:
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("features must be finite")
    if f.shape[-1] != spec.lo.shape[-1]:
        raise ValueError(f"feature length {f.shape[-1]} does not match bounds length {spec.lo.shape[-1]}")
    return FeatureVector(np.clip((f - spec.lo) / (spec.hi - spec.lo), 0.0, 1.0), normalized=True)


def _require_normalized(f) -> np.ndarray:
    if not isinstance(f, FeatureVector) or not f.normalized:
        raise ValueError("release needs a normalized FeatureVector; sensitivity is undefined otherwise")
    return f.values


def release(f: FeatureVector, w, eps, rng: np.random.Generator) -> np.ndarray:
    """One private release ``f * m + b * t`` with a fresh mask and noise draw.

    A 2-D ``f`` releases each row independently.
    """
    values = _require_normalized(f)
    budget = allocate_budget(w, eps)
    mask = sample_mask(w, rng, size=values.shape[:-1] or None)
    noise = scale_noise(sample_unit_laplace(values.shape, rng), budget)
    return values * mask + noise


def baseline_total_budget(cfg: BaselineConfig) -> PrivacyBudget:
    """Total budget ``ln[(1 - mu) e^eps' + mu]`` of the uniform scheme."""
    return PrivacyBudget(np.log1p((1.0 - cfg.mu) * np.expm1(cfg.eps_prime_uniform)))


def baseline_release(f: FeatureVector, cfg: BaselineConfig, rng: np.random.Generator) -> np.ndarray:
    values = _require_normalized(f)
    mask = (rng.random(values.shape) >= cfg.mu).astype(np.float64)
    noise = sample_unit_laplace(values.shape, rng) / cfg.eps_prime_uniform
    return values * mask + noise


def matched_baseline(mu: float, eps) -> BaselineConfig:
    """Uniform-scheme config whose total budget equals ``eps``."""
    eps_prime = float(allocate_budget(np.array([mu]), eps).eps_prime[0])
    return BaselineConfig(mu=mu, eps_prime_uniform=eps_prime)
