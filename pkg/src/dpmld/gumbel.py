"""Gumbel-Max and Gumbel-Softmax sampling of the per-feature (drop, keep) category."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .privacy import _open_uniform


@dataclass(frozen=True)
class GumbelConfig:
    tau_start: float = 1.0
    decay: float = 0.95
    tau_floor: float = 0.1

    def __post_init__(self):
        if self.tau_floor <= 0:
            raise ValueError(f"tau_floor must be positive, got {self.tau_floor}")
        if self.tau_start < self.tau_floor:
            raise ValueError("tau_start must not be below tau_floor")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must lie in (0, 1], got {self.decay}")


def anneal(cfg: GumbelConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(cfg.tau_floor, cfg.tau_start * cfg.decay**epoch)


def gumbel_from_uniform(u) -> np.ndarray:
    return -np.log(-np.log(np.asarray(u, dtype=np.float64)))


def sample_gumbel(n, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel draws; ``n`` may be a count or a shape."""
    if np.any(np.asarray(n) < 1):
        raise ValueError(f"n must be >= 1, got {n}")
    return gumbel_from_uniform(_open_uniform(rng, n))


def _perturbed(pi, g) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return g + np.log(pi)


def sample_hard(pi, rng: np.random.Generator | None = None, g=None) -> np.ndarray:
    """One-hot of ``argmax(g + log pi)`` over the last axis (ties go to the lower index)."""
    pi = np.asarray(pi, dtype=np.float64)
    if g is None:
        g = sample_gumbel(pi.shape, rng)
    idx = np.argmax(_perturbed(pi, g), axis=-1)
    return np.eye(pi.shape[-1])[idx]


def sample_soft(pi, tau: float, rng: np.random.Generator | None = None, g=None) -> np.ndarray:
    """Gumbel-Softmax relaxation ``softmax((g + log pi) / tau)`` over the last axis."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    pi = np.asarray(pi, dtype=np.float64)
    if g is None:
        g = sample_gumbel(pi.shape, rng)
    z = _perturbed(pi, g) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mask_from_categorical(v) -> np.ndarray | float:
    """Keep weight: the second (keep) component of a (drop, keep) pair."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 2:
        raise ValueError(f"expected (drop, keep) pairs, got trailing dimension {v.shape[-1]}")
    m = v[..., 1]
    return float(m) if m.ndim == 0 else m


def soft_keep_mask(w: ad.Tensor, g: np.ndarray, tau: float) -> ad.Tensor:
    """Relaxed keep mask as a differentiable function of the drop rates.

    ``w`` has shape ``[..., k]`` and ``g`` shape ``[..., k, 2]`` (drop, keep).
    """
    if g.shape != w.shape + (2,):
        raise ad.ShapeError(f"gumbel draws {g.shape} do not match rates {w.shape} + (2,)")
    shape = w.shape + (1,)
    log_drop = ad.reshape(ad.log(w), shape)
    log_keep = ad.reshape(ad.log(1.0 - w), shape)
    logits = (ad.concat([log_drop, log_keep], axis=-1) + ad.Tensor(g)) * (1.0 / tau)
    v = ad.softmax(logits, axis=-1)
    return v[..., 1]
