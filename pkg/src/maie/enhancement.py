"""Importance enhancement: running-stats normalization and softmax modality weights.

Each modality keeps a running mean/variance, refreshed once per rollout
from the rollout's features (population variance, then a soft update with
decay xi). Features are normalized against those stats, and a per-dimension
softmax over |normalized| across modalities yields the importance
coefficients lambda. The fused state concatenates lambda-weighted raw
features; lambda, mu, and sigma are constants to the backward pass, so the
adjoint reaching a modality is exactly lambda times the adjoint of its
weighted slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value


@dataclass
class ModalityStats:
    """Running mean and variance of one modality's features."""

    mu: np.ndarray
    var: np.ndarray
    xi: float = 0.05
    eps: float = 1e-5

    @classmethod
    def create(cls, dim: int, xi: float = 0.05, eps: float = 1e-5) -> "ModalityStats":
        return cls(mu=np.zeros(dim), var=np.ones(dim), xi=xi, eps=eps)

    def update(self, batch: np.ndarray) -> "ModalityStats":
        """Blend batch statistics into the running values (training only)."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[0] < 1:
            raise ValueError("stats update needs a nonempty (k, L) batch")
        mu_b = batch.mean(axis=0)
        var_b = ((batch - mu_b) ** 2).mean(axis=0)  # population variance
        self.mu = self.xi * mu_b + (1.0 - self.xi) * self.mu
        self.var = self.xi * var_b + (1.0 - self.xi) * self.var
        return self

    def copy(self) -> "ModalityStats":
        return ModalityStats(self.mu.copy(), self.var.copy(), self.xi, self.eps)

    def scale(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.var + self.eps)

    def normalize_array(self, f: np.ndarray) -> np.ndarray:
        """Plain-numpy normalization (graph-free path while acting)."""
        return (f - self.mu) * self.scale()


def update_stats(batch_features, stats: ModalityStats) -> ModalityStats:
    return stats.update(np.asarray(batch_features))


def normalize(f: Value, stats: ModalityStats) -> Value:
    """(f - mu)/sqrt(var + eps) with mu, sigma held constant in the graph.

    Accepts a single (L,) feature or a (T, L) stack of them.
    """
    mu, sc = stats.mu, stats.scale()
    if f.data.ndim == 2:
        t = f.data.shape[0]
        mu = np.broadcast_to(mu, (t, mu.shape[0]))
        sc = np.broadcast_to(sc, (t, sc.shape[0]))
    return (f - Value(mu)) * Value(sc)


def importance(normalized: list) -> list:
    """Per-dimension softmax of |normalized| across modalities.

    Returns plain arrays: the coefficients are constants to any backward
    pass (the RL gradient treats lambda as a fixed multiplier). Inputs may
    be Values or arrays, each (L,) or (T, L).
    """
    if not normalized:
        raise ValueError("importance needs at least one modality")
    arrs = [np.asarray(f.data if isinstance(f, Value) else f, dtype=np.float64) for f in normalized]
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise ValueError(f"importance: feature shapes differ, {a.shape} vs {shape}")
    stack = np.abs(np.stack(arrs))
    stack -= stack.max(axis=0, keepdims=True)
    e = np.exp(stack)
    lam = e / e.sum(axis=0, keepdims=True)
    return [lam[i] for i in range(len(arrs))]


def fuse(raw: list, lambdas: list) -> Value:
    """Concatenate lambda-weighted features into the fused state.

    The adjoint arriving at raw modality m is lambda^m (elementwise) times
    the adjoint of its slice of the fused vector.
    """
    if len(raw) != len(lambdas):
        raise ValueError("fuse: one lambda per modality required")
    weighted = [f * Value(np.asarray(lam)) for f, lam in zip(raw, lambdas)]
    axis = raw[0].data.ndim - 1
    return ad.concat(weighted, axis=axis)


def fixed_weight_fuse(raw: list, weights) -> Value:
    """Constant scalar weights per modality (fixed-weights baseline)."""
    if len(raw) != len(weights):
        raise ValueError("fixed_weight_fuse: one weight per modality required")
    for w in weights:
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"fixed weight {w} outside [0, 1]")
    weighted = [f * float(w) for f, w in zip(raw, weights)]
    axis = raw[0].data.ndim - 1
    return ad.concat(weighted, axis=axis)


@dataclass
class FeatureBundle:
    """Everything derived from one step's per-modality features."""

    raw: list
    normalized: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    weighted: list = field(default_factory=list)
    fused: Value = None


def enhance(features: list, stats: list) -> FeatureBundle:
    """Full normalize -> importance -> fuse path for one step or a stack."""
    normalized = [normalize(f, s) for f, s in zip(features, stats)]
    lam = importance(normalized)
    weighted = [f * Value(l) for f, l in zip(features, lam)]
    axis = features[0].data.ndim - 1
    fused = ad.concat(weighted, axis=axis)
    return FeatureBundle(raw=features, normalized=normalized, lam=lam, weighted=weighted, fused=fused)
