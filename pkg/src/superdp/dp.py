"""Gradient perturbation: per-sample L2 clipping, Gaussian noise, Poisson lots."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import PerSampleGrads


@dataclass(frozen=True)
class PrivacyParams:
    noise_multiplier: float
    clip_norm: float
    sample_rate: float
    target_delta: float = 1e-5

    def __post_init__(self):
        if not self.noise_multiplier > 0:
            raise ConfigError(f"noise_multiplier must be > 0, got {self.noise_multiplier}")
        if not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if not 0 < self.sample_rate <= 1:
            raise ConfigError(f"sample_rate must lie in (0, 1], got {self.sample_rate}")
        if not 0 < self.target_delta < 1:
            raise ConfigError(f"target_delta must lie in (0, 1), got {self.target_delta}")


@dataclass
class RngStreams:
    """Independent counter-based (Philox) streams for each source of randomness."""

    sampling: np.random.Generator
    dropout: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        s, d, n = np.random.SeedSequence(seed).spawn(3)
        return cls(*(np.random.Generator(np.random.Philox(x)) for x in (s, d, n)))


def noise_rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def clip_rows(grads, clip_norm):
    """Scale each row by min(1, C / ||row||); zero rows stay zero."""
    if not clip_norm > 0:
        raise ConfigError(f"clip_norm must be > 0, got {clip_norm}")
    rows = grads.rows if isinstance(grads, PerSampleGrads) else np.asarray(grads, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    factor = np.ones_like(norms)
    big = norms > clip_norm
    factor[big] = clip_norm / norms[big]
    return PerSampleGrads(rows * factor[:, None])


def noisy_aggregate(clipped, noise_multiplier, clip_norm, lot_size, rng):
    """(sum of rows + N(0, sigma^2 C^2 I)) / L, or ``None`` for an empty lot.

    Noise is drawn once per call from ``rng`` even when ``noise_multiplier`` is
    tiny, so the stream position depends only on the number of calls.
    """
    if lot_size == 0:
        return None
    rows = clipped.rows if isinstance(clipped, PerSampleGrads) else np.asarray(clipped, dtype=np.float64)
    total = rows.sum(axis=0)
    noise = rng.normal(0.0, noise_multiplier * clip_norm, size=total.shape)
    return (total + noise) / lot_size


def poisson_sample(n, q, rng):
    """Indices kept independently with probability ``q``, ascending."""
    if not 0 < q <= 1:
        raise ConfigError(f"sample rate must lie in (0, 1], got {q}")
    return np.flatnonzero(rng.random(n) < q)
