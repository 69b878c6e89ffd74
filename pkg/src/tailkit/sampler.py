"""Repeat-factor class-aware sampling.

Oversamples images containing rare positive labels: class repeat factor
r(c) = max(1, sqrt(T / f_c)), sample repeat factor r_i = min(r_max,
max over positive classes of r(c)).  Fractional repeats materialize by
stochastic rounding per epoch (floor plus a Bernoulli extra), so the
expected multiplicity of sample i equals r_i exactly.

Epoch construction consumes the portable SplitMix64 stream in a documented
order: one ``next_float`` per sample index 0..N-1 to decide the Bernoulli
extra, then one Fisher-Yates shuffle of the expanded index list.  The
stream for epoch e under seed s starts at state (s + e * GOLDEN_GAMMA)
mod 2^64, so plans replicate across implementations.
"""

from dataclasses import dataclass

import numpy as np

from .data import LabelMatrix
from .rng import GOLDEN_GAMMA, MASK64, SplitMix64


@dataclass
class SamplerConfig:
    threshold: float = 0.001
    r_max: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.r_max < 1.0:
            raise ValueError("r_max must be >= 1")


@dataclass
class EpochPlan:
    indices: np.ndarray
    epoch_len: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.epoch_len != self.indices.size:
            raise ValueError("epoch_len does not match index count")


def class_repeat_factors(frequencies, cfg: SamplerConfig) -> np.ndarray:
    """Uncapped per-class repeat factors; zero-frequency classes stay at 1."""
    f = np.asarray(frequencies, dtype=np.float64)
    if (f < 0).any() or (f > 1).any():
        raise ValueError("frequencies must lie in [0, 1]")
    r = np.ones_like(f)
    nonzero = f > 0
    r[nonzero] = np.maximum(1.0, np.sqrt(cfg.threshold / f[nonzero]))
    return r


def zero_frequency_classes(frequencies) -> list:
    """Class indices that cannot influence sampling (no positives)."""
    f = np.asarray(frequencies, dtype=np.float64)
    return [int(i) for i in np.nonzero(f == 0)[0]]


def sample_repeat_factors(labels: LabelMatrix, r, cfg: SamplerConfig) -> np.ndarray:
    """Per-sample repeat factor from its rarest positive class, capped at r_max."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (labels.n_classes,):
        raise ValueError("class repeat factors do not match label classes")
    y = labels.values.astype(bool)
    out = np.ones(labels.n_samples, dtype=np.float64)
    for i in range(labels.n_samples):
        positive = r[y[i]]
        if positive.size:
            out[i] = min(cfg.r_max, float(positive.max()))
    return out


def build_epoch(repeat, cfg: SamplerConfig, epoch: int = 0) -> EpochPlan:
    """Materialize one epoch: floor(r_i) copies plus a seeded Bernoulli extra, shuffled."""
    repeat = np.asarray(repeat, dtype=np.float64)
    if (repeat < 1.0).any():
        raise ValueError("repeat factors must be >= 1")
    rng = SplitMix64((cfg.seed + epoch * GOLDEN_GAMMA) & MASK64)
    indices = []
    for i, r_i in enumerate(repeat):
        copies = int(r_i)
        if rng.next_float() < r_i - copies:
            copies += 1
        indices.extend([i] * copies)
    rng.shuffle(indices)
    return EpochPlan(indices=np.asarray(indices, dtype=np.int64), epoch_len=len(indices))
