"""Learning-rate and momentum schedules: one-cycle and reduce-on-plateau."""

import math
from dataclasses import dataclass

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class OneCycle:
    max_lr: float
    total_steps: int
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    pct_up: float = 0.3
    max_momentum: float = 0.95
    min_momentum: float = 0.85
    cycle_momentum: bool = True
    base_momentum: float = 0.9  # used when cycle_momentum is off

    def __post_init__(self):
        if not self.max_lr > 0:
            raise ConfigError("max_lr must be > 0")
        if not 0 < self.pct_up < 1:
            raise ConfigError("pct_up must lie in (0, 1)")
        if not (self.div_factor > 1 and self.final_div_factor > 1):
            raise ConfigError("div_factor and final_div_factor must be > 1")
        if self.total_steps < 2:
            raise ConfigError("one-cycle needs at least 2 steps")

    @property
    def initial_lr(self):
        return self.max_lr / self.div_factor

    @property
    def min_lr(self):
        return self.initial_lr / self.final_div_factor

    @property
    def up_steps(self):
        """Index of the peak step."""
        return min(max(int(round(self.pct_up * self.total_steps)), 1), self.total_steps - 1)


def _cos_interp(start, end, frac):
    # exact at both ends
    if frac >= 1.0:
        return end
    return start + (end - start) * 0.5 * (1.0 - math.cos(math.pi * frac))


def _phase(spec, step):
    if not 0 <= step <= spec.total_steps:
        raise InputError(f"step {step} outside [0, {spec.total_steps}]")
    up = spec.up_steps
    if step <= up:
        return True, step / up
    return False, (step - up) / (spec.total_steps - up)


def one_cycle_lr(spec, step):
    """Cosine rise from max_lr/div_factor to max_lr, then cosine fall to the final floor."""
    rising, frac = _phase(spec, step)
    if rising:
        return _cos_interp(spec.initial_lr, spec.max_lr, frac)
    return _cos_interp(spec.max_lr, spec.min_lr, frac)


def one_cycle_momentum(spec, step):
    """Mirror image of the learning rate between max_momentum and min_momentum."""
    rising, frac = _phase(spec, step)
    if not spec.cycle_momentum:
        return spec.base_momentum
    if rising:
        return _cos_interp(spec.max_momentum, spec.min_momentum, frac)
    return _cos_interp(spec.min_momentum, spec.max_momentum, frac)


@dataclass(frozen=True)
class Plateau:
    initial_lr: float = 0.05
    decay_factor: float = 0.1
    patience: int = 2
    min_lr: float = 5e-5
    threshold: float = 1e-4
    momentum: float = 0.9

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ConfigError("initial_lr must be > 0")
        if not 0 < self.decay_factor < 1:
            raise ConfigError("decay_factor must lie in (0, 1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class PlateauState:
    lr: float
    best: float = math.inf
    bad_epochs: int = 0
    decays: int = 0

    @classmethod
    def start(cls, spec):
        return cls(spec.initial_lr)


def plateau_lr(spec, state, val_loss):
    """Feed one epoch's validation loss; returns the learning rate for the next epoch.

    A loss counts as an improvement when it beats the best so far by more
    than ``threshold`` relative. After ``patience`` epochs in a row without
    one, the rate is multiplied by ``decay_factor`` (floored at ``min_lr``).
    """
    if val_loss < state.best * (1.0 - spec.threshold):
        state.best = val_loss
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    if state.bad_epochs >= spec.patience:
        new = state.lr * spec.decay_factor
        if new <= spec.min_lr * (1.0 + 1e-9):
            new = spec.min_lr
        if new < state.lr * (1.0 - 1e-9):
            state.decays += 1
        state.lr = new
        state.bad_epochs = 0
    return state.lr
