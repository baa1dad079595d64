"""ADAM optimizer and the triangular cyclical learning-rate policy."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")


def adam_step(params, state, lr):
    """Apply one bias-corrected ADAM update in place.

    ``params`` maps names to leaf tensors; a missing gradient counts as zero.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass(frozen=True)
class CyclicalSchedule:
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    step_size: int = 2000

    def __post_init__(self):
        if not 0 < self.base_lr < self.max_lr:
            raise ValueError("need 0 < base_lr < max_lr")
        if self.step_size < 1:
            raise ValueError("step_size must be a positive number of batches")


def cyclical_lr(batch_counter, schedule):
    if batch_counter < 0:
        raise ValueError("batch_counter must be >= 0")
    cycle = np.floor(batch_counter / (2 * schedule.step_size))
    x = abs(batch_counter / schedule.step_size - (2 * cycle + 1))
    return schedule.base_lr + (schedule.max_lr - schedule.base_lr) * max(0.0, 1.0 - x)
