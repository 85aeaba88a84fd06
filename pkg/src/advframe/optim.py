"""SGD update with an adversarial term, and the sigmoid ramp for its weight."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .autodiff import Parameters


class TrainingAborted(FloatingPointError):
    pass


def lambda_schedule(p: float) -> float:
    """Adversarial weight at training progress ``p``: ``2 / (1 + exp(-10 p)) - 1``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {p}")
    return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0


def progress(epoch: int, n_epochs: int) -> float:
    """Linear progress: 0 at the first epoch, 1 at the last."""
    if n_epochs <= 1:
        return 0.0
    return epoch / (n_epochs - 1)


@dataclass
class TrainingState:
    params: Parameters
    learning_rate: float
    progress: float = 0.0
    lam: float = 0.0
    epoch: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class GradientSet:
    """Frame-loss and adversarial-loss gradients, keyed like the parameters.

    ``grad_adv`` holds the plain gradient of the domain loss, i.e. without any
    reversal.  ``head`` names the parameters that sit after the reversal point
    (the domain classifier); they descend ``grad_adv`` directly.
    """
    grad_frame: dict[str, np.ndarray]
    grad_adv: dict[str, np.ndarray] = field(default_factory=dict)
    head: frozenset[str] = frozenset()


def _checked(grads: Mapping[str, np.ndarray], params: Parameters, which: str) -> dict[str, np.ndarray]:
    out = {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        elif g.shape != value.shape:
            raise ValueError(f"{which} gradient for {name!r} has shape {g.shape}, expected {value.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite {which} gradient for {name!r}")
        out[name] = g
    unknown = set(grads) - set(params)
    if unknown:
        raise ValueError(f"gradients for unknown parameters {sorted(unknown)}")
    return out


def sgd_step(state: TrainingState, grads: GradientSet) -> TrainingState:
    """``theta <- theta - mu * (g_frame - lambda * g_adv)`` for shared weights.

    Domain-head weights are updated with ``-mu * g_adv`` so the classifier keeps
    minimising its own loss.  The input state is never modified.
    """
    g_frame = _checked(grads.grad_frame, state.params, "frame")
    g_adv = _checked(grads.grad_adv, state.params, "adversarial")
    mu, lam = state.learning_rate, state.lam
    new = {}
    for name, theta in state.params.items():
        if name in grads.head:
            new[name] = theta - mu * (g_frame[name] + g_adv[name])
        else:
            new[name] = theta - mu * (g_frame[name] - lam * g_adv[name])
    return replace(state, params=new)


def _norm(arrays) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in arrays))


def clip_gradients(grads: GradientSet, lam: float, max_norm: float | None) -> GradientSet:
    """Rescale so the effective trunk step and the head step each have norm <= ``max_norm``.

    The trunk direction is ``g_frame - lam * g_adv``; scaling both parts by the
    same factor keeps the adversarial ratio intact, and clipping the head on
    its own keeps the trunk update independent of the head when ``lam`` is 0.
    """
    if max_norm is None:
        return grads
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    names = set(grads.grad_frame) | set(grads.grad_adv)

    def eff(name):
        gf = grads.grad_frame.get(name, 0.0)
        ga = grads.grad_adv.get(name, 0.0)
        return gf + ga if name in grads.head else gf - lam * ga

    scale = {}
    for group in (sorted(names - grads.head), sorted(names & grads.head)):
        n = _norm(np.asarray(eff(k)) for k in group)
        s = max_norm / n if n > max_norm else 1.0
        scale.update({k: s for k in group})
    return GradientSet({k: v * scale[k] for k, v in grads.grad_frame.items()},
                       {k: v * scale[k] for k, v in grads.grad_adv.items()}, grads.head)


def scale_head(grads: GradientSet, factor: float) -> GradientSet:
    """Multiply the domain-head gradients by ``factor`` (a per-group learning rate)."""
    return GradientSet({k: v * factor if k in grads.head else v for k, v in grads.grad_frame.items()},
                       {k: v * factor if k in grads.head else v for k, v in grads.grad_adv.items()}, grads.head)
