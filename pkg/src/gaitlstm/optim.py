"""Loss assembly (cross-entropy plus L2 penalty) and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidConfigError, ShapeError

PROB_FLOOR = 1e-12


def is_weight(name: str) -> bool:
    """Weight matrices are named ``w_*``; biases (``b_*``) are exempt from L2."""
    return name.startswith("w_")


def cross_entropy(true_dist, pred_dist) -> float:
    """``-sum p log q`` with ``q`` clamped to ``[1e-12, 1]``."""
    p = np.asarray(true_dist, dtype=np.float64)
    q = np.asarray(pred_dist, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"cross_entropy: true {p.shape} vs predicted {q.shape}")
    return float(-np.sum(p * np.log(np.clip(q, PROB_FLOOR, 1.0))))


def l2_penalty(weights: Iterable[np.ndarray], lam: float) -> float:
    if lam < 0:
        raise InvalidConfigError(f"L2 strength must be >= 0, got {lam}")
    if lam == 0:
        return 0.0
    return float(lam * sum(float(np.sum(w * w)) for w in weights))


def weight_arrays(params: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    return [a for k, a in params.items() if is_weight(k)]


@dataclass(frozen=True)
class LossBreakdown:
    data_loss: float
    reg_loss: float

    @property
    def total(self) -> float:
        return self.data_loss + self.reg_loss


def total_loss(probs, label: int, params: Mapping[str, np.ndarray], lam: float) -> LossBreakdown:
    """Cross-entropy of one prediction against an integer label, plus the L2 term."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.zeros_like(probs)
    onehot[label] = 1.0
    return LossBreakdown(cross_entropy(onehot, probs), l2_penalty(weight_arrays(params), lam))


def l2_gradients(params: Mapping[str, np.ndarray], lam: float) -> dict[str, np.ndarray]:
    """Gradient of the penalty: ``2*lam*w`` for weights, zero for biases."""
    return {
        k: (2.0 * lam) * a if is_weight(k) else np.zeros_like(a) for k, a in params.items()
    }


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidConfigError(f"learning rate must be >= 0, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.epsilon <= 0:
            raise InvalidConfigError(f"epsilon must be > 0, got {self.epsilon}")

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], lr: float, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        st.m = {k: np.zeros_like(a) for k, a in params.items()}
        st.v = {k: np.zeros_like(a) for k, a in params.items()}
        return st


def adam_update(state: AdamState, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]):
    """Apply one bias-corrected Adam step to ``params`` in place.

    Returns ``(params, state)``. Not thread-safe: callers serialize updates.
    """
    for k, a in params.items():
        if k not in grads:
            raise ShapeError(f"adam_update: no gradient for parameter {k!r}")
        if grads[k].shape != a.shape:
            raise ShapeError(f"adam_update: {k!r} param {a.shape} vs grad {grads[k].shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(a)
            state.v[k] = np.zeros_like(a)
        elif state.m[k].shape != a.shape:
            raise ShapeError(f"adam_update: {k!r} param {a.shape} vs moment {state.m[k].shape}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for k, a in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        a -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    return params, state
