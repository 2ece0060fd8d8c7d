"""Exponentially-tailed classification losses, evaluated in log-domain.

The total loss is sum_i exp(-Phi(q_i)) with q_i = y_i f(x_i; theta) the
output margins. Trajectories of interest push individual terms far below
double-precision underflow, so everything trajectory-level (total loss,
per-example weights, multipliers) is carried as logarithms:

  * ``exponential``  Phi(u) = u, so l(u) = exp(-u)
  * ``logistic``     Phi(u) = -log(log(1 + exp(-u))), so l(u) = log(1+exp(-u))

``log_loss`` is exact in log-domain even when every term underflows;
``loss_subgradient_scaled`` factors the gradient as exp(log_scale) * g_hat
with g_hat well-conditioned, which is what the training loop and the KKT
diagnostics consume.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelSpec, forward_batch, weighted_subgradient_sum
from .params import ParamVector

EXPONENTIAL = "exponential"
LOGISTIC = "logistic"

# Above this margin the logistic Phi and its inverse switch to the
# asymptotic expansion; below, the direct formula is exact and safe.
_LOGISTIC_ASYMPTOTIC = 30.0


@dataclass(frozen=True)
class LossSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, LOGISTIC):
            raise ValueError(f"unknown loss kind {self.kind!r}")

    @classmethod
    def exponential(cls) -> "LossSpec":
        return cls(EXPONENTIAL)

    @classmethod
    def logistic(cls) -> "LossSpec":
        return cls(LOGISTIC)


def output_margins(model: ModelSpec, theta: ParamVector, data) -> np.ndarray:
    """q_i = y_i f(x_i; theta) over the dataset (its ``X`` and ``y``)."""
    return np.asarray(data.y, dtype=np.float64) * forward_batch(model, theta, data.X)


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow at either end
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _log_l_logistic(q: np.ndarray) -> np.ndarray:
    """log log(1 + e^{-q}), exact even when e^{-q} underflows."""
    q = np.asarray(q, dtype=np.float64)
    out = np.empty_like(q)
    small = q <= _LOGISTIC_ASYMPTOTIC
    if small.any():
        out[small] = np.log(_softplus(-q[small]))
    big = ~small
    if big.any():
        z = np.exp(-q[big])
        # log(log1p(z)) = -q + log(1 - z/2 + z^2/3 - ...)
        out[big] = -q[big] + np.log1p(-z / 2.0 + z * z / 3.0)
    return out


def log_terms(loss: LossSpec, q: np.ndarray) -> np.ndarray:
    """Per-example log losses: log l(q_i) = -Phi(q_i)."""
    q = np.asarray(q, dtype=np.float64)
    if loss.kind == EXPONENTIAL:
        return -q
    return _log_l_logistic(q)


def log_loss(loss: LossSpec, q: np.ndarray) -> float:
    """log of the total loss via log-sum-exp with max subtraction."""
    t = log_terms(loss, q)
    m = float(np.max(t))
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.exp(t - m).sum()))


def phi(loss: LossSpec, u):
    """Phi evaluated elementwise."""
    u = np.asarray(u, dtype=np.float64)
    val = u if loss.kind == EXPONENTIAL else -_log_l_logistic(u)
    return float(val) if val.ndim == 0 else val


def log_weights(loss: LossSpec, q: np.ndarray) -> np.ndarray:
    """log of the per-example gradient weights, -Phi(q_i) + log Phi'(q_i).

    For the exponential loss this is -q_i; for the logistic loss the
    product collapses to log sigmoid(-q_i) = -softplus(q_i).
    """
    q = np.asarray(q, dtype=np.float64)
    if loss.kind == EXPONENTIAL:
        return -q
    return -_softplus(q)


def phi_prime(loss: LossSpec, u):
    """Phi' > 0 elementwise (gradient weight divided by the loss term)."""
    u = np.asarray(u, dtype=np.float64)
    if loss.kind == EXPONENTIAL:
        out = np.ones_like(u)
    else:
        out = np.exp(log_weights(loss, u) - _log_l_logistic(u))
    return float(out) if out.ndim == 0 else out


def loss_subgradient_scaled(loss: LossSpec, model: ModelSpec, theta: ParamVector,
                            data) -> tuple[ParamVector, float, np.ndarray]:
    """The loss subgradient factored as exp(log_scale) * g_hat.

    g_hat = -sum_i exp(logw_i - log_scale) y_i h_i with log_scale the
    largest log-weight, so its entries stay in a representable range no
    matter how small the loss is. Returns (g_hat, log_scale, logw).
    """
    q = output_margins(model, theta, data)
    logw = log_weights(loss, q)
    scale = float(np.max(logw))
    y = np.asarray(data.y, dtype=np.float64)
    coeffs = -y * np.exp(logw - scale)
    g_hat = weighted_subgradient_sum(model, theta, data.X, coeffs)
    return g_hat, scale, logw


def loss_subgradient(loss: LossSpec, model: ModelSpec, theta: ParamVector,
                     data) -> tuple[ParamVector, np.ndarray]:
    """The loss subgradient under the fixed network selection, plus the
    per-example log-weights.

    The returned gradient is the literal value -sum_i exp(logw_i) y_i h_i;
    at extreme margins its magnitude can underflow, in which case the
    scaled form from ``loss_subgradient_scaled`` preserves the direction.
    """
    g_hat, scale, logw = loss_subgradient_scaled(loss, model, theta, data)
    return g_hat.scaled(float(np.exp(scale))), logw


def phi_inverse(loss: LossSpec, v: float) -> float:
    """Phi^{-1}(v); for the logistic loss, -log(exp(exp(-v)) - 1) with an
    asymptotic branch above v = 30 where the direct form cancels."""
    v = float(v)
    if np.isnan(v):
        raise ValueError("phi_inverse: v is NaN")
    if loss.kind == EXPONENTIAL:
        return v
    if v > _LOGISTIC_ASYMPTOTIC:
        z = np.exp(-v)
        return v - float(np.log1p(z / 2.0 + z * z / 6.0 + z ** 3 / 24.0))
    if v < -709.0:
        raise ValueError(f"phi_inverse: v = {v} below the representable range")
    w = np.exp(-v)
    if w > 700.0:
        return -float(w)
    return -float(np.log(np.expm1(w)))


def separation_threshold(loss: LossSpec) -> float:
    """log of the zero-margin loss level, log l(0); loss below it implies
    every training point is classified correctly."""
    if loss.kind == EXPONENTIAL:
        return 0.0
    return float(np.log(np.log(2.0)))
