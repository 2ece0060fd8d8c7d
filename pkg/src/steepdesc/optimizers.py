"""Discrete-time update rules.

The steepest-descent family (raw and normalized) under any supported norm,
Adam, Shampoo, and an at-separation switching rule. All steps are pure:
they return a new parameter vector (and, where stateful, a new state).
Frozen blocks never move.

Special cases worth knowing:
  * Adam with beta1 = beta2 = eps = 0 is exactly the normalized sign step
    (normalized steepest descent under the l-infinity norm), with the
    0/0 -> 0 convention matching sign(0) = 0.
  * Shampoo's first step from zero accumulators equals -eta * U V^T on a
    full-rank gradient block, the normalized spectral steepest direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import NonFiniteError
from .norms import NormSpec, dual_norm_value, unit_steepest_direction
from .params import ParamVector

_T_CAP = 2**63 - 1


def _exp_saturating(x: float) -> float:
    """exp that overflows to inf instead of raising; the caller's
    finiteness checks turn the overflow into a divergence diagnostic."""
    with np.errstate(over="ignore"):
        return float(np.exp(x))


@dataclass(frozen=True)
class SteepestMethod:
    norm: NormSpec
    normalized: bool = False


@dataclass(frozen=True)
class AdamMethod:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.eps < 0.0:
            raise ValueError("Adam eps must be >= 0")


@dataclass(frozen=True)
class ShampooMethod:
    eps_reg: float = 0.0

    def __post_init__(self):
        if self.eps_reg < 0.0:
            raise ValueError("Shampoo eps_reg must be >= 0")


Method = Union[SteepestMethod, AdamMethod, ShampooMethod]


@dataclass(frozen=True)
class OptimizerSpec:
    method: Method
    step_size: float
    schedule: str = "constant"
    switch_to: Optional["OptimizerSpec"] = None  # applied at first separation

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.schedule != "constant":
            raise ValueError("only the constant step-size schedule is supported")


@dataclass
class OptimizerState:
    """Per-run accumulators; create fresh per run and after a switch."""

    t: int = 0
    adam_m: Optional[ParamVector] = None
    adam_v: Optional[ParamVector] = None
    shampoo_left: dict = field(default_factory=dict)
    shampoo_right: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls) -> "OptimizerState":
        return cls()


def step_steepest(theta: ParamVector, g: ParamVector, spec: OptimizerSpec,
                  eta: float, log_scale: float = 0.0) -> ParamVector:
    """One steepest step: theta + eta * delta, delta from the method norm.

    The normalized variant rescales delta to unit norm (a zero gradient
    moves nothing). ``log_scale`` lets callers pass gradients factored as
    exp(log_scale) * g without materializing the product; it only affects
    the raw variant, since the normalized direction is scale-free.
    """
    method = spec.method
    if not isinstance(method, SteepestMethod):
        raise TypeError("step_steepest requires a steepest-descent method")
    g_tr = g.trainable_view()
    if not g_tr.allfinite():
        raise NonFiniteError("step_steepest: gradient has non-finite entries")
    dual = dual_norm_value(method.norm, g_tr)
    if dual == 0.0:
        return theta
    unit_tr = unit_steepest_direction(method.norm, g_tr)
    factor = eta if method.normalized else eta * dual * _exp_saturating(log_scale)
    # an overflowed factor deliberately propagates inf/nan so the caller's
    # divergence check fires
    with np.errstate(invalid="ignore", over="ignore"):
        return theta + theta.embed_trainable(unit_tr).scaled(factor)


def step_adam(theta: ParamVector, g: ParamVector, state: OptimizerState,
              spec: OptimizerSpec, eta: float) -> tuple[ParamVector, OptimizerState]:
    """Adam with bias correction; elementwise 0/0 resolves to no movement."""
    method = spec.method
    if not isinstance(method, AdamMethod):
        raise TypeError("step_adam requires an Adam method")
    m_prev = state.adam_m if state.adam_m is not None else g.zeros_like()
    v_prev = state.adam_v if state.adam_v is not None else g.zeros_like()
    t = min(state.t + 1, _T_CAP)
    b1, b2, eps = method.beta1, method.beta2, method.eps
    new_m, new_v, deltas = [], [], []
    for gb, mb, vb in zip(g.blocks, m_prev.blocks, v_prev.blocks):
        m = b1 * mb + (1.0 - b1) * gb
        v = b2 * vb + (1.0 - b2) * gb * gb
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        denom = np.sqrt(v_hat) + eps
        upd = np.divide(m_hat, denom, out=np.zeros_like(m_hat), where=denom > 0.0)
        new_m.append(m)
        new_v.append(v)
        deltas.append(-eta * upd)
    delta = ParamVector(tuple(deltas), theta.trainable)
    delta = theta.embed_trainable(delta.trainable_view())
    new_state = OptimizerState(t=t,
                               adam_m=ParamVector(tuple(new_m), g.trainable),
                               adam_v=ParamVector(tuple(new_v), g.trainable))
    return theta + delta, new_state


def _inverse_fourth_root(mat: np.ndarray) -> np.ndarray:
    """Pseudo-inverse fourth root of a symmetric PSD matrix.

    Eigenvalues at or below 1e-12 times the largest are treated as zero
    (pseudo-inverted to zero).
    """
    sym = 0.5 * (mat + mat.T)
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NonFiniteError(f"shampoo: eigendecomposition failed: {exc}") from exc
    vmax = float(vals.max(initial=0.0))
    inv = np.where(vals > 1e-12 * vmax, vals, np.inf) ** -0.25 if vmax > 0.0 \
        else np.zeros_like(vals)
    inv = np.where(np.isfinite(inv), inv, 0.0)
    return (vecs * inv) @ vecs.T


def step_shampoo(theta: ParamVector, g: ParamVector, state: OptimizerState,
                 spec: OptimizerSpec, eta: float) -> tuple[ParamVector, OptimizerState]:
    """Per-block preconditioned step W -= eta * L^{-1/4} G R^{-1/4}.

    Accumulators grow by G G^T and G^T G each step (plus eps_reg * I on
    first use); vector blocks are treated as one-column matrices. Frozen
    blocks are skipped entirely.
    """
    method = spec.method
    if not isinstance(method, ShampooMethod):
        raise TypeError("step_shampoo requires a Shampoo method")
    new_left = dict(state.shampoo_left)
    new_right = dict(state.shampoo_right)
    new_blocks = []
    for i, (tb, gb, tr) in enumerate(zip(theta.blocks, g.blocks, theta.trainable)):
        if not tr:
            new_blocks.append(tb.copy())
            continue
        gm = gb.reshape(-1, 1) if gb.ndim == 1 else gb
        rows, cols = gm.shape
        left = new_left.get(i)
        right = new_right.get(i)
        if left is None:
            left = method.eps_reg * np.eye(rows)
            right = method.eps_reg * np.eye(cols)
        left = left + gm @ gm.T
        right = right + gm.T @ gm
        new_left[i] = left
        new_right[i] = right
        upd = _inverse_fourth_root(left) @ gm @ _inverse_fourth_root(right)
        new_blocks.append(tb - eta * upd.reshape(tb.shape))
    new_state = OptimizerState(t=min(state.t + 1, _T_CAP),
                               shampoo_left=new_left, shampoo_right=new_right)
    return ParamVector(tuple(new_blocks), theta.trainable), new_state


def apply_switch(spec: OptimizerSpec, state: OptimizerState,
                 separated: bool) -> tuple[OptimizerSpec, OptimizerState]:
    """Resolve the at-separation switch rule.

    At the first call with ``separated`` true, returns the switched-to
    spec with fresh accumulators; afterwards the returned spec has no rule
    left, so further calls are no-ops. Without a rule, (spec, state) pass
    through unchanged.
    """
    if spec.switch_to is not None and separated:
        return spec.switch_to, OptimizerState.fresh()
    return spec, state


def take_step(theta: ParamVector, g: ParamVector, state: OptimizerState,
              spec: OptimizerSpec, log_scale: float = 0.0
              ) -> tuple[ParamVector, OptimizerState]:
    """Dispatch one update under ``spec`` at its configured step size."""
    eta = spec.step_size
    if isinstance(spec.method, SteepestMethod):
        new_theta = step_steepest(theta, g, spec, eta, log_scale=log_scale)
        state = OptimizerState(t=min(state.t + 1, _T_CAP))
        return new_theta, state
    scaled = g.scaled(_exp_saturating(log_scale)) if log_scale != 0.0 else g
    if isinstance(spec.method, AdamMethod):
        return step_adam(theta, scaled, state, spec, eta)
    return step_shampoo(theta, scaled, state, spec, eta)
