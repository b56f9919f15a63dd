"""Adam with per-layer base learning rates and effective-step queries.

Besides the standard bias-corrected update, the optimizer exposes the two
preconditioning summaries the diagnostics are built on:

  - ``effective_step``: the mean elementwise multiplier actually applied,
    eta / ((1 - beta1^t) * (sqrt(vhat) + eps));
  - ``agg_step``: the aggregate scale eta / (RMS(sqrt(vhat)) + eps), where
    RMS(sqrt(vhat)) = sqrt(mean(vhat)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, StateError
from .nn import ParamSet, zeros_like

GLOBAL_SCOPE = "global"


@dataclass
class AdamState:
    m: ParamSet
    v: ParamSet
    t: int
    beta1: float
    beta2: float
    eps: float
    eta: dict[str, float]
    initial_eta: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.initial_eta:
            self.initial_eta = dict(self.eta)


def init_adam(
    params: ParamSet,
    eta: float | dict[str, float] = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
        raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
    if not eps > 0.0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    ids = params.layer_ids()
    eta_map = {lid: float(eta) for lid in ids} if np.isscalar(eta) else dict(eta)
    if sorted(eta_map) != sorted(ids):
        raise ConfigError("per-layer learning-rate map does not match the layer ids")
    if any(not v > 0.0 for v in eta_map.values()):
        raise ConfigError("all per-layer learning rates must be > 0")
    return AdamState(zeros_like(params), zeros_like(params), 0, beta1, beta2, eps, eta_map)


def adam_step(state: AdamState, params: ParamSet, grads: ParamSet):
    """One bias-corrected Adam update, each layer with its own base LR.

    L2 decay is not applied here; weight decay enters through the loss
    gradient.  Mutates ``state`` and ``params`` in place and returns them.
    """
    for g in grads.layers:
        if not (np.all(np.isfinite(g.weights)) and np.all(np.isfinite(g.bias))):
            raise NumericError("non-finite gradient", layer_id=g.layer_id)
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for lay, m, v, g in zip(params.layers, state.m.layers, state.v.layers, grads.layers):
        eta = state.eta[lay.layer_id]
        for p_a, m_a, v_a, g_a in (
            (lay.weights, m.weights, v.weights, g.weights),
            (lay.bias, m.bias, v.bias, g.bias),
        ):
            m_a *= state.beta1
            m_a += (1.0 - state.beta1) * g_a
            v_a *= state.beta2
            v_a += (1.0 - state.beta2) * g_a**2
            m_hat = m_a / bc1
            v_hat = v_a / bc2
            p_a -= eta * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, params


def _scoped_layers(state: AdamState, scope: str):
    if scope == GLOBAL_SCOPE:
        return state.v.layers
    for lay in state.v.layers:
        if lay.layer_id == scope:
            return [lay]
    raise ConfigError(f"unknown layer id {scope!r}")


def effective_step(state: AdamState, scope: str = GLOBAL_SCOPE) -> float:
    """Mean elementwise step multiplier over the scoped parameters.

    Each layer contributes with its own base LR; requires at least one step.
    """
    if state.t < 1:
        raise StateError("effective_step requires at least one optimizer step")
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    total = 0.0
    count = 0
    for lay in _scoped_layers(state, scope):
        eta = state.eta[lay.layer_id]
        for v_a in (lay.weights, lay.bias):
            v_hat = v_a / bc2
            total += float(np.sum(eta / (bc1 * (np.sqrt(v_hat) + state.eps))))
            count += v_a.size
    return total / count


def agg_step(state: AdamState, scope: str = GLOBAL_SCOPE) -> float:
    """eta / (RMS(sqrt(vhat)) + eps) over the scoped parameters.

    For the global scope, eta is the parameter-weighted mean of the
    per-layer base LRs (identical to the shared LR when none differ).
    """
    if state.t < 1:
        raise StateError("agg_step requires at least one optimizer step")
    bc2 = 1.0 - state.beta2**state.t
    v_sum = 0.0
    eta_sum = 0.0
    count = 0
    for lay in _scoped_layers(state, scope):
        eta = state.eta[lay.layer_id]
        for v_a in (lay.weights, lay.bias):
            v_sum += float(np.sum(v_a / bc2))
            eta_sum += eta * v_a.size
            count += v_a.size
    rms = float(np.sqrt(v_sum / count))
    return (eta_sum / count) / (rms + state.eps)


def reset(state: AdamState) -> AdamState:
    """Fresh state: zero moments, t=0, base LRs restored to their initial values."""
    return AdamState(
        zeros_like(state.m),
        zeros_like(state.v),
        0,
        state.beta1,
        state.beta2,
        state.eps,
        dict(state.initial_eta),
        dict(state.initial_eta),
    )
