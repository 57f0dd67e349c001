"""Stochastic evolution of the protocol rule vector.

Shocks arrive as a per-epoch Bernoulli approximation of a Poisson process
(p = 1 - exp(-shock_rate)). When a shock fires, every continuous rule field
receives additive Gaussian noise with standard deviation
``mutability * continuous_sd_scale * field_scale``, reflected back into the
field's legal range. Lobbying agents tilt the noise mean (in sd units) toward
larger blocks and laxer relay policy. The emitted shock magnitude is the L2
norm of the field changes normalized by field scale, which is what the
endogenous-discount update consumes as the epoch's realized mutability.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import ProtocolState

__all__ = [
    "FIELD_SCALES",
    "LOBBY_DIRECTION",
    "MutationConfig",
    "VolatilityEstimate",
    "reflect",
    "sample_transitions",
    "step_protocol",
    "update_volatility",
]

# Normalization scale per continuous field (block size, relay strictness,
# fee threshold, validation overhead). Bounded fields span [0, 1]; the
# unbounded ones use their baseline magnitude as the natural unit.
FIELD_SCALES = np.array([1.0, 1.0, 1.0, 1.0])

# Kernel-tilt direction favourable to large-share miners: bigger blocks,
# laxer relay filtering.
LOBBY_DIRECTION = np.array([1.0, -1.0, 0.0, 0.0])

# (low, high) legal range per field; NaN marks an open upper end.
_BOUNDS = np.array([[0.0, math.nan], [0.0, 1.0], [0.0, math.nan], [0.0, 1.0]])


@dataclass(frozen=True)
class MutationConfig:
    mutability: float = 0.1  # shock magnitude scale, [0, 0.3] in the sweeps
    shock_rate: float = 0.05  # Poisson arrival rate per epoch
    continuous_sd_scale: float = 0.014  # base per-field sd multiplier
    lobby_bias_strength: float = 0.5  # mean tilt (in sd units) per lobbyist
    volatility_window: int = 50

    def __post_init__(self):
        if self.mutability < 0:
            raise ValueError("mutability must be >= 0")
        if self.shock_rate < 0:
            raise ValueError("shock_rate must be >= 0")
        if self.continuous_sd_scale <= 0:
            raise ValueError("continuous_sd_scale must be > 0")
        if self.lobby_bias_strength < 0:
            raise ValueError("lobby_bias_strength must be >= 0")
        if self.volatility_window < 2:
            raise ValueError("volatility_window must be >= 2")

    @property
    def shock_probability(self) -> float:
        return 1.0 - math.exp(-self.shock_rate)


@dataclass(frozen=True)
class VolatilityEstimate:
    """Rolling population variance of the normalized shock-magnitude stream."""

    sigma2: float = 0.0
    window_fill: int = 0


def reflect(x: np.ndarray) -> np.ndarray:
    """Reflect field values into their legal ranges (never clamp).

    In-range values pass through bit-identically, so a zero-magnitude shock
    leaves the state exactly unchanged.
    """
    out = np.array(x, dtype=float, copy=True)
    for k in range(out.shape[-1]):
        lo, hi = _BOUNDS[k]
        v = out[..., k]
        if math.isnan(hi):
            folded = np.abs(v - lo) + lo
            v = np.where(v < lo, folded, v)
        else:
            span = hi - lo
            period = 2.0 * span
            y = np.mod(v - lo, period)
            folded = lo + (span - np.abs(y - span))
            v = np.where((v < lo) | (v > hi), folded, v)
        out[..., k] = v
    return out


def _noise_params(cfg: MutationConfig, lobby_count: int):
    sd = cfg.mutability * cfg.continuous_sd_scale * FIELD_SCALES
    mean = sd * cfg.lobby_bias_strength * lobby_count * LOBBY_DIRECTION
    return mean, sd


def step_protocol(
    state: ProtocolState,
    cfg: MutationConfig,
    lobby_count: int,
    rng: np.random.Generator,
) -> tuple[ProtocolState, bool, float]:
    """Advance the protocol one epoch.

    Returns ``(next_state, shock_occurred, shock_magnitude)``. A shock can
    fire with zero magnitude when mutability is zero; the magnitude is always
    zero when no shock fires.
    """
    fired = bool(rng.random() < cfg.shock_probability)
    if not fired:
        return state, False, 0.0
    mean, sd = _noise_params(cfg, lobby_count)
    noise = mean + sd * rng.standard_normal(4)
    old = state.continuous_vector()
    new = reflect(old + noise)
    if new[0] <= 0.0:  # measure-zero reflection landing exactly on the bound
        new[0] = np.finfo(float).tiny
    magnitude = float(np.linalg.norm((new - old) / FIELD_SCALES))
    next_state = ProtocolState(
        block_size_limit=float(new[0]),
        relay_strictness=float(new[1]),
        fee_threshold=float(new[2]),
        validation_overhead=float(new[3]),
        epoch_of_last_shock=state.epoch_of_last_shock,
    )
    return next_state, True, magnitude


def sample_transitions(
    state: ProtocolState,
    cfg: MutationConfig,
    lobby_count: int,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized one-step sampler with :func:`step_protocol` semantics.

    Returns ``(next_fields (n, 4), fired (n,), magnitudes (n,))``. Used for
    Monte Carlo transition-kernel estimation, where per-sample Python calls
    would dominate the runtime.
    """
    fired = rng.random(n) < cfg.shock_probability
    mean, sd = _noise_params(cfg, lobby_count)
    noise = mean + sd * rng.standard_normal((n, 4))
    old = state.continuous_vector()
    new = reflect(old + noise)
    new[new[:, 0] <= 0.0, 0] = np.finfo(float).tiny
    new = np.where(fired[:, None], new, old[None, :])
    magnitudes = np.linalg.norm((new - old[None, :]) / FIELD_SCALES, axis=1)
    return new, fired, magnitudes


def update_volatility(
    est: VolatilityEstimate,
    shock_magnitude: float,
    window: deque,
) -> VolatilityEstimate:
    """Push a magnitude into the rolling window and re-estimate sigma^2.

    The window is a bounded deque owned by the caller; shock-free epochs push
    zeros, so a quiet window estimates exactly zero variance.
    """
    if shock_magnitude < 0:
        raise ValueError("shock_magnitude must be >= 0")
    window.append(shock_magnitude)
    data = np.fromiter(window, dtype=float)
    mean = data.mean()
    sigma2 = float(np.mean((data - mean) ** 2))
    return VolatilityEstimate(sigma2=sigma2, window_fill=len(data))
