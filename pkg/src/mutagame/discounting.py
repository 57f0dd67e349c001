"""Endogenous discounting and institutional confidence.

Three coupled channels:

* a rate channel, ``effective_rate = base_rho + lambda_sens * sigma``, with
  the matching revenue attenuation ``r0 * exp(-lambda_sens * sigma)``;
* a structural channel, ``1 / (1 + beta + phi(sigma^2))`` with ``phi`` an
  increasing convex polynomial, used by the dynamic-programming solver;
* a realized-shock channel, ``delta *= (1 - kappa * eps_t)``, applied every
  epoch inside the simulation loop.

Confidence ``psi`` decays multiplicatively on each effective shock and
(optionally) recovers toward 1 in quiet epochs; setting ``psi_recovery = 0``
gives pure decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "DELTA_MIN",
    "DiscountParams",
    "discounted_utility",
    "effective_rate",
    "expected_revenue_decay",
    "update_confidence",
    "update_discount",
    "volatility_discount",
]

# Discount factors are clamped to [DELTA_MIN, 1 - DELTA_MIN]; the realized
# shock update can otherwise drive delta to zero or below.
DELTA_MIN = 1e-6


@dataclass(frozen=True)
class DiscountParams:
    base_rho: float = 1.0 / 9.0  # subjective time-preference rate
    lambda_sens: float = 2.0  # sensitivity to uncertainty
    phi_linear: float = 5.0
    phi_quad: float = 20.0
    psi_decay: float = 0.05  # confidence loss per effective shock
    psi_recovery: float = 0.02  # recovery toward 1 per quiet epoch

    def __post_init__(self):
        if self.base_rho <= 0:
            raise ValueError("base_rho must be > 0")
        if self.lambda_sens < 0 or self.phi_linear < 0 or self.phi_quad < 0:
            raise ValueError("sensitivities must be >= 0")
        if not 0.0 <= self.psi_decay < 1.0 or not 0.0 <= self.psi_recovery < 1.0:
            raise ValueError("psi_decay and psi_recovery must be in [0, 1)")

    def phi(self, sigma2: float) -> float:
        return self.phi_linear * sigma2 + self.phi_quad * sigma2 * sigma2


def effective_rate(params: DiscountParams, sigma_t: float) -> float:
    """Noise-compounded discount rate."""
    if sigma_t < 0:
        raise ValueError(f"sigma_t must be >= 0, got {sigma_t}")
    return params.base_rho + params.lambda_sens * sigma_t


def expected_revenue_decay(r0: float, lambda_sens: float, sigma_t: float) -> float:
    """Expected revenue after noise attenuation."""
    return r0 * math.exp(-lambda_sens * sigma_t)


def volatility_discount(params: DiscountParams, sigma2: float) -> float:
    """Structural discount factor; strictly decreasing in sigma2, in (0, 1)."""
    return 1.0 / (1.0 + params.base_rho + params.phi(sigma2))


def update_discount(delta_t: float, kappa: float, epsilon_t: float) -> float:
    """One realized-shock update of the per-epoch discount factor.

    ``epsilon_t`` is the epoch's realized mutability (shock magnitude, zero in
    quiet epochs). The result is clamped so a single large shock cannot push
    delta out of (0, 1).
    """
    return min(max(delta_t * (1.0 - kappa * epsilon_t), DELTA_MIN), 1.0 - DELTA_MIN)


def update_confidence(psi_t: float, shock_occurred: bool, params: DiscountParams) -> float:
    """Confidence decay on shock, partial recovery toward 1 otherwise."""
    if shock_occurred:
        return psi_t * (1.0 - params.psi_decay)
    return psi_t + params.psi_recovery * (1.0 - psi_t)


def discounted_utility(stream) -> float:
    """Discounted utility of a finite (payoff, delta, psi) stream.

    Deltas vary per epoch, so weighting uses cumulative products: the epoch-0
    payoff is undiscounted and epoch t carries the product of the deltas of
    the preceding epochs, matching the constant-delta geometric form
    ``sum_t delta^t * psi_t * payoff_t``.
    """
    total = 0.0
    weight = 1.0
    for payoff, delta, psi in stream:
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {delta}")
        total += weight * psi * payoff
        weight *= delta
    return total
