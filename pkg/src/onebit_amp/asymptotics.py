"""Large-system scalar channel seen by each user and the resulting symbol error rate.

With ``X_hat = eta_{a*}(tau* Z; gamma*)`` describing a typical precoder entry,
user ``k`` receives ``alpha * s_k + sqrt(beta) * W + noise`` after
quantization of the precoder output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .fixed_point import FixedPointSolution, RegParams, SystemConfig, minimize_a, solve_fixed_point
from .scalar_kernels import Quantizer, _tail, abs_moment, expect_through_clamp

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ScalarChannel:
    alpha_bar: float
    beta_bar: float

    def __post_init__(self):
        if self.beta_bar < 0:
            # tiny negatives from cancellation are clipped; anything larger is a bug
            if self.beta_bar < -1e-12:
                raise ValueError(f"negative distortion variance {self.beta_bar}")
            object.__setattr__(self, "beta_bar", 0.0)

    def snr(self, sigma2: float) -> float:
        return self.alpha_bar**2 / (self.beta_bar + sigma2)


def optimal_solution(params: RegParams, config: SystemConfig) -> FixedPointSolution:
    a_star, _, _ = minimize_a(params, config)
    return solve_fixed_point(a_star, params, config)


def sign_channel_at(sol: FixedPointSolution, delta: float) -> ScalarChannel:
    """Closed-form ``(alpha, beta)`` for one-bit quantization at a given fixed point."""
    tau = math.sqrt(sol.tau2)
    alpha = SQRT_2_OVER_PI / (delta * tau)
    second = delta * (sol.tau2 - 1.0)
    first_abs = abs_moment(sol.tau2, sol.gamma, sol.a)
    beta = (alpha * alpha * second - 2.0 * alpha * first_abs + 1.0) / delta
    return ScalarChannel(alpha, beta)


def effective_channel_sign(params: RegParams, config: SystemConfig) -> ScalarChannel:
    return sign_channel_at(optimal_solution(params, config), config.delta)


def general_channel_at(q: Quantizer, sol: FixedPointSolution, delta: float) -> ScalarChannel:
    """``(alpha, beta)`` for an arbitrary quantizer via breakpoint-aware quadrature."""
    q.check_clamp(sol.a)
    tau = math.sqrt(sol.tau2)
    alpha = expect_through_clamp(q, tau, sol.gamma, sol.a, weight="z") / (delta * tau)

    def sq_err(x):
        return (alpha * x - q(x)) ** 2

    beta = expect_through_clamp(
        sq_err, tau, sol.gamma, sol.a, breakpoints=q.quadrature_cuts(), check_collisions=not q.is_mollified
    ) / delta
    return ScalarChannel(alpha, beta)


def effective_channel_general(q: Quantizer, params: RegParams, config: SystemConfig) -> ScalarChannel:
    return general_channel_at(q, optimal_solution(params, config), config.delta)


def stein_alpha_at(q: Quantizer, sol: FixedPointSolution, delta: float) -> float:
    """``alpha`` from ``E[(q o eta)'] / delta``; only meaningful for differentiable ``q``."""
    g1 = sol.gamma + 1.0

    def dq(x):
        return q.derivative(x) / g1

    # eta' vanishes on the clamped tails, so only the interior contributes
    tau = math.sqrt(sol.tau2)
    inner = expect_through_clamp(dq, tau, sol.gamma, sol.a, breakpoints=q.quadrature_cuts(), check_collisions=False)
    tails = _tail(sol.a * g1 / tau) * float(dq(sol.a) + dq(-sol.a))
    return (inner - tails) / delta


def sep_predict(channel: ScalarChannel, sigma2: float) -> float:
    """Predicted symbol error probability ``Q(sqrt(alpha^2 / (beta + sigma2)))``."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    denom = channel.beta_bar + sigma2
    if channel.alpha_bar == 0:
        return 0.5
    if denom == 0:
        return 0.0
    return _tail(channel.alpha_bar / math.sqrt(denom))


def xhat_statistic(
    test_fn: Callable,
    params: RegParams,
    config: SystemConfig,
    breakpoints: Sequence[float] = (),
    solution: Optional[FixedPointSolution] = None,
) -> float:
    """``E[test_fn(X_hat)]`` under the truncated-Gaussian law of a precoder entry."""
    sol = solution if solution is not None else optimal_solution(params, config)
    return expect_through_clamp(test_fn, math.sqrt(sol.tau2), sol.gamma, sol.a, breakpoints=breakpoints)


def cluster_proportion_at(epsilon: float, sol: FixedPointSolution) -> float:
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    return 2.0 * _tail(sol.a * (1.0 - epsilon) * (sol.gamma + 1.0) / math.sqrt(sol.tau2))


def cluster_proportion(epsilon: float, params: RegParams, config: SystemConfig) -> float:
    """Fraction of precoder entries within ``epsilon * a*`` of the clamp edges."""
    return cluster_proportion_at(epsilon, optimal_solution(params, config))


__all__ = [
    "ScalarChannel",
    "optimal_solution",
    "sign_channel_at",
    "effective_channel_sign",
    "general_channel_at",
    "effective_channel_general",
    "stein_alpha_at",
    "sep_predict",
    "xhat_statistic",
    "cluster_proportion_at",
    "cluster_proportion",
]
