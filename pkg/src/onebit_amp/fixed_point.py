"""Scalar fixed point of the clamped state evolution and the cost curve f(a).

For a clamp level ``a`` the pair ``(tau2, gamma)`` solves

    F1 = tau2 - 1 - E[eta_a(tau Z; gamma)^2] / delta            = 0
    F2 = rho - gamma + gamma * u / (delta * (gamma + 1))         = 0

and ``f(a) = delta*rho*(tau2 - 1) + delta*rho^2*tau2/gamma^2 + lambda*a^2`` is
the large-system optimal value of the inner box-constrained problem plus the
l_inf penalty.  The minimiser ``a*`` of ``f`` fixes the asymptotic precoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from scipy.optimize import brentq

from .errors import ConfigError, NumericalFailure
from .scalar_kernels import SQRT2, _pdf

RHO_MIN = 1e-8
OUTER_MAX_ITER = 200
NEWTON_MAX_ITER = 100
RESIDUAL_TOL = 1e-12
CLAMP_INACTIVE_C = 40.0
F_PRIME_AT_ZERO = -2.0 * math.sqrt(2.0 / math.pi)

_XTOL = 1e-16
_RTOL = 8.9e-16  # smallest relative tolerance brentq accepts


@dataclass(frozen=True)
class SystemConfig:
    delta: float
    sigma2: float = 0.0
    N: Optional[int] = None
    K: Optional[int] = None

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be nonnegative, got {self.sigma2}")
        if self.N is not None and self.K is not None:
            if abs(self.K / self.N - self.delta) > 1.0 / self.N:
                raise ConfigError(f"K/N = {self.K}/{self.N} is inconsistent with delta = {self.delta}")

    def with_sigma2(self, sigma2: float) -> "SystemConfig":
        return SystemConfig(self.delta, sigma2, self.N, self.K)


@dataclass(frozen=True)
class RegParams:
    rho: float
    lam: float

    def __post_init__(self):
        if self.rho < 0 or not math.isfinite(self.rho):
            raise ConfigError(f"rho must be nonnegative, got {self.rho}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigError(f"lambda must be positive, got {self.lam}")

    @property
    def rho_eff(self) -> float:
        """rho with zero replaced by the small positive surrogate."""
        return max(self.rho, RHO_MIN)


@dataclass(frozen=True)
class FixedPointSolution:
    a: float
    tau2: float
    gamma: float
    u: float
    v: float
    residuals: tuple[float, float] = (0.0, 0.0)

    @property
    def tau(self) -> float:
        return math.sqrt(self.tau2)


# ---------------------------------------------------------------------------
# residuals and partial derivatives


def _uv(tau2: float, gamma: float, a: float) -> tuple[float, float]:
    c = a * (gamma + 1.0) / math.sqrt(tau2)
    return math.erf(c / SQRT2), _pdf(c)


def residuals(tau2: float, gamma: float, a: float, rho: float, delta: float) -> tuple[float, float]:
    """``(F1, F2)`` in the explicit form with ``u`` and ``v`` substituted."""
    u, v = _uv(tau2, gamma, a)
    tau = math.sqrt(tau2)
    g1 = gamma + 1.0
    f1 = tau2 - 1.0 - tau2 * u / (delta * g1 * g1) + a * a * u / delta + 2.0 * a * tau * v / (delta * g1) - a * a / delta
    f2 = rho - gamma + gamma * u / (delta * g1)
    return f1, f2


def _f1(tau2, gamma, a, delta):
    u, v = _uv(tau2, gamma, a)
    g1 = gamma + 1.0
    return (
        tau2 - 1.0 - tau2 * u / (delta * g1 * g1) + a * a * u / delta
        + 2.0 * a * math.sqrt(tau2) * v / (delta * g1) - a * a / delta
    )


def _df1_dtau2(tau2, gamma, a, delta):
    u, v = _uv(tau2, gamma, a)
    g1 = gamma + 1.0
    return 1.0 - u / (delta * g1 * g1) + 2.0 * a * v / (delta * math.sqrt(tau2) * g1)


def jacobian(sol: FixedPointSolution, delta: float) -> tuple[tuple[float, float], tuple[float, float], tuple[float, float]]:
    """Partials of ``(F1, F2)``: rows ``d/dtau2``, ``d/dgamma``, ``d/da``."""
    a, tau2, g, u, v = sol.a, sol.tau2, sol.gamma, sol.u, sol.v
    tau = math.sqrt(tau2)
    g1 = g + 1.0
    d_tau2 = (1.0 - u / (delta * g1**2) + 2.0 * a * v / (delta * tau * g1), -a * g * v / (delta * tau**3))
    d_gamma = (
        2.0 * tau2 * u / (delta * g1**3) - 4.0 * a * tau * v / (delta * g1**2),
        -1.0 + u / (delta * g1**2) + 2.0 * a * g * v / (delta * tau * g1),
    )
    d_a = (-2.0 * a * (1.0 - u) / delta, 2.0 * g * v / (delta * tau))
    return d_tau2, d_gamma, d_a


def sensitivity(sol: FixedPointSolution, delta: float) -> tuple[float, float]:
    """``(d tau2/da, d gamma/da)`` from the implicit-function theorem."""
    (a11, a21), (a12, a22), (b1, b2) = jacobian(sol, delta)
    det = a11 * a22 - a12 * a21
    return -(a22 * b1 - a12 * b2) / det, -(a11 * b2 - a21 * b1) / det


# ---------------------------------------------------------------------------
# solver


def _tau2_given_gamma(gamma: float, a: float, delta: float) -> float:
    """Root of F1 in tau2 for fixed gamma.

    F1 is increasing and convex in tau2, so Newton started at the upper end of
    the bracket descends monotonically onto the root.  Bisection takes over if
    an iterate ever leaves the bracket.
    """
    lo, hi = 1e-12, 1.0 + a * a / delta + 10.0
    x = 1.0 + a * a / delta
    for _ in range(NEWTON_MAX_ITER):
        f = _f1(x, gamma, a, delta)
        if f == 0.0:
            return x
        step = f / _df1_dtau2(x, gamma, a, delta)
        x_new = x - step
        if not (lo < x_new < hi) or not math.isfinite(x_new):
            break
        if abs(step) <= 4e-16 * x_new:
            return x_new
        x = x_new
    else:
        if abs(_f1(x, gamma, a, delta)) <= RESIDUAL_TOL:
            return x
    return brentq(lambda t: _f1(t, gamma, a, delta), lo, hi, xtol=_XTOL, rtol=_RTOL, maxiter=OUTER_MAX_ITER)


def clamp_inactive_solution(rho: float, delta: float) -> tuple[float, float]:
    """``(tau2, gamma)`` when the clamp never binds (``u = 1``, ``v = 0``).

    The fixed point then reduces to ``rho = gamma (1 - 1/(delta (gamma+1)))``
    and ``tau2 (1 - 1/(delta (gamma+1)^2)) = 1``.
    """
    b = delta - 1.0 - delta * rho
    root = math.sqrt(b * b + 4.0 * delta * delta * rho)
    if b <= 0:
        gamma = (root - b) / (2.0 * delta)
    else:
        # rationalised form avoids cancellation when rho is tiny
        gamma = 2.0 * delta * rho / (b + root)
    tau2 = 1.0 / (1.0 - 1.0 / (delta * (gamma + 1.0) ** 2))
    return tau2, gamma


def solve_fixed_point(a: float, params: RegParams, config: SystemConfig) -> FixedPointSolution:
    """Unique ``(tau2, gamma)`` solving the state-evolution fixed point at clamp ``a``.

    ``a = inf`` (or any ``a`` large enough that the clamp is inactive at the
    solution) takes the closed-form path.
    """
    if a < 0 or math.isnan(a):
        raise ConfigError(f"clamp level must be nonnegative, got {a}")
    rho, delta = params.rho_eff, config.delta
    if a == 0:
        return FixedPointSolution(0.0, 1.0, rho, 0.0, _pdf(0.0))

    tau2_inf, gamma_inf = clamp_inactive_solution(rho, delta)
    if math.isinf(a):
        return FixedPointSolution(a, tau2_inf, gamma_inf, 1.0, 0.0)
    if a * (gamma_inf + 1.0) / math.sqrt(tau2_inf) >= CLAMP_INACTIVE_C:
        res = residuals(tau2_inf, gamma_inf, a, rho, delta)
        if max(abs(res[0]), abs(res[1])) <= RESIDUAL_TOL:
            u, v = _uv(tau2_inf, gamma_inf, a)
            return FixedPointSolution(a, tau2_inf, gamma_inf, u, v, res)

    def outer(gamma: float) -> float:
        tau2 = _tau2_given_gamma(gamma, a, delta)
        u, _ = _uv(tau2, gamma, a)
        return rho - gamma + gamma * u / (delta * (gamma + 1.0))

    try:
        gamma = brentq(outer, rho, rho + 1.0 / delta, xtol=_XTOL, rtol=_RTOL, maxiter=OUTER_MAX_ITER)
    except RuntimeError as exc:  # pragma: no cover - brentq convergence failure
        raise NumericalFailure("gamma root search did not converge", a=a, rho=rho, delta=delta) from exc
    tau2 = _tau2_given_gamma(gamma, a, delta)
    u, v = _uv(tau2, gamma, a)
    res = residuals(tau2, gamma, a, rho, delta)
    if max(abs(res[0]), abs(res[1])) > RESIDUAL_TOL:
        raise NumericalFailure("fixed point residual above tolerance", a=a, residuals=res, tau2=tau2, gamma=gamma)
    return FixedPointSolution(a, tau2, gamma, u, v, res)


# ---------------------------------------------------------------------------
# cost curve


def f_bar_from(sol: FixedPointSolution, params: RegParams, config: SystemConfig) -> float:
    rho, delta = params.rho_eff, config.delta
    return delta * rho * (sol.tau2 - 1.0) + delta * rho * rho * sol.tau2 / (sol.gamma * sol.gamma)


def f_bar(a: float, params: RegParams, config: SystemConfig) -> float:
    """Limit of the inner optimal value, i.e. ``f(a) - lambda a^2``."""
    return f_bar_from(solve_fixed_point(a, params, config), params, config)


def f_value(a: float, params: RegParams, config: SystemConfig) -> float:
    return f_bar(a, params, config) + params.lam * a * a


def t_terms(sol: FixedPointSolution, params: RegParams, config: SystemConfig) -> tuple[float, float, float]:
    """The three scalars whose ratios give ``f'(a) - 2 lambda a``."""
    rho, delta = params.rho_eff, config.delta
    a, tau2, g, u, v = sol.a, sol.tau2, sol.gamma, sol.u, sol.v
    tau = math.sqrt(tau2)
    g1 = g + 1.0
    ratio = 1.0 + rho / (g * g)
    t0 = (1.0 + a * a * (1.0 - u) / delta) * (g * g - rho / g) / (tau2 * g1) - (rho + g * g) / g1
    t1 = 2.0 * rho * a * g * (1.0 - u) / g1 * ratio**2 + 4.0 * rho * g * v / (tau * g1) * ratio * (1.0 - tau2)
    t2 = 4.0 * rho * rho * v / (tau * g * g)
    return t0, t1, t2


def f_prime_from(sol: FixedPointSolution, params: RegParams, config: SystemConfig) -> float:
    if sol.a == 0:
        return F_PRIME_AT_ZERO
    t0, t1, t2 = t_terms(sol, params, config)
    if not t0 < 0:
        raise NumericalFailure("t0 must be negative at a valid fixed point", a=sol.a, t0=t0)
    return (t2 - t1) / t0 + 2.0 * params.lam * sol.a


def f_prime(a: float, params: RegParams, config: SystemConfig) -> float:
    """Derivative of ``f``; ``a = 0`` returns the one-sided limit ``-2 sqrt(2/pi)``."""
    return f_prime_from(solve_fixed_point(a, params, config), params, config)


def f_prime_implicit(a: float, params: RegParams, config: SystemConfig) -> float:
    """Same derivative via the chain rule and :func:`sensitivity`."""
    sol = solve_fixed_point(a, params, config)
    if a == 0:
        return F_PRIME_AT_ZERO
    rho, delta = params.rho_eff, config.delta
    dtau2, dgamma = sensitivity(sol, delta)
    g = sol.gamma
    return (
        delta * rho * (1.0 + rho / g**2) * dtau2
        - 2.0 * delta * rho**2 * sol.tau2 / g**3 * dgamma
        + 2.0 * params.lam * a
    )


def a_upper(params: RegParams, config: SystemConfig) -> float:
    """``f(0) = delta`` and ``f >= lambda a^2`` confine the minimiser to ``[0, sqrt(delta/lambda)]``."""
    return math.sqrt(config.delta / params.lam)


def golden_section(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-8, max_iter: int = 500) -> float:
    """Minimiser of a unimodal ``fn`` on ``[lo, hi]`` to interval width ``tol``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = fn(x2)
    return 0.5 * (lo + hi)


def minimize_a(params: RegParams, config: SystemConfig) -> tuple[float, float, float]:
    """``(a*, tau2*, gamma*)`` at the root of ``f'``.

    ``f'`` is negative at 0 and positive beyond ``sqrt(delta/lambda)``; Brent's
    bracketed method finds the sign change.
    """
    hi = a_upper(params, config) + 1.0

    def fp(a: float) -> float:
        return f_prime(a, params, config)

    if fp(hi) <= 0:
        raise NumericalFailure("f' does not change sign on the bracket", hi=hi, params=params, config=config)
    a_star = brentq(fp, 0.0, hi, xtol=1e-15, rtol=_RTOL, maxiter=OUTER_MAX_ITER)
    sol = solve_fixed_point(a_star, params, config)
    return a_star, sol.tau2, sol.gamma


def minimize_a_golden(params: RegParams, config: SystemConfig, tol: float = 1e-9) -> float:
    """Derivative-free minimiser of ``f``, kept as a cross-check for :func:`minimize_a`."""
    return golden_section(lambda a: f_value(a, params, config), 0.0, a_upper(params, config), tol=tol)
