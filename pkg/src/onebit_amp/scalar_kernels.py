"""Scalar Gaussian primitives, the clamp denoiser and quantizer utilities.

Everything here is a pure function of its arguments.  Scalar helpers with a
leading underscore use :mod:`math` and are meant for the hot loops of the
fixed-point solver; the public functions also accept numpy arrays.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
PHI0 = 1.0 / SQRT2PI

GL_ORDER = 64
Z_WINDOW = 10.0
BREAKPOINT_TOL = 1e-9

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)


class BreakpointCollision(ValueError):
    """A quantizer discontinuity sits on (or within tolerance of) the clamp edge."""


# ---------------------------------------------------------------------------
# Gaussian functions


def _pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / SQRT2PI


def _cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / SQRT2)


def _tail(x: float) -> float:
    return 0.5 * math.erfc(x / SQRT2)


def gauss_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT2PI


def gauss_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / SQRT2)


def gauss_tail(x):
    """Q(x) = 1 - Phi(x), evaluated directly so deep tails keep relative accuracy."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / SQRT2)


def std_gaussian(x):
    """Return ``(pdf, cdf, tail)`` of the standard normal at ``x``."""
    if np.ndim(x) == 0:
        x = float(x)
        return _pdf(x), _cdf(x), _tail(x)
    return gauss_pdf(x), gauss_cdf(x), gauss_tail(x)


# ---------------------------------------------------------------------------
# clamp denoiser


def eta_a(x, gamma: float, a: float):
    """Clamp ``x / (gamma + 1)`` to ``[-a, a]``."""
    if gamma < 0 or a < 0:
        raise ValueError("eta_a needs gamma >= 0 and a >= 0")
    y = np.clip(np.asarray(x, dtype=float) / (gamma + 1.0), -a, a)
    return float(y) if np.ndim(y) == 0 else y


def eta_a_prime(x, gamma: float, a: float):
    """Derivative of :func:`eta_a`; points exactly on the clamp edge count as clamped."""
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < a * (gamma + 1.0), 1.0 / (gamma + 1.0), 0.0)


def trunc_moments(tau2: float, gamma: float, a: float) -> tuple[float, float, float]:
    """Closed-form ``(u, v, E[eta_a(tau Z; gamma)^2])``.

    ``u = 2 Phi(c) - 1`` is the probability of landing inside the box and
    ``v = phi(c)``, with ``c = a (gamma + 1) / tau``.
    """
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")
    if a == 0:
        return 0.0, PHI0, 0.0
    tau = math.sqrt(tau2)
    c = a * (gamma + 1.0) / tau
    u = math.erf(c / SQRT2)
    v = _pdf(c)
    s = tau / (gamma + 1.0)
    second = s * s * u + a * a * (1.0 - u) - 2.0 * a * s * v
    # cancellation can leave a tiny negative number when c is near 0
    return u, v, min(max(second, 0.0), a * a)


def abs_moment(tau2: float, gamma: float, a: float) -> float:
    """Closed-form ``E|eta_a(tau Z; gamma)|`` (half-normal part plus clamp mass)."""
    if a == 0:
        return 0.0
    s = math.sqrt(tau2) / (gamma + 1.0)
    c = a / s
    return 2.0 * (s * (PHI0 - _pdf(c)) + a * _tail(c))


# ---------------------------------------------------------------------------
# quantizers


@functools.lru_cache(maxsize=None)
def bump_normalizer() -> float:
    """Constant making ``c * exp(-1 / (1 - x^2))`` integrate to one on (-1, 1)."""
    mass, _ = integrate.quad(
        lambda t: math.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200
    )
    return 1.0 / mass


def bump(t):
    """Standard mollifier on (-1, 1), unit mass."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = bump_normalizer() * np.exp(-1.0 / (1.0 - ti * ti))
    return out


def bump_cdf(t):
    """Cumulative mass of :func:`bump` on (-1, t]."""
    return 0.5 + bump_mass_from_centre(t)


def bump_mass_from_centre(t):
    """Signed mass of :func:`bump` between 0 and ``t``; exactly odd in ``t``."""
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    flat = t.reshape(-1)
    # integrate from the centre so that the result is exactly antisymmetric about 1/2
    half = 0.5 * np.abs(flat)
    nodes = half[:, None] * (_GL_NODES[None, :] + 1.0)
    mass = bump(nodes) @ _GL_WEIGHTS * half
    vals = np.where(np.abs(flat) >= 1.0, 0.5, np.minimum(mass, 0.5))
    return (np.sign(flat) * vals).reshape(t.shape)


@dataclass(frozen=True)
class Quantizer:
    """A scalar quantization map with a finite set of discontinuities.

    ``levels`` is set for piecewise-constant maps (``len(levels) ==
    len(breakpoints) + 1``).  Otherwise ``func`` defines the map and
    ``deriv`` (optional) its a.e. derivative.  Mollified quantizers keep a
    reference to their ``base`` and the smoothing width ``epsilon``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple[float, ...] = ()
    name: str = "q"
    levels: Optional[tuple[float, ...]] = None
    deriv: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    epsilon: Optional[float] = None
    base: Optional["Quantizer"] = field(default=None, compare=False)

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bps)
        if self.levels is not None and len(self.levels) != len(bps) + 1:
            raise ValueError("piecewise-constant quantizer needs len(breakpoints) + 1 levels")

    def __call__(self, x):
        y = self.func(np.asarray(x, dtype=float))
        return float(y) if np.ndim(y) == 0 else y

    @property
    def is_mollified(self) -> bool:
        return self.epsilon is not None

    @property
    def has_jumps(self) -> bool:
        """True when the map itself is discontinuous (mollified maps never are)."""
        if self.is_mollified:
            return False
        if self.levels is not None:
            return any(l1 != l2 for l1, l2 in zip(self.levels, self.levels[1:]))
        return any(abs(self.jump_at(b)) > 0 for b in self.breakpoints)

    def jump_at(self, b: float) -> float:
        if self.levels is not None:
            i = self.breakpoints.index(b)
            return self.levels[i + 1] - self.levels[i]
        h = 1e-12 * max(1.0, abs(b))
        return float(self.func(np.array(b + h)) - self.func(np.array(b - h)))

    def derivative(self, x):
        """A.e. derivative; jump discontinuities contribute nothing here."""
        x = np.asarray(x, dtype=float)
        if self.deriv is not None:
            return self.deriv(x)
        if self.levels is not None:
            return np.zeros_like(x)
        h = 1e-6
        return (self.func(x + h) - self.func(x - h)) / (2 * h)

    def quadrature_cuts(self) -> tuple[float, ...]:
        """Points where the map or its derivative changes character."""
        if not self.is_mollified:
            return self.breakpoints
        e = self.epsilon
        return tuple(sorted({x for b in self.breakpoints for x in (b - e, b, b + e)}))

    def check_clamp(self, a: float, tol: float = BREAKPOINT_TOL) -> None:
        """Reject discontinuities that coincide with the clamp edges ``+-a``."""
        if self.is_mollified:
            return
        for b in self.breakpoints:
            if abs(abs(b) - a) <= tol:
                raise BreakpointCollision(f"{self.name}: breakpoint {b} collides with clamp level {a}")


def sign_quantizer() -> Quantizer:
    """One-bit quantizer; zero maps to +1."""
    return Quantizer(
        func=lambda x: np.where(x >= 0, 1.0, -1.0),
        breakpoints=(0.0,),
        name="sign",
        levels=(-1.0, 1.0),
    )


def identity_quantizer() -> Quantizer:
    return Quantizer(func=lambda x: np.array(x, dtype=float), name="identity", deriv=np.ones_like)


def piecewise_constant(breakpoints: Sequence[float], levels: Sequence[float], name: str = "pwc") -> Quantizer:
    bps = np.asarray(breakpoints, dtype=float)
    lv = np.asarray(levels, dtype=float)

    def func(x):
        return lv[np.searchsorted(bps, x, side="right")]

    return Quantizer(func=func, breakpoints=tuple(bps), name=name, levels=tuple(lv))


def uniform_quantizer(bits: int, step: float) -> Quantizer:
    """Symmetric mid-rise quantizer with ``2**bits`` levels spaced by ``step``."""
    n = 2**bits
    levels = step * (np.arange(n) - (n - 1) / 2.0)
    bps = step * (np.arange(1, n) - n / 2.0)
    return piecewise_constant(bps, levels, name=f"uniform{bits}")


def mollify(q: Quantizer, epsilon: float) -> Quantizer:
    """Convolve ``q`` with the bump mollifier scaled to width ``epsilon``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if q.is_mollified:
        raise ValueError("quantizer is already mollified")
    bps = np.asarray(q.breakpoints, dtype=float)

    if q.levels is not None:
        lv = np.asarray(q.levels, dtype=float)
        jumps = np.diff(lv)

        # written around the midpoint of the outer levels so symmetric maps stay exactly odd
        mid = 0.5 * (lv[0] + lv[-1])

        def func(x):
            x = np.asarray(x, dtype=float)
            out = np.full(x.shape, mid)
            for b, j in zip(bps, jumps):
                out = out + j * bump_mass_from_centre((x - b) / epsilon)
            return out

        def deriv(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape)
            for b, j in zip(bps, jumps):
                out = out + j * bump((x - b) / epsilon) / epsilon
            return out

    else:
        base_jumps = np.array([q.jump_at(b) for b in bps])

        def _convolve(g, x):
            x = np.asarray(x, dtype=float)
            flat = x.reshape(-1)
            out = np.empty(flat.shape)
            for i, xi in enumerate(flat):
                cuts = np.sort((xi - bps) / epsilon)
                edges = np.concatenate(([-1.0], cuts[(cuts > -1.0) & (cuts < 1.0)], [1.0]))
                total = 0.0
                for lo, hi in zip(edges[:-1], edges[1:]):
                    half = 0.5 * (hi - lo)
                    t = half * _GL_NODES + 0.5 * (hi + lo)
                    total += half * np.dot(_GL_WEIGHTS, bump(t) * g(xi - epsilon * t))
                out[i] = total
            return out.reshape(x.shape)

        def func(x):
            return _convolve(q.func, x)

        def deriv(x):
            x = np.asarray(x, dtype=float)
            out = _convolve(q.derivative, x)
            for b, j in zip(bps, base_jumps):
                out = out + j * bump((x - b) / epsilon) / epsilon
            return out

    return Quantizer(
        func=func,
        breakpoints=q.breakpoints,
        name=f"{q.name}~{epsilon:g}",
        deriv=deriv,
        epsilon=float(epsilon),
        base=q,
    )


# ---------------------------------------------------------------------------
# expectations through the clamp


def _gl_panel(fn, lo: float, hi: float) -> float:
    half = 0.5 * (hi - lo)
    z = half * _GL_NODES + 0.5 * (hi + lo)
    return half * float(np.dot(_GL_WEIGHTS, fn(z)))


def expect_through_clamp(
    g: Callable,
    tau: float,
    gamma: float,
    a: float,
    weight: str = "1",
    breakpoints: Sequence[float] = (),
    check_collisions: bool = True,
) -> float:
    """``E[w(Z) g(eta_a(tau Z; gamma))]`` with ``w`` either ``1`` or ``z``.

    The real line is cut at the clamp edges and at every breakpoint of ``g``
    mapped back through the clamp; each finite piece gets a 64-node
    Gauss-Legendre panel and the two clamped tails are added in closed form.
    ``g`` may be a :class:`Quantizer`, in which case its breakpoints are used.
    """
    if weight not in ("1", "z"):
        raise ValueError("weight must be '1' or 'z'")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if isinstance(g, Quantizer):
        g.check_clamp(a)
        bps = tuple(breakpoints) or g.quadrature_cuts()
    else:
        bps = tuple(breakpoints)
        if check_collisions:
            for b in bps:
                if abs(abs(b) - a) <= BREAKPOINT_TOL:
                    raise BreakpointCollision(f"breakpoint {b} collides with clamp level {a}")

    scale = tau / (gamma + 1.0)
    c = a / scale
    edge = min(c, Z_WINDOW)
    cuts = [-edge, edge]
    for b in bps:
        zb = b / scale
        if -edge < zb < edge:
            cuts.append(zb)
    cuts = sorted(set(cuts))

    def integrand(z):
        x = np.clip(scale * z, -a, a)
        gz = np.asarray(g(x), dtype=float)
        w = gauss_pdf(z) if weight == "1" else z * gauss_pdf(z)
        return w * gz

    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi > lo:
            total += _gl_panel(integrand, lo, hi)
    if c < math.inf:
        g_hi = float(np.asarray(g(np.array(a))))
        g_lo = float(np.asarray(g(np.array(-a))))
        tail_mass = _tail(c) if weight == "1" else _pdf(c)
        # for weight z the lower tail contributes -phi(c) * g(-a)
        total += g_hi * tail_mass + (g_lo * tail_mass if weight == "1" else -g_lo * tail_mass)
    return total
