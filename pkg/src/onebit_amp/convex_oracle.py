"""Direct solver for the relaxed precoding problem

    min_x (1/N)||s - H x||^2 + (rho/N)||x||^2 + lambda ||x||_inf^2

written as an outer one-dimensional search over the box half-width ``a`` and an
inner box-constrained ridge problem solved by projected gradient.  It does not
use AMP, so it serves as ground truth for the AMP iterates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalFailure
from .fixed_point import RegParams, golden_section
from .linops import LinearOps

INNER_MAX_ITER = 20000
RHO_ZERO_ITER_FACTOR = 10
OBJECTIVE_STALL = 1e-12
OUTER_TOL = 1e-8


@dataclass
class PrecodeOutput:
    x_hat: np.ndarray
    x_T: np.ndarray
    a_N: float
    objective: float
    inner_residual: float


def largest_eigenvalue(H: np.ndarray) -> float:
    """Largest eigenvalue of ``H^T H`` from the smaller of the two Gram matrices."""
    if H.size == 0:
        return 0.0
    small = H @ H.T if H.shape[0] <= H.shape[1] else H.T @ H
    return float(np.linalg.eigvalsh(small)[-1])


def _round_up(x: float, bits: int = 20) -> float:
    """Round up to ``bits`` mantissa bits so tiny perturbations of ``x`` rarely change it."""
    if x <= 0:
        return 0.0
    m, e = math.frexp(x)
    return math.ldexp(math.ceil(m * 2**bits), e - bits)


@dataclass
class BoxProblem:
    """Cached quantities for repeated box solves on one instance ``(H, s)``.

    With ``canonical`` set, every product goes through order-invariant
    reductions (see :mod:`linops`) and the Gram matrix is not formed.
    """

    ops: LinearOps
    s: np.ndarray
    gram: Optional[np.ndarray]
    hts: np.ndarray
    lipschitz: float
    _affine: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, H, s, canonical: bool = False) -> "BoxProblem":
        H = np.asarray(H, dtype=float)
        s = np.asarray(s, dtype=float)
        if H.ndim != 2 or s.shape != (H.shape[0],):
            raise ValueError("H must be K x N and s of length K")
        ops = LinearOps(H, canonical)
        gram = None if canonical else H.T @ H
        return cls(ops, s, gram, ops.rmv(s), _round_up(largest_eigenvalue(H)))

    @property
    def H(self) -> np.ndarray:
        return self.ops.H

    @property
    def N(self) -> int:
        return self.ops.shape[1]

    def value(self, x: np.ndarray, rho: float) -> float:
        r = self.s - self.ops.mv(x)
        return (self.ops.sq_norm(r) + rho * self.ops.sq_norm(x)) / self.N

    def grad(self, x: np.ndarray, rho: float) -> np.ndarray:
        # gradient of (1/2)||s - Hx||^2 + (rho/2)||x||^2
        if self.gram is None:
            return self.ops.rmv(self.ops.mv(x) - self.s) + rho * x
        return self.gram @ x - self.hts + rho * x


def _clamp(v: np.ndarray, a: float) -> np.ndarray:
    # raw ufuncs skip the dispatch overhead of np.clip, which dominates at small N
    return np.minimum(np.maximum(v, -a, out=v), a, out=v)


def _gradient_step_map(problem: BoxProblem, rho: float, step: float):
    """``x -> x - step * grad(x)`` as ``M @ x + c``, cached per ``(rho, step)``; ``None`` in canonical mode."""
    if problem.gram is None:
        return None
    key = (rho, step)
    if key not in problem._affine:
        M = -step * problem.gram
        M[np.diag_indices_from(M)] += 1.0 - step * rho
        problem._affine.clear()
        problem._affine[key] = (M, step * problem.hts)
    return problem._affine[key]


def pg_residual(problem: BoxProblem, x: np.ndarray, a: float, rho: float, omega: float) -> float:
    """Projected-gradient fixed-point gap ``||x - P(x - omega grad)|| / (omega sqrt(N))``."""
    step = _clamp(x - omega * problem.grad(x, rho), a)
    return math.sqrt(problem.ops.sq_norm(x - step)) / (omega * math.sqrt(problem.N))


def _box_pg(
    problem: BoxProblem,
    a: float,
    rho: float,
    tol: float,
    x0: Optional[np.ndarray],
    max_iter: int,
    accelerate: bool,
    omega: Optional[float],
) -> tuple[np.ndarray, int, float]:
    step = 1.0 / (problem.lipschitz + rho)
    omega = step if omega is None else omega
    x = np.zeros(problem.N) if x0 is None else np.clip(np.asarray(x0, dtype=float), -a, a)
    if a == 0:
        return np.zeros(problem.N), 0, 0.0
    check_every = 10
    stall_check = rho == 0
    prev_val = math.inf
    y, t_mom = x, 1.0
    affine = _gradient_step_map(problem, rho, step)
    for it in range(1, max_iter + 1):
        base = y if accelerate else x
        if affine is None:
            x_new = _clamp(base - step * problem.grad(base, rho), a)
        else:
            x_new = _clamp(np.add(affine[0] @ base, affine[1]), a)
        if accelerate:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            # gradient-based restart keeps the accelerated variant monotone in practice
            if problem.ops.dot(base - x_new, x_new - x) > 0:
                t_next, y = 1.0, x_new
            else:
                y = x_new + ((t_mom - 1.0) / t_next) * (x_new - x)
            t_mom = t_next
        x = x_new
        if it % check_every == 0:
            res = pg_residual(problem, x, a, rho, omega)
            if res <= tol:
                return x, it, res
            if stall_check:
                val = problem.value(x, rho)
                if abs(prev_val - val) <= OBJECTIVE_STALL:
                    return x, it, res
                prev_val = val
    return x, max_iter, pg_residual(problem, x, a, rho, omega)


def solve_box_problem(
    problem: BoxProblem,
    a: float,
    rho: float,
    tol: float = 1e-10,
    x0: Optional[np.ndarray] = None,
    accelerate: bool = False,
    omega: Optional[float] = None,
    max_iter: Optional[int] = None,
    strict: bool = False,
) -> tuple[np.ndarray, float, float]:
    """Box solve on a prepared instance; returns ``(x_a, f_N, residual)``."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    if max_iter is None:
        max_iter = INNER_MAX_ITER * (RHO_ZERO_ITER_FACTOR if rho == 0 else 1)
    x, _, res = _box_pg(problem, a, rho, tol, x0, max_iter, accelerate, omega)
    if strict and res > tol and rho > 0:
        raise NumericalFailure("box solve hit the iteration cap", residual=res, a=a, rho=rho)
    return x, problem.value(x, rho), res


def solve_box(
    H, s, a: float, rho: float, tol: float = 1e-10, canonical: bool = False, **kwargs
) -> tuple[np.ndarray, float]:
    """Minimise ``(1/N)||s - Hx||^2 + (rho/N)||x||^2`` over ``[-a, a]^N``."""
    x, f, _ = solve_box_problem(BoxProblem.build(H, s, canonical), a, rho, tol, **kwargs)
    return x, f


def solve_crq_problem(
    problem: BoxProblem,
    params: RegParams,
    tol: float = 1e-10,
    a_tol: float = OUTER_TOL,
    accelerate: bool = False,
) -> PrecodeOutput:
    rho, lam = params.rho, params.lam
    a_hi = math.sqrt(problem.ops.sq_norm(problem.s) / (problem.N * lam))
    warm = {"x": None}

    def outer(a: float) -> float:
        x, f, _ = solve_box_problem(problem, a, rho, tol, x0=warm["x"], accelerate=accelerate)
        warm["x"] = x
        return f + lam * a * a

    a_opt = golden_section(outer, 0.0, a_hi, tol=a_tol)
    x, _, res = solve_box_problem(problem, a_opt, rho, tol, x0=warm["x"], accelerate=accelerate)
    a_n = float(np.max(np.abs(x))) if x.size else 0.0
    # objective at the returned point, with the realised l_inf norm
    objective = problem.value(x, rho) + lam * a_n * a_n
    return PrecodeOutput(x, quantize_sign(x), a_n, objective, res)


def solve_crq(H, s, params: RegParams, tol: float = 1e-10, canonical: bool = False, **kwargs) -> PrecodeOutput:
    return solve_crq_problem(BoxProblem.build(H, s, canonical), params, tol, **kwargs)


def quantize_sign(x: np.ndarray) -> np.ndarray:
    """One-bit quantization with zero mapped to +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def precode(H, s, params: RegParams, tol: float = 1e-10, **kwargs) -> PrecodeOutput:
    return solve_crq(H, s, params, tol, **kwargs)


def squid_params(sigma2: float, K: int, N: int) -> RegParams:
    """Regularisation that turns the relaxed problem into the SQUID precoder."""
    if K <= 0 or N <= 0:
        raise ValueError("K and N must be positive")
    return RegParams(0.0, sigma2 * K / N)
