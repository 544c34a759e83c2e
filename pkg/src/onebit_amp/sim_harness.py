"""Monte Carlo experiments on finite systems.

Every random draw comes from a Philox generator keyed by ``(seed, trial,
stream)``, so a trial's channel, symbols and noise do not depend on which other
trials ran or in what order.  Aggregates are formed with exactly rounded sums
(:func:`math.fsum`) and integer error counts, so they are order independent
too.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .amp_engine import amp_solve
from .asymptotics import abs_moment, cluster_proportion_at, sep_predict, sign_channel_at
from .convex_oracle import BoxProblem, quantize_sign, solve_crq_problem, squid_params
from .errors import ConfigError, NumericalFailure
from .fixed_point import FixedPointSolution, RegParams, SystemConfig, minimize_a, solve_fixed_point
from .optimal_params import optimal_design


STREAM_CHANNEL = 0
STREAM_SYMBOLS = 1
STREAM_NOISE = 2
MAX_FAILURE_RATE = 0.01


def sigma2_from_snr_db(snr_db: float) -> float:
    """Noise variance for a given SNR in dB, with unit per-user signal power."""
    return 10.0 ** (-snr_db / 10.0)


def snr_db_from_sigma2(sigma2: float) -> float:
    return -10.0 * math.log10(sigma2)


def users_for(delta: float, N: int) -> int:
    return int(round(delta * N))


def make_rng(seed: int, trial: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def gen_channel(K: int, N: int, seed: int, trial: int = 0) -> np.ndarray:
    """``K x N`` matrix with i.i.d. ``N(0, 1/K)`` entries."""
    if K < 1 or N < 1:
        raise ValueError("K and N must be positive")
    return make_rng(seed, trial, STREAM_CHANNEL).standard_normal((K, N)) / math.sqrt(K)


def gen_symbols(K: int, seed: int, trial: int = 0) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be positive")
    bits = make_rng(seed, trial, STREAM_SYMBOLS).integers(0, 2, size=K)
    return 2.0 * bits - 1.0


def gen_noise(K: int, seed: int, trial: int = 0) -> np.ndarray:
    """Unit-variance noise; scaled by ``sigma`` at the receiver."""
    return make_rng(seed, trial, STREAM_NOISE).standard_normal(K)


ParamSpec = Union[RegParams, str]


@dataclass(frozen=True)
class TrialConfig:
    config: SystemConfig
    params: ParamSpec
    trials: int
    seed: int = 0
    precoder_backend: str = "oracle"
    tol: float = 1e-8
    accelerate: bool = True
    amp_onsager: str = "state_evolution"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.config.N is None or self.config.K is None:
            raise ConfigError("simulation needs N and K in the system config")
        if self.precoder_backend not in ("oracle", "amp"):
            raise ConfigError(f"unknown precoder backend {self.precoder_backend!r}")
        if isinstance(self.params, str) and self.params not in ("squid", "optimal"):
            raise ConfigError(f"unknown parameter selector {self.params!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def resolve_params(spec: ParamSpec, config: SystemConfig) -> RegParams:
    if isinstance(spec, RegParams):
        return spec
    if spec == "squid":
        if config.K is not None and config.N is not None:
            return squid_params(config.sigma2, config.K, config.N)
        return RegParams(0.0, config.sigma2 * config.delta)
    if spec == "optimal":
        return optimal_design(config.delta, config.sigma2).params
    raise ConfigError(f"unknown parameter selector {spec!r}")


@dataclass
class TrialResult:
    sigma2: float
    params: RegParams
    trials: int
    errors: int
    symbols: int
    sep_empirical: float
    sep_stderr: float
    sep_theory: float
    alpha_emp: float
    alpha_stderr: float
    beta_emp: float
    beta_stderr: float
    alpha_theory: float
    beta_theory: float
    linf_mean: float
    linf_std: float
    a_star: float
    failures: int = 0

    def record(self, config: SystemConfig) -> dict:
        return {
            "config": {"delta": config.delta, "sigma2": self.sigma2, "N": config.N, "K": config.K},
            "params": {"rho": self.params.rho, "lambda": self.params.lam},
            "sep_theory": self.sep_theory,
            "sep_empirical": self.sep_empirical,
            "sep_stderr": self.sep_stderr,
            "alpha_emp": self.alpha_emp,
            "beta_emp": self.beta_emp,
            "linf_mean": self.linf_mean,
        }


@dataclass
class _Precoded:
    x_hat: np.ndarray
    x_T: np.ndarray
    a_N: float


def _fsum_mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _fsum_stderr(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return math.nan
    m = _fsum_mean(values)
    var = math.fsum((v - m) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


def precode_instance(
    H: np.ndarray,
    s: np.ndarray,
    params: RegParams,
    backend: str,
    fixed_point: Optional[FixedPointSolution] = None,
    tol: float = 1e-8,
    accelerate: bool = True,
    amp_onsager: str = "state_evolution",
) -> _Precoded:
    if backend == "oracle":
        out = solve_crq_problem(BoxProblem.build(H, s), params, tol=tol, accelerate=accelerate)
        return _Precoded(out.x_hat, out.x_T, out.a_N)
    if fixed_point is None:
        raise ValueError("the AMP backend needs the asymptotic fixed point")
    state = amp_solve(H, s, fixed_point.a, fixed_point.gamma, tol=tol, onsager=amp_onsager)
    x = state.x_t
    return _Precoded(x, quantize_sign(x), float(np.max(np.abs(x))))


def _theory(params: RegParams, config: SystemConfig) -> FixedPointSolution:
    a_star, _, _ = minimize_a(params, config)
    return solve_fixed_point(a_star, params, config)


@dataclass
class _TrialStats:
    trial: int
    errors: tuple  # one count per noise level
    alpha: float
    beta: float
    a_N: float
    x_hat: Optional[np.ndarray] = None


def _one_trial(tc: TrialConfig, params: RegParams, theory, trial: int, sigma2s: tuple, keep_xhat: bool):
    K, N = tc.config.K, tc.config.N
    H = gen_channel(K, N, tc.seed, trial)
    s = gen_symbols(K, tc.seed, trial)
    try:
        pre = precode_instance(H, s, params, tc.precoder_backend, theory, tc.tol, tc.accelerate, tc.amp_onsager)
    except NumericalFailure as exc:
        return trial, str(exc)
    received = H @ pre.x_T
    alpha_k = float(np.dot(s, received)) / K
    beta_k = float(np.mean((received - alpha_k * s) ** 2))
    noise = gen_noise(K, tc.seed, trial)
    errors = []
    for s2 in sigma2s:
        y = received + math.sqrt(s2) * noise
        detected = np.where(y >= 0, 1.0, -1.0)
        errors.append(int(np.count_nonzero(detected != s)))
    return _TrialStats(trial, tuple(errors), alpha_k, beta_k, pre.a_N, pre.x_hat if keep_xhat else None)


def _trial_chunk(args):
    tc, params, theory, trials, sigma2s, keep_xhat = args
    return [_one_trial(tc, params, theory, t, sigma2s, keep_xhat) for t in trials]


def _collect(tc: TrialConfig, params, theory, sigma2s: tuple, keep_xhat: bool, workers: int) -> list:
    trials = list(range(tc.trials))
    if workers <= 1:
        out = _trial_chunk((tc, params, theory, trials, sigma2s, keep_xhat))
    else:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [trials[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_trial_chunk, [(tc, params, theory, c, sigma2s, keep_xhat) for c in chunks])
            out = [r for part in parts for r in part]
    stats, failures = [], 0
    for item in sorted(out, key=lambda r: r.trial if isinstance(r, _TrialStats) else r[0]):
        if isinstance(item, _TrialStats):
            stats.append(item)
        else:
            failures += 1
            warnings.warn(f"trial {item[0]}: precoder failed ({item[1]}); excluded")
    if failures > MAX_FAILURE_RATE * tc.trials:
        raise NumericalFailure("too many precoder failures", failures=failures, trials=tc.trials)
    if not stats:
        raise NumericalFailure("every trial failed")
    return stats, failures


def run_sweep(tc: TrialConfig, sigma2_values: Sequence[float], keep_xhat: bool = False, workers: int = 1):
    """Run the experiment for several noise levels on shared channel draws.

    The precoder output does not depend on the noise level unless the
    regularisation does, so each distinct parameter pair is precoded once per
    trial and reused across the noise levels that share it.  Results are
    identical for any ``workers`` count.
    """
    cfg = tc.config
    K = cfg.K
    points = []
    for s2 in sigma2_values:
        c = cfg.with_sigma2(s2)
        points.append((float(s2), resolve_params(tc.params, c)))
    groups: dict = {}
    for idx, (_, p) in enumerate(points):
        groups.setdefault(p, []).append(idx)

    results: list = [None] * len(points)
    xhats: dict = {}
    for params, idxs in groups.items():
        theory = _theory(params, cfg)
        sigma2s = tuple(points[i][0] for i in idxs)
        stats, failures = _collect(tc, params, theory, sigma2s, keep_xhat, workers)
        channel = sign_channel_at(theory, cfg.delta)
        alphas = [st.alpha for st in stats]
        betas = [st.beta for st in stats]
        linf = [st.a_N for st in stats]
        for col, i in enumerate(idxs):
            s2 = points[i][0]
            n_sym = K * len(stats)
            errors = sum(st.errors[col] for st in stats)
            p_hat = errors / n_sym
            results[i] = TrialResult(
                sigma2=s2,
                params=params,
                trials=len(stats),
                errors=errors,
                symbols=n_sym,
                sep_empirical=p_hat,
                sep_stderr=math.sqrt(p_hat * (1.0 - p_hat) / n_sym),
                sep_theory=sep_predict(channel, s2),
                alpha_emp=_fsum_mean(alphas),
                alpha_stderr=_fsum_stderr(alphas),
                beta_emp=_fsum_mean(betas),
                beta_stderr=_fsum_stderr(betas),
                alpha_theory=channel.alpha_bar,
                beta_theory=channel.beta_bar,
                linf_mean=_fsum_mean(linf),
                linf_std=_fsum_stderr(linf) * math.sqrt(len(linf)) if len(linf) > 1 else 0.0,
                a_star=theory.a,
                failures=failures,
            )
        if keep_xhat:
            xhats[params] = [st.x_hat for st in stats]
    if keep_xhat:
        return results, xhats
    return results


def run_trials(tc: TrialConfig) -> TrialResult:
    return run_sweep(tc, [tc.config.sigma2])[0]


@dataclass
class DistributionReport:
    a_star: float
    linf_mean: float
    linf_rel_err: float
    second_moment_emp: float
    second_moment_theory: float
    abs_moment_emp: float
    abs_moment_theory: float
    cluster: list = field(default_factory=list)  # (epsilon, empirical, theory)

    def as_dict(self) -> dict:
        return asdict(self)


def distribution_check(
    x_hats: Sequence[np.ndarray],
    params: RegParams,
    config: SystemConfig,
    epsilons: Sequence[float] = (0.05, 0.1, 0.2),
) -> DistributionReport:
    """Compare solved precoder vectors against the truncated-Gaussian predictions."""
    if not x_hats:
        raise ValueError("need at least one solved instance")
    sol = _theory(params, config)
    linf = [float(np.max(np.abs(x))) for x in x_hats]
    second = [float(np.mean(x * x)) for x in x_hats]
    first = [float(np.mean(np.abs(x))) for x in x_hats]
    cluster = []
    for eps in epsilons:
        frac = [float(np.mean(np.abs(x) >= m * (1.0 - eps))) for x, m in zip(x_hats, linf)]
        cluster.append((float(eps), _fsum_mean(frac), cluster_proportion_at(eps, sol)))
    lm = _fsum_mean(linf)
    return DistributionReport(
        a_star=sol.a,
        linf_mean=lm,
        linf_rel_err=abs(lm - sol.a) / sol.a,
        second_moment_emp=_fsum_mean(second),
        second_moment_theory=config.delta * (sol.tau2 - 1.0),
        abs_moment_emp=_fsum_mean(first),
        abs_moment_theory=abs_moment(sol.tau2, sol.gamma, sol.a),
        cluster=cluster,
    )
