"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N [PASS|FAIL]`` line with the measured
numbers and then asserts.  ``ARTIFACT_FULL=1`` runs the SEP reproduction at
10^4 trials with the 3-standard-error band; the default is 10^3 trials with a
5-standard-error band.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from onebit_amp.amp_engine import amp_run, amp_solve, post_process, state_evolution
from onebit_amp.asymptotics import sep_predict, sign_channel_at
from onebit_amp.convex_oracle import BoxProblem, quantize_sign, solve_box, solve_crq, solve_crq_problem
from onebit_amp.fixed_point import (
    F_PRIME_AT_ZERO,
    RegParams,
    SystemConfig,
    f_prime,
    f_value,
    minimize_a,
    solve_fixed_point,
)
from onebit_amp.optimal_params import grid_search_sep, optimal_design, sep_at, solve_z0, z2h, zeta_of_z
from onebit_amp.scalar_kernels import eta_a, mollify, sign_quantizer, trunc_moments
from onebit_amp.sim_harness import (
    TrialConfig,
    distribution_check,
    gen_channel,
    gen_symbols,
    run_sweep,
    sigma2_from_snr_db,
    users_for,
)

DELTAS = (0.25, 0.5, 1.0)
SIGMA2S = (0.01, 0.0316, 0.1)


def solution_at_optimum(params, config):
    a, _, _ = minimize_a(params, config)
    return solve_fixed_point(a, params, config)


def second_moment_by_quad(tau2, gamma, a):
    tau = math.sqrt(tau2)
    c = a * (gamma + 1) / tau
    inner = integrate.quad(lambda z: (tau * z / (gamma + 1)) ** 2 * stats.norm.pdf(z), -c, c, epsabs=1e-14, epsrel=1e-13)[0]
    return inner + 2 * a * a * stats.norm.sf(c)


def test_criterion_01_fixed_point(report):
    rng = np.random.default_rng(20240601)
    draws = [(rng.uniform(0.01, 3.0), rng.uniform(0.0, 2.0), rng.uniform(0.01, 1.0), rng.uniform(0.1, 2.0)) for _ in range(100)]
    start = time.perf_counter()
    sols = [solve_fixed_point(a, RegParams(rho, lam), SystemConfig(delta)) for a, rho, lam, delta in draws]
    moments = [trunc_moments(s.tau2, s.gamma, s.a)[2] for s in sols]
    elapsed = time.perf_counter() - start
    worst_res = max(max(abs(r) for r in s.residuals) for s in sols)
    worst_quad = max(abs(m - second_moment_by_quad(s.tau2, s.gamma, s.a)) for s, m in zip(sols, moments))
    ok = worst_res <= 1e-12 and worst_quad <= 1e-8 and elapsed < 1.0
    report(1, "fixed point", ok, f"max residual {worst_res:.2e} (<=1e-12), closed form vs quad {worst_quad:.2e} (<=1e-8), "
           f"100 solves in {elapsed:.3f}s (<1s)")
    assert ok


def test_criterion_02_f_prime(report):
    params, config = RegParams(0.2, 0.2), SystemConfig(0.5)
    at_zero = f_prime(0.0, params, config)
    # f' is smooth in a near 0, so Richardson extrapolation from positive a removes the linear term
    h = 1e-6
    limit = 2 * f_prime(h, params, config) - f_prime(2 * h, params, config)
    lim_err = max(abs(at_zero - F_PRIME_AT_ZERO), abs(limit - F_PRIME_AT_ZERO))
    worst_fd = 0.0
    for rho in (0.05, 0.2, 0.8):
        for lam in (0.05, 0.2, 0.5):
            for delta in (0.25, 0.5, 1.0):
                p, c = RegParams(rho, lam), SystemConfig(delta)
                for a in np.linspace(0.05, 2.0, 9):
                    step = 1e-5
                    fd = (f_value(a + step, p, c) - f_value(a - step, p, c)) / (2 * step)
                    worst_fd = max(worst_fd, abs(fd - f_prime(a, p, c)))
    ok = lim_err <= 1e-9 and worst_fd <= 1e-4
    report(2, "f' calibration", ok, f"|f'(0+) + 2 sqrt(2/pi)| = {lim_err:.2e} (<=1e-9), "
           f"max |f' - finite difference| over 243 points = {worst_fd:.2e} (<=1e-4)")
    assert ok


def test_criterion_03_amp_matches_oracle(report):
    delta, rho = 0.5, 0.2
    params, config = RegParams(rho, 0.2), SystemConfig(delta)
    sol = solution_at_optimum(params, config)
    N = 512
    K = users_for(delta, N)
    errs, iters = [], []
    for seed in range(20):
        H, s = gen_channel(K, N, seed), gen_symbols(K, seed)
        state = amp_solve(H, s, sol.a, sol.gamma, tol=1e-12)
        x_ref, _ = solve_box(H, s, sol.a, rho, tol=1e-11, accelerate=True)
        errs.append(np.linalg.norm(state.x_t - x_ref) / math.sqrt(N))
        iters.append(state.t)

    N_big = 4096
    K_big = users_for(delta, N_big)
    trace = state_evolution(sol.a, sol.gamma, delta)
    worst_se = 0.0
    for mode in ("empirical", "state_evolution"):
        for seed in range(2):
            H, s = gen_channel(K_big, N_big, 100 + seed), gen_symbols(K_big, 100 + seed)
            _, hist = amp_run(H, s, sol.a, sol.gamma, max_iter=11, tol=0.0, record_history=True, onsager=mode)
            for t in range(11):
                worst_se = max(worst_se, abs(hist.r_norm2[t] - trace.tau2_seq[t]) / trace.tau2_seq[t])
    ok = max(errs) <= 1e-3 and worst_se <= 0.05
    report(3, "AMP = oracle", ok, f"N=512, 20 seeds: max ||x_amp - x_oracle||/sqrt(N) = {max(errs):.2e} (<=1e-3, "
           f"{min(iters)}-{max(iters)} iterations); N=4096, t<=10: max |<r^2>/tau_t^2 - 1| = {worst_se:.3%} (<=5%)")
    assert ok


def test_criterion_04_distribution(report):
    params = RegParams(0.2, 0.2)
    N = 2048
    config = SystemConfig(0.5, 0.1, N=N, K=users_for(0.5, N))
    _, xh = run_sweep(TrialConfig(config, params, 2, seed=7), [0.1], keep_xhat=True)
    rep = distribution_check(xh[params], params, config, ())
    worst_second = max(abs(np.mean(x * x) / rep.second_moment_theory - 1) for x in xh[params])
    worst_linf = max(abs(np.max(np.abs(x)) / rep.a_star - 1) for x in xh[params])

    worst_cluster, cluster_rows = 0.0, []
    eps = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
    for delta in DELTAS:
        small = SystemConfig(delta, sigma2_from_snr_db(15.0), N=128, K=users_for(delta, 128))
        p = optimal_design(delta, small.sigma2).params
        _, xs = run_sweep(TrialConfig(small, p, 100, seed=11), [small.sigma2], keep_xhat=True)
        crep = distribution_check(xs[p], p, small, eps)
        gap = max(abs(e - t) for _, e, t in crep.cluster)
        worst_cluster = max(worst_cluster, gap)
        cluster_rows.append(f"delta={delta}: {gap:.3f}")
    ok = worst_second <= 0.05 and worst_linf <= 0.05 and worst_cluster <= 0.05
    report(4, "empirical distribution", ok, f"N=2048: max |(1/N)||x||^2 / delta(tau^2-1) - 1| = {worst_second:.2%}, "
           f"max | ||x||_inf / a* - 1| = {worst_linf:.2%} (<=5%); N=128 cluster gaps {', '.join(cluster_rows)} (<=0.05)")
    assert ok


def test_criterion_05_sep_curves(report, full_run):
    trials, k_se = (10_000, 3.0) if full_run else (1_000, 5.0)
    N = 128
    snrs = list(range(-10, 31, 5))
    base = SystemConfig(0.5, 1.0, N=N, K=users_for(0.5, N))
    checked, worst, fails = 0, 0.0, []
    for params in (RegParams(0.2, 0.2), RegParams(0.0, 0.3)):
        results = run_sweep(TrialConfig(base, params, trials, seed=2024), [sigma2_from_snr_db(d) for d in snrs])
        for snr, r in zip(snrs, results):
            if r.sep_theory < 1e-3:
                continue
            checked += 1
            stderr = math.sqrt(r.sep_theory * (1 - r.sep_theory) / r.symbols)
            band = max(k_se * stderr, 0.15 * r.sep_theory)
            dev = abs(r.sep_empirical - r.sep_theory)
            worst = max(worst, dev / band)
            if dev > band:
                fails.append(f"({params.rho},{params.lam})@{snr}dB: {r.sep_empirical:.4g} vs {r.sep_theory:.4g}")
    ok = not fails
    report(5, "SEP reproduction", ok, f"{trials} trials, {checked} points with SEP>=1e-3, worst deviation "
           f"{worst:.2f} of band max({k_se:g} stderr, 15%)" + (f"; misses: {'; '.join(fails)}" if fails else ""))
    assert ok


def test_criterion_06_optimum_is_grid_minimum(report):
    rho_grid = np.round(np.arange(0, 51) * 0.01, 12)
    lam_grid = np.round(np.arange(1, 51) * 0.01, 12)
    rows, ok = [], True
    for delta in DELTAS:
        for s2 in SIGMA2S:
            design = optimal_design(delta, s2)
            config = SystemConfig(delta, s2)
            best = sep_at(design.params, config)
            grid = grid_search_sep(delta, s2, rho_grid, lam_grid)
            g_rho, g_lam, g_sep = grid.argmin
            squid = sep_at(RegParams(0.0, s2 * delta), config)
            good = (best <= g_sep * (1 + 1e-12) and g_rho == 0.0 and abs(g_lam - design.lambda_hat) <= 0.01
                    and best < squid and not grid.failures)
            ok &= good
            rows.append(f"d={delta},s2={s2}: lam_hat={design.lambda_hat:.4f} grid ({g_rho:g},{g_lam:g}) "
                        f"{'ok' if good else 'MISS'}")
    report(6, "optimum vs grid and SQUID", ok, "; ".join(rows))
    assert ok


def test_criterion_07_anchor(report):
    lam = optimal_design(0.5, sigma2_from_snr_db(15.0)).lambda_hat
    ok = 0.165 <= lam <= 0.205
    report(7, "15 dB anchor", ok, f"sigma2 = 10^(-SNR/10): lambda_hat = {lam:.5f} in [0.165, 0.205]")
    assert ok


def test_criterion_08_zeta_and_h(report):
    worst_zero, worst_curv, worst_mono, worst_lim, worst_root = 0.0, -math.inf, 0.0, 0.0, 0.0
    for delta in DELTAS:
        z0 = solve_z0(delta)
        top = z0 if math.isfinite(z0) else 10.0
        zs = np.linspace(0.0, top, 2001)
        for s2 in SIGMA2S:
            worst_zero = max(worst_zero, abs(zeta_of_z(0.0, delta, s2) - (-math.sqrt(math.pi / 2) * delta)))
            vals = np.array([zeta_of_z(z, delta, s2) for z in zs])
            worst_curv = max(worst_curv, float(np.max(vals[2:] - 2 * vals[1:-1] + vals[:-2])))
            d = optimal_design(delta, s2)
            worst_root = max(worst_root, abs(zeta_of_z(d.z_hat, delta, s2)))
        h = np.array([z2h(z, delta) for z in np.linspace(0.0, 40.0, 4001)])
        worst_mono = min(worst_mono, float(np.min(np.diff(h))))
        worst_lim = max(worst_lim, abs(z2h(40.0, delta) - 1 / delta))
    ok = worst_zero == 0.0 and worst_curv <= 1e-9 and worst_mono >= 0.0 and worst_lim <= 1e-10 and worst_root <= 1e-12
    report(8, "zeta / h structure", ok, f"|zeta(0) + sqrt(pi/2) delta| = {worst_zero:g}, max second difference "
           f"{worst_curv:.2e} (<=1e-9), min step of z^2h {worst_mono:.1e} (>=0), |z^2h(40) - 1/delta| = {worst_lim:.1e}, "
           f"root residual {worst_root:.1e}")
    assert ok


def test_criterion_09_effective_channel(report):
    delta, params = 0.5, RegParams(0.2, 0.2)
    sol = solution_at_optimum(params, SystemConfig(delta))
    theory = sign_channel_at(sol, delta)
    N = 4096
    K = users_for(delta, N)
    q = sign_quantizer()

    amp_a, amp_b = [], []
    for seed in range(6):
        H, s = gen_channel(K, N, seed), gen_symbols(K, seed)
        state = amp_solve(H, s, sol.a, sol.gamma, tol=1e-10)
        out = post_process(state, H, s, q, sol.gamma, sol.a)
        amp_a.append(out.alpha_emp)
        amp_b.append(float(np.mean(out.noise ** 2)))

    orc_a, orc_b = [], []
    for seed in range(3):
        H, s = gen_channel(K, N, seed), gen_symbols(K, seed)
        out = solve_crq_problem(BoxProblem.build(H, s), params, tol=1e-8, accelerate=True)
        y = H @ out.x_T
        alpha = float(s @ y) / K
        orc_a.append(alpha)
        orc_b.append(float(np.mean((y - alpha * s) ** 2)))

    def within(vals, target):
        m = math.fsum(vals) / len(vals)
        se = float(np.std(vals, ddof=1)) / math.sqrt(len(vals))
        return abs(m - target) <= max(3 * se, 0.1 * abs(target)), m

    checks = [("AMP alpha", amp_a, theory.alpha_bar), ("AMP beta", amp_b, theory.beta_bar),
              ("oracle alpha", orc_a, theory.alpha_bar), ("oracle beta", orc_b, theory.beta_bar)]
    parts, ok = [], True
    for name, vals, target in checks:
        good, m = within(vals, target)
        ok &= good
        parts.append(f"{name} {m:.4f} vs {target:.4f}")
    report(9, "effective channel at N=4096", ok, "; ".join(parts) + " (band max(3 stderr, 10%))")
    assert ok


def test_criterion_10_symmetry_and_determinism(report):
    params = RegParams(0.2, 0.2)
    K, N = 32, 64
    H, s = gen_channel(K, N, 4), gen_symbols(K, 4)
    rng = np.random.default_rng(99)
    rows, cols = rng.permutation(K), rng.permutation(N)
    flips = rng.choice([-1.0, 1.0], size=N)
    checks = {}

    x = np.linspace(-3, 3, 601)
    checks["eta odd"] = np.array_equal(eta_a(-x, 0.7, 0.5), -eta_a(x, 0.7, 0.5))
    smooth = mollify(sign_quantizer(), 0.1)
    checks["mollified sign odd"] = np.array_equal(smooth(-x), -smooth(x))

    base = solve_crq(H, s, params, tol=1e-10, canonical=True, accelerate=True)
    flipped = solve_crq(H, -s, params, tol=1e-10, canonical=True, accelerate=True)
    permuted = solve_crq(H[rows][:, cols], s[rows], params, tol=1e-10, canonical=True, accelerate=True)
    col_flip = solve_crq(H * flips, s, params, tol=1e-10, canonical=True, accelerate=True)
    checks["oracle odd in s"] = np.array_equal(flipped.x_hat, -base.x_hat)
    checks["oracle permutation"] = np.array_equal(permuted.x_hat, base.x_hat[cols])
    checks["oracle column sign flip"] = np.array_equal(col_flip.x_hat, flips * base.x_hat)

    sol = solution_at_optimum(params, SystemConfig(K / N))
    kw = dict(max_iter=4000, tol=1e-12, canonical=True, onsager="state_evolution", damping=0.5)
    a0, _ = amp_run(H, s, sol.a, sol.gamma, **kw)
    a1, _ = amp_run(H, -s, sol.a, sol.gamma, **kw)
    a2, _ = amp_run(H[rows][:, cols], s[rows], sol.a, sol.gamma, **kw)
    checks["AMP odd in s"] = np.array_equal(a1.x_t, -a0.x_t)
    checks["AMP permutation"] = np.array_equal(a2.x_t, a0.x_t[cols])

    small = SystemConfig(0.5, 0.1, N=32, K=16)
    tc = TrialConfig(small, params, 8, seed=2**63 + 5)
    first = [r.record(small) for r in run_sweep(tc, [0.1, 0.01])]
    again = [r.record(small) for r in run_sweep(tc, [0.1, 0.01])]
    pooled = [r.record(small) for r in run_sweep(tc, [0.1, 0.01], workers=2)]
    checks["seeded rerun identical"] = first == again
    checks["worker count invariant"] = first == pooled
    other = [r.record(small) for r in run_sweep(TrialConfig(small, params, 8, seed=6), [0.1, 0.01])]
    checks["seed changes draws"] = first != other
    checks["quantizer maps 0 to +1"] = quantize_sign(np.array([0.0, -0.0]))[0] == 1.0 == quantize_sign(np.array([-0.0]))[0]

    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    report(10, "symmetry and determinism", ok, f"{sum(checks.values())}/{len(checks)} exact checks hold"
           + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok
