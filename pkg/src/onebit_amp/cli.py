"""Command-line front end.

    onebit-amp predict      --config cfg.json [--output out.csv]
    onebit-amp optimize     --config cfg.json
    onebit-amp simulate     --config cfg.json --threads 4
    onebit-amp sweep        --config cfg.json
    onebit-amp distribution --config cfg.json

Configs are JSON objects.  ``--set key=value`` overrides a key (the value is
parsed as JSON when possible).  Exit status is 0 on success, 2 for
configuration errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .asymptotics import sep_predict, sign_channel_at
from .errors import ConfigError, NumericalFailure
from .fixed_point import RegParams, SystemConfig, minimize_a, solve_fixed_point
from .optimal_params import fmt17, grid_search_sep, optimal_design, sep_at
from .sim_harness import (
    TrialConfig,
    distribution_check,
    resolve_params,
    run_sweep,
    sigma2_from_snr_db,
    snr_db_from_sigma2,
    users_for,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_NOISE_KEYS = {"sigma2", "snr_db"}
_PARAM_KEYS = {"params", "rho", "lambda"}

ALLOWED_KEYS = {
    "predict": {"delta"} | _NOISE_KEYS | _PARAM_KEYS,
    "optimize": {"delta"} | _NOISE_KEYS,
    "simulate": {"delta", "N", "K", "trials", "seed", "backend", "tol"} | _NOISE_KEYS | _PARAM_KEYS,
    "sweep": {"delta", "rho_start", "rho_stop", "rho_step", "lambda_start", "lambda_stop", "lambda_step"}
    | _NOISE_KEYS,
    "distribution": {"delta", "N", "instances", "seed", "epsilons", "tol"} | _NOISE_KEYS | _PARAM_KEYS,
}
REQUIRED_KEYS = {
    "predict": {"delta"},
    "optimize": {"delta"},
    "simulate": {"delta", "N", "trials"},
    "sweep": {"delta"},
    "distribution": {"delta", "N"},
}


# ---------------------------------------------------------------------------
# config handling


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: Optional[str], overrides: list, seed: Optional[int]) -> dict:
    cfg: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        cfg[key.strip()] = _parse_value(value)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def validate(command: str, cfg: dict) -> None:
    unknown = sorted(set(cfg) - ALLOWED_KEYS[command])
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    missing = sorted(REQUIRED_KEYS[command] - set(cfg))
    if missing:
        raise ConfigError(f"missing required key(s) for {command}: {', '.join(missing)}")
    noise = _NOISE_KEYS & set(cfg)
    if len(noise) > 1:
        raise ConfigError("sigma2 and snr_db are mutually exclusive")
    if command != "distribution" and not noise:
        raise ConfigError("one of sigma2 or snr_db is required")
    if "params" in cfg and ({"rho", "lambda"} & set(cfg)):
        raise ConfigError("params selector and explicit rho/lambda are mutually exclusive")
    if "params" in cfg and cfg["params"] not in ("squid", "optimal"):
        raise ConfigError(f"params must be 'squid' or 'optimal', got {cfg['params']!r}")
    if command in ("predict", "simulate") and "params" not in cfg and not {"rho", "lambda"} <= set(cfg):
        raise ConfigError("give either params ('squid' | 'optimal') or both rho and lambda")
    for key in ("delta", "N", "K", "trials", "instances"):
        if key not in cfg:
            continue
        values = cfg[key] if key == "delta" and command == "distribution" else [cfg[key]]
        for v in _as_list(values):
            if not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
                raise ConfigError(f"{key} must be a positive number, got {v!r}")
    for key in ("N", "K", "trials", "instances", "seed"):
        if key in cfg and not isinstance(cfg[key], int):
            raise ConfigError(f"{key} must be an integer")
    if "seed" in cfg and not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if "backend" in cfg and cfg["backend"] not in ("oracle", "amp"):
        raise ConfigError("backend must be 'oracle' or 'amp'")


def config_hash(command: str, cfg: dict) -> str:
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def noise_levels(cfg: dict) -> list[tuple[float, float]]:
    """``(snr_db, sigma2)`` pairs in config order."""
    if "snr_db" in cfg:
        return [(float(d), sigma2_from_snr_db(float(d))) for d in _as_list(cfg["snr_db"])]
    out = []
    for s2 in _as_list(cfg["sigma2"]):
        s2 = float(s2)
        if s2 < 0:
            raise ConfigError("sigma2 must be nonnegative")
        out.append((snr_db_from_sigma2(s2) if s2 > 0 else math.inf, s2))
    return out


def single_noise(cfg: dict) -> tuple[float, float]:
    levels = noise_levels(cfg)
    if len(levels) != 1:
        raise ConfigError("this command takes a single noise level")
    return levels[0]


def param_spec(cfg: dict):
    if "params" in cfg:
        return cfg["params"]
    try:
        return RegParams(float(cfg["rho"]), float(cfg["lambda"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def grid(start: float, stop: float, step: float) -> np.ndarray:
    if step <= 0 or stop < start:
        raise ConfigError("grid needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.array([round(start + i * step, 12) for i in range(n)])


# ---------------------------------------------------------------------------
# commands


def _csv_text(header_lines: list, columns: list, rows: list) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt17(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def cmd_predict(cfg: dict, provenance: list, threads: int = 1) -> tuple[str, int]:
    delta = float(cfg["delta"])
    spec = param_spec(cfg)
    rows, status = [], EXIT_OK
    for snr_db, s2 in noise_levels(cfg):
        config = SystemConfig(delta, s2)
        params = resolve_params(spec, config)
        try:
            a_star, tau2, gamma = minimize_a(params, config)
            sol = solve_fixed_point(a_star, params, config)
            ch = sign_channel_at(sol, delta)
            rows.append(
                [snr_db, params.rho, params.lam, a_star, math.sqrt(tau2), gamma, ch.alpha_bar, ch.beta_bar,
                 sep_predict(ch, s2)]
            )
        except NumericalFailure as exc:
            status = EXIT_NUMERIC
            rows.append([snr_db, params.rho, params.lam] + [math.nan] * 6)
            print(f"snr_db={snr_db}: {exc}", file=sys.stderr)
    cols = ["snr_db", "rho", "lambda", "a_star", "tau_star", "gamma_star", "alpha0", "beta0", "sep_theory"]
    return _csv_text(provenance, cols, rows), status


def cmd_optimize(cfg: dict, provenance: list, threads: int = 1) -> tuple[str, int]:
    delta = float(cfg["delta"])
    _, s2 = single_noise(cfg)
    design = optimal_design(delta, s2)
    record = {
        "provenance": provenance,
        "z_hat": design.z_hat,
        "z0": design.z0 if math.isfinite(design.z0) else "inf",
        "a_hat": design.a_hat,
        "tau_hat": design.tau_hat,
        "lambda_hat": design.lambda_hat,
        "rho_hat": design.rho_hat,
        "sep_at_optimum": sep_at(design.params, SystemConfig(delta, s2)),
    }
    return json.dumps(record, indent=2) + "\n", EXIT_OK


def _system(cfg: dict, sigma2: float) -> SystemConfig:
    delta, N = float(cfg["delta"]), int(cfg["N"])
    K = int(cfg.get("K", users_for(delta, N)))
    return SystemConfig(delta, sigma2, N, K)


def cmd_simulate(cfg: dict, provenance: list, threads: int = 1) -> tuple[str, int]:
    levels = noise_levels(cfg)
    system = _system(cfg, levels[0][1])
    tc = TrialConfig(
        system,
        param_spec(cfg),
        int(cfg["trials"]),
        int(cfg.get("seed", 0)),
        cfg.get("backend", "oracle"),
        float(cfg.get("tol", 1e-8)),
    )
    results = run_sweep(tc, [s2 for _, s2 in levels], workers=threads)
    records = []
    for (snr_db, _), res in zip(levels, results):
        rec = res.record(system)
        rec["config"]["snr_db"] = snr_db
        records.append(rec)
    return json.dumps({"provenance": provenance, "records": records}, indent=2) + "\n", EXIT_OK


def cmd_sweep(cfg: dict, provenance: list, threads: int = 1) -> tuple[str, int]:
    delta = float(cfg["delta"])
    _, s2 = single_noise(cfg)
    rho_grid = grid(cfg.get("rho_start", 0.0), cfg.get("rho_stop", 0.5), cfg.get("rho_step", 0.01))
    lam_grid = grid(cfg.get("lambda_start", 0.01), cfg.get("lambda_stop", 0.5), cfg.get("lambda_step", 0.01))
    result = grid_search_sep(delta, s2, rho_grid, lam_grid, workers=threads)
    status = EXIT_NUMERIC if result.failures else EXIT_OK
    for rho, lam, msg in result.failures:
        print(f"cell rho={rho} lambda={lam}: {msg}", file=sys.stderr)
    return result.to_csv(provenance), status


def cmd_distribution(cfg: dict, provenance: list, threads: int = 1) -> tuple[str, int]:
    s2 = single_noise(cfg)[1] if _NOISE_KEYS & set(cfg) else sigma2_from_snr_db(15.0)
    eps = [float(e) for e in cfg.get("epsilons", [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5])]
    rows = []
    for delta in _as_list(cfg["delta"]):
        sub = dict(cfg, delta=float(delta))
        system = _system(sub, s2)
        spec = cfg.get("params", "optimal") if "rho" not in cfg else param_spec(cfg)
        params = resolve_params(spec, system)
        tc = TrialConfig(system, params, int(cfg.get("instances", 20)), int(cfg.get("seed", 0)), "oracle",
                         float(cfg.get("tol", 1e-8)))
        _, xhats = run_sweep(tc, [s2], keep_xhat=True, workers=threads)
        report = distribution_check(xhats[params], params, system, eps)
        rows.append({"delta": float(delta), "rho": params.rho, "lambda": params.lam, **report.as_dict()})
    return json.dumps({"provenance": provenance, "reports": rows}, indent=2) + "\n", EXIT_OK


COMMANDS: dict[str, Callable] = {
    "predict": cmd_predict,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "distribution": cmd_distribution,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onebit-amp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--output", help="output file (default: stdout)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for trials and grid cells")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        validate(args.command, cfg)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        provenance = [f"onebit_amp {__version__}", f"command={args.command}",
                      f"config_sha256={config_hash(args.command, cfg)}"]
        text, status = COMMANDS[args.command](cfg, provenance, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc} {exc.details}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
