"""Command-line entry point: ``bricklayers {verify,simulate,walkers,hydro,compare}``.

Every command reads an optional JSON config (missing keys take the defaults
below), applies ``--seed``/``--replicas`` overrides, writes plot-ready CSV
files plus a JSON report into ``--out`` and exits with

* 0 when every declared check passes,
* 1 when a check fails,
* 2 on a configuration or usage error,
* 3 when the output directory is missing or unwritable.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
import time
import warnings
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BricklayersError, ConfigError, ProfileError
from .exactgen import (
    CylinderFunction,
    IdentityRecord,
    identity_battery,
    identity_record,
    random_profile,
)
from .hydro import PiecewiseProfile, front_track
from .kernel import DEFAULT_TAIL_TOL, ParameterProfile, RateFunction
from .mcsim import (
    SimParams,
    bonferroni_threshold,
    estimate_profile,
    profile_zscores,
    run,
    sample_initial,
)
from .seeding import replica_seeds
from .walkers import (
    WalkerConfig,
    displacement_law,
    gap_tail_ratio,
    master_equation,
    simulate,
    simulate_batch,
    single_shock_mean_profile,
    total_rate_formula,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

EXPONENTIAL_1 = {"kind": "exponential", "beta": 1.0}

DEFAULTS: dict[str, dict] = {
    "verify": {
        "betas": [0.5, 1.0, 2.0],
        "profiles": {"random": 20, "seed": 0, "span": 1.5},
        "phi_sites": [0, 1],
        "tolerance": 1e-8,
        "tail_tol": DEFAULT_TAIL_TOL,
        "counterexample": {
            "rates": [
                {"kind": "custom", "preset": "linear"},
                {"kind": "custom", "preset": "doubling"},
            ],
            "profile": {"theta_left": 1.0, "breakpoints": [[0, 0.0]]},
            "phi_site": 0,
            "beta": 1.0,
            "min_residual": 0.01,
        },
    },
    "simulate": {
        "rate": EXPONENTIAL_1,
        "profile": {"theta_left": 0.3},
        "L": 101,
        "t_end": 1.0,
        "boundary": "frozen",
        "window": None,
        "replicas": 1000,
        "seed": 0,
        "omega_cap": None,
        "record_events": False,
        "workers": 1,
    },
    "compare": {
        "rate": EXPONENTIAL_1,
        "profile": {"theta_left": 0.5, "breakpoints": [[0, -0.5]], "beta": 1.0},
        "L": 201,
        "t_end": 5.0,
        "boundary": "frozen",
        "window": [-30, 30],
        "replicas": 2000,
        "seed": 0,
        "sigma": 4.0,
        "prediction_shift": 0,
        "workers": 1,
    },
    "walkers": {
        "theta_left": 1.5,
        "beta": 1.0,
        "positions": [0.5, 0.5, 0.5],
        "times": [2.0, 20.0],
        "replicas": 100000,
        "seed": 0,
        "sigma": 4.0,
        "law_time": 2.0,
        "tv_tolerance": 0.01,
        "trajectory_time": 20.0,
    },
    "hydro": {
        "rate": EXPONENTIAL_1,
        "profile": {"u_left": 2.0, "breakpoints": [[0.0, 1.0], [1.0, 0.0]]},
        "t_end": 1.0,
        "area_tolerance": 1e-12,
    },
}

RATE_PRESETS: dict[str, Callable[[int], float]] = {
    "linear": lambda z: z + 1.0,
    "doubling": lambda z: 2.0 * z,
}


# ---------------------------------------------------------------------------
# Configuration


def load_config(path: str | Path | None, command: str) -> dict:
    """Defaults for ``command`` updated by the JSON file at ``path``.

    Syntax errors are reported with their line and column; unknown keys are
    rejected so that a typo cannot silently fall back to a default.
    """
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is None:
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}:1:1: top level must be a JSON object")
    unknown = sorted(set(user) - set(cfg))
    if unknown:
        line = _line_of_key(text, unknown[0])
        raise ConfigError(f"{path}:{line}: unknown key(s) {unknown} for '{command}'; allowed: {sorted(cfg)}")
    cfg.update(user)
    return cfg


def _line_of_key(text: str, key: str) -> int:
    needle = json.dumps(key)
    for n, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return n
    return 1


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)


def parse_rate(spec: dict) -> RateFunction:
    if not isinstance(spec, dict):
        raise ConfigError(f"rate must be an object, got {spec!r}")
    if spec.get("kind") == "custom" and "preset" in spec:
        name = spec["preset"]
        if name not in RATE_PRESETS:
            raise ConfigError(f"unknown rate preset {name!r}; choose from {sorted(RATE_PRESETS)}")
        return RateFunction.custom(RATE_PRESETS[name])
    try:
        return RateFunction.from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad rate spec {spec!r}: {exc}") from None


def parse_profile(spec: dict, beta: float | None = None) -> ParameterProfile:
    try:
        prof = ParameterProfile.from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad profile spec {spec!r}: {exc}") from None
    if prof.beta is None and beta is not None:
        prof = ParameterProfile(prof.theta_left, prof.breakpoints, beta)
    return prof


def _rate_label(spec: dict) -> str:
    if spec.get("kind") == "exponential":
        return f"exponential(beta={spec['beta']:g})"
    return f"custom({spec.get('preset', 'table')})"


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# verify


def _verify_profiles(spec) -> list[ParameterProfile]:
    if isinstance(spec, list):
        if not spec:
            raise ConfigError("'profiles' is an empty list; give at least one profile")
        return [parse_profile(p) for p in spec]
    if isinstance(spec, dict) and "random" in spec:
        count = int(spec["random"])
        if count < 1:
            raise ConfigError("'profiles.random' must be at least 1")
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return [random_profile(rng, span=float(spec.get("span", 1.5))) for _ in range(count)]
    raise ConfigError("'profiles' must be a list of profiles or {\"random\": N, \"seed\": S}")


def cmd_verify(cfg: dict, out: Path, quiet: bool = False) -> int:
    """Identity batteries: closure, general-rate form, and the counterexample."""
    tol = float(cfg["tolerance"])
    tail_tol = float(cfg["tail_tol"])
    profiles = _verify_profiles(cfg["profiles"])
    sites = tuple(int(s) for s in cfg["phi_sites"])
    rows: list[tuple[str, str, IdentityRecord]] = []
    summary: dict[str, dict] = {}

    closure_max = 0.0
    lemma_max = 0.0
    for beta in cfg["betas"]:
        rf = RateFunction.exponential(float(beta))
        label = _rate_label(rf.to_dict())
        for rec in identity_battery(profiles, rf, sites, tail_tol=tail_tol):
            rows.append(("closure", label, rec))
            closure_max = max(closure_max, rec.residual_theorem41)
            lemma_max = max(lemma_max, rec.residual_lemma51)
    summary["closure"] = {"max_residual": closure_max, "tolerance": tol, "pass": closure_max < tol}

    ce = cfg["counterexample"]
    ce_profile = parse_profile(ce["profile"])
    phi = CylinderFunction.coordinate(int(ce["phi_site"]))
    ce_min = math.inf
    ce_lemma = 0.0
    for spec in ce["rates"]:
        rf = parse_rate(spec)
        rec = identity_record(0, ce_profile, phi, rf, float(ce["beta"]), tail_tol)
        rows.append(("counterexample", _rate_label(spec), rec))
        ce_min = min(ce_min, rec.residual_theorem41)
        ce_lemma = max(ce_lemma, rec.residual_lemma51)
    lemma_max = max(lemma_max, ce_lemma)
    summary["general_rate_form"] = {"max_residual": lemma_max, "tolerance": tol, "pass": lemma_max < tol}
    summary["counterexample"] = {
        "min_residual": ce_min,
        "threshold": float(ce["min_residual"]),
        "pass": ce_min > float(ce["min_residual"]),
    }
    passed = all(b["pass"] for b in summary.values())

    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([
            "battery", "rate", "profile_id", "phi_id", "lhs", "rhs_lemma51", "rhs_theorem41",
            "residual_lemma51", "residual_theorem41", "tail_budget",
        ])
        for battery, label, r in rows:
            w.writerow([
                battery, label, r.profile_id, r.phi_id, _fmt(r.lhs), _fmt(r.rhs_lemma51),
                _fmt(r.rhs_theorem41), _fmt(r.residual_lemma51), _fmt(r.residual_theorem41),
                _fmt(r.tail_budget),
            ])
    _write_json(out / "verify.json", {"batteries": summary, "pass": passed, "config": cfg})
    if not quiet:
        for name, b in summary.items():
            print(f"{'PASS' if b['pass'] else 'FAIL'} {name}: {b}")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# simulate / compare


def _sim_params(cfg: dict) -> SimParams:
    window = cfg.get("window")
    try:
        return SimParams(
            L=int(cfg["L"]),
            t_end=float(cfg["t_end"]),
            seed=int(cfg["seed"]),
            boundary=cfg.get("boundary", "frozen"),
            replicas=int(cfg["replicas"]),
            window=None if window is None else (int(window[0]), int(window[1])),
            omega_cap=cfg.get("omega_cap"),
            record_events=bool(cfg.get("record_events", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _estimate_chunk(args):
    profile, rf, params, first = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return estimate_profile(profile, rf, params, first_replica=first)


def _parallel_estimate(profile, rf, params: SimParams, workers: int):
    """Split replicas into contiguous blocks; merge in block order."""
    workers = max(1, int(workers))
    if workers == 1 or params.replicas < 2 * 100:
        return estimate_profile(profile, rf, params)
    blocks = np.array_split(np.arange(params.replicas), min(workers, params.replicas // 100))
    jobs = []
    for b in blocks:
        p = SimParams(**{**params.to_dict(), "replicas": len(b), "window": params.measurement_window})
        jobs.append((profile, rf, p, int(b[0])))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_estimate_chunk, jobs))
    est = parts[0]
    for part in parts[1:]:
        est = est.merge(part)
    return est


def cmd_simulate(cfg: dict, out: Path, quiet: bool = False) -> int:
    """Monte Carlo estimate of the mean slope profile."""
    rf = parse_rate(cfg["rate"])
    profile = parse_profile(cfg["profile"], rf.beta)
    params = _sim_params(cfg)
    start = time.perf_counter()
    est = _parallel_estimate(profile, rf, params, cfg.get("workers", 1))
    est.write_csv(out / "profile.csv")
    if params.record_events:
        rng = np.random.default_rng(np.random.SeedSequence(params.seed).spawn(1)[0])
        c0 = sample_initial(profile, rf, params, rng)
        run(c0, profile, rf, params, rng).events.write_csv(out / "events.csv")
    manifest = {
        "command": "simulate",
        "version": __version__,
        "config": cfg,
        "params": params.to_dict(),
        "seed": params.seed,
        "replicas": est.count,
        "event_count": est.events,
        "boundary_warnings": est.warnings,
        "wall_time": time.perf_counter() - start,
    }
    if params.t_end > 0:
        rate, se = est.deposition_rate()
        manifest["deposition_rate"] = {"mean": rate, "stderr": se}
    _write_json(out / "manifest.json", manifest)
    if not quiet:
        print(f"simulated {est.count} replicas, {est.events} events -> {out}")
    return EXIT_OK


def predicted_profile(
    profile: ParameterProfile, rf: RateFunction, t: float, sites: np.ndarray
) -> np.ndarray:
    """Mean slopes under the shock-measure mixture at time ``t``."""
    cfg = WalkerConfig.from_profile(profile)
    if cfg.n == 1:
        return single_shock_mean_profile(cfg, rf, t, sites)
    return master_equation(cfg, t).mean_profile(rf, sites)


def cmd_compare(cfg: dict, out: Path, quiet: bool = False) -> int:
    """Monte Carlo profile against the walker-mixture prediction."""
    rf = parse_rate(cfg["rate"])
    if not rf.is_exponential:
        raise ConfigError("the mixture prediction needs exponential rates")
    profile = parse_profile(cfg["profile"], rf.beta)
    try:
        WalkerConfig.from_profile(profile)
    except ProfileError as exc:
        raise ConfigError(f"profile has no walker description: {exc}") from None
    params = _sim_params(cfg)
    start = time.perf_counter()
    est = _parallel_estimate(profile, rf, params, cfg.get("workers", 1))
    shift = int(cfg.get("prediction_shift", 0))
    pred = predicted_profile(profile, rf, params.t_end, est.sites - shift)
    z = profile_zscores(est, pred)
    threshold = bonferroni_threshold(len(z), float(cfg["sigma"]))
    worst = float(np.max(np.abs(z)))
    passed = bool(worst <= threshold)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "mean", "stderr", "predicted", "z"])
        for row in zip(est.sites, est.mean, est.stderr, pred, z):
            w.writerow([int(row[0]), *(_fmt(v) for v in row[1:])])
    _write_json(out / "compare.json", {
        "command": "compare",
        "config": cfg,
        "seed": params.seed,
        "sites": len(z),
        "threshold": threshold,
        "max_abs_z": worst,
        "boundary_warnings": est.warnings,
        "event_count": est.events,
        "wall_time": time.perf_counter() - start,
        "pass": passed,
    })
    if not quiet:
        print(f"{'PASS' if passed else 'FAIL'} compare: max|z|={worst:.3f} threshold={threshold:.3f}")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# walkers


def cmd_walkers(cfg: dict, out: Path, quiet: bool = False) -> int:
    """Walker statistics: width, center of mass and the exact small-time law."""
    try:
        wc = WalkerConfig(tuple(cfg["positions"]), float(cfg["theta_left"]), float(cfg["beta"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad walker configuration: {exc}") from None
    times = np.array(sorted(float(t) for t in cfg["times"]))
    if times.size == 0 or times[0] <= 0:
        raise ConfigError("'times' must be a non-empty list of positive times")
    seed, reps = int(cfg["seed"]), int(cfg["replicas"])
    sigma = float(cfg["sigma"])
    law_time = cfg.get("law_time")
    sample_times = times if law_time is None else np.union1d(times, [float(law_time)])

    pos = simulate_batch(wc, sample_times, replica_seeds(seed, reps))
    n = wc.n
    right, left = total_rate_formula(wc.theta_left, wc.theta_right)
    drift = (right - left) / n
    threshold = bonferroni_threshold(len(times), sigma)
    rows, checks = [], {}
    x0 = float(np.mean(wc.positions))
    for j, t in enumerate(sample_times):
        com = pos[:, j, :].mean(axis=1) - x0
        widths = pos[:, j, -1] - pos[:, j, 0]
        gaps = np.diff(pos[:, j, :], axis=1).ravel() if n > 1 else np.zeros(0)
        mean, se = float(com.mean()), float(com.std(ddof=1) / math.sqrt(reps))
        zc = float((mean - drift * t) / se) if se > 0 else 0.0
        rows.append((float(t), mean / t, se / t, drift, zc, float(np.median(widths)), float(np.quantile(widths, 0.95)),
                     gap_tail_ratio(gaps) if n > 1 else 0.0))
        if t in times:
            checks[f"com_speed_t{t:g}"] = {"z": zc, "threshold": threshold, "pass": bool(abs(zc) <= threshold)}
    if law_time is not None:
        j = int(np.searchsorted(sample_times, float(law_time)))
        disp = np.rint(pos[:, j, :].sum(axis=1) - n * x0).astype(int)
        values, counts = np.unique(disp, return_counts=True)
        law = displacement_law(wc, float(law_time))
        lo, hi = min(values.min(), int(law.ppf(1e-12))), max(values.max(), int(law.isf(1e-12)))
        support = np.arange(lo, hi + 1)
        emp = np.zeros(support.size)
        emp[values - lo] = counts / reps
        tv = 0.5 * float(np.abs(emp - law.pmf(support)).sum())
        checks["com_law_tv"] = {"t": float(law_time), "tv": tv, "tolerance": float(cfg["tv_tolerance"]),
                                "pass": tv <= float(cfg["tv_tolerance"])}
        if n <= 4:
            try:
                master_equation(wc, float(law_time)).write_csv(out / "law.csv")
            except BricklayersError as exc:
                checks["master_equation"] = {"skipped": str(exc), "pass": True}

    with open(out / "walkers.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "com_speed", "com_speed_stderr", "predicted_speed", "z",
                    "width_median", "width_p95", "gap_tail_ratio"])
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    if cfg.get("trajectory_time"):
        traj = simulate(wc, float(cfg["trajectory_time"]), np.random.default_rng(seed))
        traj.write_csv(out / "trajectory.csv")
    passed = all(c["pass"] for c in checks.values())
    _write_json(out / "walkers.json", {"command": "walkers", "config": cfg, "seed": seed,
                                       "drift": drift, "checks": checks, "pass": passed})
    if not quiet:
        for name, c in checks.items():
            print(f"{'PASS' if c['pass'] else 'FAIL'} {name}: {c}")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# hydro


def cmd_hydro(cfg: dict, out: Path, quiet: bool = False) -> int:
    """Front tracking for piecewise-constant decreasing data."""
    rf = parse_rate(cfg["rate"])
    try:
        prof = PiecewiseProfile.from_dict(cfg["profile"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad hydro profile: {exc}") from None
    res = front_track(prof, rf, float(cfg["t_end"]))
    res.write_events_csv(out / "events.csv")
    res.profile.write_csv(out / "profile.csv")
    worst = max(res.area_errors, default=0.0)
    passed = worst <= float(cfg["area_tolerance"])
    _write_json(out / "hydro.json", {
        "command": "hydro",
        "config": cfg,
        "events": [
            {"t": e.t, "x": e.x, "u_left": e.u_left, "u_right": e.u_right, "merged_ids": list(e.merged_ids)}
            for e in res.events
        ],
        "final_shocks": [{"x": s.x, "u_left": s.u_left, "u_right": s.u_right, "speed": s.speed}
                         for s in res.shocks],
        "max_area_error": worst,
        "pass": passed,
    })
    if not quiet:
        print(f"{len(res.events)} merge event(s), {len(res.shocks)} shock(s) at t={res.t_end:g}")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------

COMMANDS = {
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "walkers": cmd_walkers,
    "hydro": cmd_hydro,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bricklayers",
        description="Exact identities, simulation and front tracking for the bricklayers' process.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", type=Path, help="JSON config; keys not given take their defaults")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, default=Path("."), help="existing output directory")
        p.add_argument("--replicas", type=int, help="override the replica count")
        p.add_argument("--quiet", action="store_true", help="suppress the summary lines")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            if "seed" not in cfg:
                raise ConfigError(f"'{args.command}' takes no seed")
            cfg["seed"] = args.seed
        if args.replicas is not None:
            if "replicas" not in cfg:
                raise ConfigError(f"'{args.command}' takes no replica count")
            cfg["replicas"] = args.replicas
        if args.print_config:
            print(dump_config(cfg))
            return EXIT_OK
        if not args.out.is_dir():
            print(f"error: output directory {args.out} does not exist", file=sys.stderr)
            return EXIT_IO
        return COMMANDS[args.command](cfg, args.out, args.quiet)
    except (ConfigError, ProfileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
