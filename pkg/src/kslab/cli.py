"""Command-line front end.

Exit codes: 0 success (classify: subcritical), 2 invalid input, 3 classify
supercritical_norm, 4 classify indeterminate, 5 simulate hit the numerical
blow-up indicator, 6 semigroup estimate failures.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from datetime import datetime, timezone
from pathlib import Path

from . import constants as K
from .config import ConfigError, build_run, config_hash, dump_config, float_list, parse_config
from .criterion import (
    amplitude_for_ratio,
    classify,
    diagnostics_csv,
    diagnostics_row,
    format_float,
    warn_under_resolved,
)
from .dynamics import initial_data, run
from .field import (
    FieldFormatError,
    GridSpec,
    ScalarField,
    mass,
    read_field,
    solve_helmholtz,
    write_field,
)
from .semigroup import CSV_FIELDS, estimate_battery

log = logging.getLogger("kslab")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SUPERCRITICAL = 3
EXIT_INDETERMINATE = 4
EXIT_BLOWUP = 5
EXIT_ESTIMATE = 6


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _parse_exponent(s: str) -> float:
    return math.inf if s.strip().lower() in ("inf", "infinity") else float(s)


# ---------------------------------------------------------------- constants


def cmd_constants(args) -> int:
    params = K.ModelParams(args.n, args.m, args.mass)
    tab = K.thresholds(params)
    if args.json:
        print(json.dumps(tab.as_dict()))
    else:
        for key, val in tab.as_dict().items():
            print(f"{key:16s} {val:.10g}")
    return EXIT_OK


# ---------------------------------------------------------------- classify


def preset_data(args) -> tuple[ScalarField, ScalarField, K.ModelParams]:
    grid = GridSpec(args.n, args.N, args.L)
    if args.preset == "zero":
        z = ScalarField.zeros(grid)
        return z, z, K.ModelParams(args.n, args.m, args.mass)
    rho, _ = initial_data("gaussian_blob", grid, mass_target=1.0, sigma=args.sigma, c0="zero")
    probe = K.ModelParams(args.n, args.m, 1.0)
    probe.require_window()
    scale = amplitude_for_ratio(rho, probe, args.ratio) if args.ratio is not None else args.mass
    rho = rho * scale
    c = solve_helmholtz(rho) if args.c0 == "resolvent" else ScalarField.zeros(grid)
    return rho, c, K.ModelParams(args.n, args.m, scale)


def cmd_classify(args) -> int:
    if args.init is not None:
        rho = read_field(args.init)
        c = solve_helmholtz(rho) if args.c0 == "resolvent" else ScalarField.zeros(rho.grid)
        M = args.mass if args.mass_given else mass(rho)
        params = K.ModelParams(rho.grid.n, args.m, M)
    else:
        rho, c, params = preset_data(args)
    verdict = classify(rho, c, params)
    print(json.dumps(verdict.as_dict()))
    return verdict.exit_code


# ---------------------------------------------------------------- simulate


@dataclass
class RunManifest:
    config_hash: str
    start: str
    end: str = ""
    outcome: str = "error"
    message: str = ""
    outputs: list[str] = dc_field(default_factory=list)


@dataclass
class RunSummary:
    outcome: str
    verdict: str = ""
    norm_crit0: float = math.nan
    threshold_norm: float = math.nan
    F0: float = math.nan
    F_star: float = math.nan
    max_norm_crit: float = math.nan
    max_norm_inf: float = math.nan
    final_F_eps: float = math.nan
    mass: float = math.nan


def simulate_config(cfg: dict[str, str], out: Path, base_dir: Path | None = None) -> RunSummary:
    """Run one configuration, writing snapshots, diagnostics, verdict and manifest into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config_hash=config_hash(cfg), start=_now())
    (out / "config.txt").write_text(dump_config(cfg))
    summary = RunSummary(outcome="error")
    try:
        setup = build_run(cfg, base_dir)
        verdict = classify(setup.rho0, setup.c0, setup.params)
        (out / "verdict.json").write_text(json.dumps(verdict.as_dict(), indent=2) + "\n")
        manifest.outputs.append("verdict.json")
        rows = []

        def record(state):
            rows.append(diagnostics_row(state, setup.params, setup.solver, setup.k_max))
            for name, f in (("rho", state.rho), ("c", state.c)):
                fname = f"{name}_{state.step_count}.ksf"
                write_field(out / fname, f)
                manifest.outputs.append(fname)

        traj = run(setup.solver, setup.params, (setup.rho0, setup.c0), on_snapshot=record, keep_snapshots=False)
        warn_under_resolved(rows, setup.params.n)
        (out / "diagnostics.csv").write_text(diagnostics_csv(rows, setup.k_max))
        manifest.outputs.append("diagnostics.csv")
        manifest.outcome = traj.outcome
        manifest.message = traj.message
        summary = RunSummary(
            outcome=traj.outcome,
            verdict=verdict.verdict,
            norm_crit0=verdict.norm_2n_over_np2,
            threshold_norm=verdict.threshold_norm,
            F0=verdict.F0,
            F_star=verdict.F_star,
            max_norm_crit=max(r.norm_crit for r in rows),
            max_norm_inf=max(r.norm_inf for r in rows),
            final_F_eps=rows[-1].F_eps,
            mass=setup.params.mass,
        )
    except Exception as exc:
        manifest.outcome = "error"
        manifest.message = str(exc)
        raise
    finally:
        manifest.end = _now()
        (out / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    return summary


def _read_config(path) -> tuple[dict[str, str], Path]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text), p.parent


def cmd_simulate(args) -> int:
    cfg, base = _read_config(args.config)
    summary = simulate_config(cfg, Path(args.out), base)
    log.info("simulate finished: %s", summary.outcome)
    return EXIT_BLOWUP if summary.outcome == "numerical_blowup_flag" else EXIT_OK


# ---------------------------------------------------------------- verify-semigroup


def _parse_pairs(s: str) -> list[tuple[float, float]]:
    pairs = []
    for item in s.split(","):
        p, q = item.split(":")
        pairs.append((_parse_exponent(p), _parse_exponent(q)))
    return pairs


def cmd_verify_semigroup(args) -> int:
    pairs = _parse_pairs(args.pairs) if args.pairs else None
    if pairs:
        bad = [(p, q) for p, q in pairs if q > p]
        if bad:
            raise UsageError(f"estimate needs q <= p; rejected pairs {bad}")
    reports = estimate_battery(args.battery, n=args.n, N=args.grid, L=args.L, seed=args.seed, pairs=pairs)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in reports:
            row = r.as_row()
            w.writerow([row[k] if k == "which" else format_float(row[k]) for k in CSV_FIELDS])
    finally:
        if fh is not sys.stdout:
            fh.close()
    failed = [r for r in reports if not r.passed(1e-6)]
    if failed:
        for r in failed:
            print(f"FAILED p={r.p} q={r.q} t={r.t} which={r.which} ratio={r.ratio:.6g}", file=sys.stderr)
        return EXIT_ESTIMATE
    return EXIT_OK


# ---------------------------------------------------------------- sweep

AGG_FIELDS = (
    "m", "mass", "scale", "run", "outcome", "verdict", "M0", "norm_crit0", "threshold_norm",
    "F0", "F_star", "max_norm_crit", "max_norm_inf", "final_F_eps",
)


def sweep_points(cfg: dict[str, str]) -> list[tuple[float, float, float]]:
    ms = float_list(cfg["sweep.m"]) if "sweep.m" in cfg else [float(cfg["m"])]
    masses = float_list(cfg["sweep.mass"]) if "sweep.mass" in cfg else [float(cfg.get("mass", "1.0"))]
    scales = float_list(cfg["sweep.scale"]) if "sweep.scale" in cfg else [float(cfg.get("init.scale", "1.0"))]
    return sorted(itertools.product(ms, masses, scales))


def _sweep_one(job) -> dict:
    idx, (m, M, s), base_cfg, out, base_dir = job
    cfg = {k: v for k, v in base_cfg.items() if not k.startswith("sweep.")}
    cfg.update({"m": repr(m), "mass": repr(M), "init.scale": repr(s)})
    name = f"run_{idx:03d}"
    row = {"m": m, "mass": M, "scale": s, "run": name}
    try:
        summary = simulate_config(cfg, Path(out) / name, base_dir)
        summary_row = asdict(summary)
        row["M0"] = summary_row.pop("mass")
        row.update(summary_row)
    except Exception as exc:  # recorded, sweep continues
        row.update(outcome="error", verdict=f"error: {exc}")
    return row


def cmd_sweep(args) -> int:
    cfg, base = _read_config(args.config)
    points = sweep_points(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, pt, cfg, str(out), base) for i, pt in enumerate(points)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    rows.sort(key=lambda r: (r["m"], r["mass"], r["scale"], r["run"]))
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_FIELDS)
        for r in rows:
            w.writerow([
                format_float(r.get(k, math.nan)) if isinstance(r.get(k, math.nan), float) else r.get(k, "")
                for k in AGG_FIELDS
            ])
    return EXIT_OK if all(r["outcome"] != "error" for r in rows) else EXIT_INPUT


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kslab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="print the closed-form constants and thresholds")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("classify", help="classify initial data against the thresholds")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--init", help="KSF1 density file")
    src.add_argument("--preset", choices=("zero", "blob"))
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--N", type=int, default=48)
    p.add_argument("--L", type=float, default=20.0)
    p.add_argument("--m", type=float, default=1.25)
    p.add_argument("--mass", type=float, default=None)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--ratio", type=float, default=None,
                   help="blob amplitude chosen so the critical norm is this multiple of the threshold")
    p.add_argument("--c0", choices=("resolvent", "zero"), default="resolvent")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("simulate", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-semigroup", help="random battery of heat smoothing estimates")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--L", type=float, default=20.0)
    p.add_argument("--battery", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", help="comma list of p:q, e.g. 4:2,inf:2")
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_verify_semigroup)

    p = sub.add_parser("sweep", help="grid of runs over m, mass and init scale")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "classify":
        args.mass_given = args.mass is not None
        if args.mass is None:
            args.mass = 1.0
    try:
        return args.func(args)
    except (K.ParameterError, ConfigError, FieldFormatError, UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
