"""Command-line front end: ``siselab {simulate,analyze,filter,factorize,bench}``.

Exit codes: 0 stable / success, 1 error, 2 predicted-unstable estimator,
3 marginal, 4 the requested engine does not apply to the system.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .errors import AssumptionViolation, FileFormatError, MarginalError, ShapeError, SiseError
from .factorization import estimate_via_outer, inner_outer
from .model import simulate, validate
from .singular_kf import akf_filter
from .sise import ft_init, run_filter, zf_init
from .stability import verdict

EXIT_OK, EXIT_ERROR, EXIT_UNSTABLE, EXIT_MARGINAL, EXIT_MISMATCH = 0, 1, 2, 3, 4
VERDICT_EXIT = {"stable": EXIT_OK, "unstable": EXIT_UNSTABLE, "marginal": EXIT_MARGINAL}
COMMANDS = ("simulate", "analyze", "filter", "factorize", "bench")
ENGINES = ("sise", "akf", "outer-pipeline")
DIVERGENCE_LEVEL = 1e8


class UsageError(SiseError):
    """Invalid command-line configuration."""


class EngineMismatch(SiseError):
    """The selected engine cannot run on the given system."""


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated settings for one command.

    Built from parsed arguments or a JSON mapping; unknown keys and
    out-of-range values are rejected before anything is computed.
    """

    command: str
    system: str = None
    measurements: str = None
    disturbance: str = None
    suite: str = None
    engine: str = "sise"
    horizon: int = 100
    seed: int = 0
    pseudo_variance: float = 1e8
    tol: float = 1e-12
    out: str = None
    gains: str = None
    summary: str = None
    force: bool = False
    noise_off: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.engine not in ENGINES:
            raise UsageError(f"unknown engine {self.engine!r}; choose from {ENGINES}")
        if int(self.horizon) < 1:
            raise UsageError("--horizon must be at least 1")
        if not float(self.pseudo_variance) > 0:
            raise UsageError("--pseudo-variance must be positive")
        if not float(self.tol) > 0:
            raise UsageError("--tol must be positive")
        needs = {"simulate": ("system", "out"), "analyze": ("system",),
                 "filter": ("system", "measurements", "out"),
                 "factorize": ("system", "out"), "bench": ("suite", "out")}
        for key in needs[self.command]:
            if getattr(self, key) is None:
                raise UsageError(f"{self.command} needs --{key.replace('_', '-')}")
        for key in ("system", "measurements", "disturbance", "suite"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise UsageError(f"--{key} {path}: no such file")

    @classmethod
    def from_mapping(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise UsageError(f"unknown configuration keys {unknown}")
        return cls(**data)


def _clean(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_json(obj, path):
    text = json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_simulate(cfg):
    plant = io.load_system(cfg.system)
    if cfg.disturbance is not None:
        d = io.load_trajectory(cfg.disturbance).disturbances
        if d.shape[1] != plant.m:
            raise UsageError(f"disturbance file has {d.shape[1]} d columns, need {plant.m}")
    else:
        # the input stream is kept apart from the noise stream of the same seed
        rng = np.random.default_rng([cfg.seed, 1])
        d = rng.standard_normal((cfg.horizon + 1, plant.m))
    traj = simulate(plant, d[: cfg.horizon + 1], horizon=cfg.horizon, seed=cfg.seed,
                    noise_on=not cfg.noise_off)
    io.save_trajectory(traj, cfg.out)
    return EXIT_OK


def cmd_analyze(cfg):
    plant = io.load_system(cfg.system)
    report = verdict(plant, tol=cfg.tol)
    out = report.to_dict()
    out["assumptions"] = validate(plant).to_dict()
    _write_json(out, cfg.out)
    return VERDICT_EXIT[report.verdict]


def _error_stats(est, traj):
    """State and input error summaries when the measurement file carries truth."""
    stats = {}
    if traj.states.shape[1] == est.xhat.shape[1]:
        err = est.xhat - traj.states[est.t]
        stats["state_error_rms"] = float(np.sqrt(np.mean(err ** 2)))
        stats["state_error_max"] = float(np.max(np.abs(err)))
    if traj.disturbances.shape[1] == est.dhat.shape[1]:
        idx = est.t + est.d_offset
        ok = (idx >= 0) & (idx < len(traj.disturbances))
        err = est.dhat[ok] - traj.disturbances[idx[ok]]
        if err.size:
            stats["input_error_rms"] = float(np.sqrt(np.mean(err ** 2)))
    return stats


def run_engine(plant, ys, engine, pseudo_variance=1e8, force=False, tol=1e-12):
    """Run one estimation engine; returns ``(estimates, verdict_report, notes)``."""
    report = verdict(plant, tol=tol)
    notes = []
    if engine == "sise":
        if not report.stable:
            if not force:
                raise EngineMismatch(
                    f"SISE is predicted {report.verdict} for this system "
                    f"({'; '.join(report.notes) or 'see analyze'}); use "
                    "--engine outer-pipeline or --force")
            notes.append(f"forced run of a predicted-{report.verdict} configuration")
        init = zf_init(plant) if plant.zero_feedthrough else ft_init(plant)
        est = run_filter(plant, ys, init=init)
    elif engine == "akf":
        est = akf_filter(plant, ys, D=pseudo_variance)
    else:
        try:
            fac = inner_outer(plant)
        except (ShapeError, MarginalError) as exc:
            raise EngineMismatch(f"outer pipeline unavailable: {exc}") from exc
        res = estimate_via_outer(plant, ys, factorization=fac)
        est = res.as_estimates()
        notes.append(f"last {res.edge} input samples carry the terminal transient")
    return est, report, notes


def cmd_filter(cfg):
    plant = io.load_system(cfg.system)
    traj = io.load_trajectory(cfg.measurements)
    ys = traj.measurements
    if ys.shape[1] != plant.p:
        raise UsageError(f"measurement file has {ys.shape[1]} y columns, need {plant.p}")
    # a forced run of an unstable configuration overflows by design
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            est, report, notes = run_engine(plant, ys, cfg.engine, cfg.pseudo_variance,
                                            cfg.force, cfg.tol)
        except AssumptionViolation as exc:
            raise EngineMismatch(f"assumption {exc.assumption} fails: {exc}") from exc
        trP = est.trP
        innov = np.linalg.norm(est.innovations, axis=1)
        stats = _error_stats(est, traj)
    io.save_estimates(est, cfg.out)
    if cfg.gains is not None:
        io.save_gains(est, cfg.gains)
    peak = float(np.max(np.abs(est.xhat))) if np.all(np.isfinite(est.xhat)) else np.inf
    summary = {
        "engine": cfg.engine,
        "variant": est.variant,
        "verdict": report.verdict,
        "steps": int(len(est.t)),
        "final_trP": float(trP[-1]),
        "innovation_rms": float(np.sqrt(np.mean(innov ** 2))),
        "max_abs_xhat": peak,
        "diverged": bool(not peak < DIVERGENCE_LEVEL),
        "notes": notes,
    }
    summary.update(stats)
    summary_path = cfg.summary or str(Path(cfg.out).with_suffix(".summary.json"))
    _write_json(summary, summary_path)
    if cfg.engine == "sise" and not report.stable:
        return VERDICT_EXIT[report.verdict]
    return EXIT_OK


def cmd_factorize(cfg):
    plant = io.load_system(cfg.system)
    try:
        fac = inner_outer(plant)
    except ShapeError as exc:
        raise EngineMismatch(str(exc)) from exc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_system(fac.outer, out / "outer.json")
    io.save_system(fac.inner.to_system(), out / "inner.json")
    _write_json(fac.diagnostics, out / "diagnostics.json")
    return EXIT_OK


BENCH_FIELDS = ("index", "name", "engine", "verdict", "status", "steps", "wall_time",
                "steps_per_sec", "cov_ratio", "message")
BENCH_KEYS = {"name", "system", "engine", "horizon", "seed", "pseudo_variance", "burn_in"}


def _bench_case(index, case, base):
    unknown = sorted(set(case) - BENCH_KEYS)
    row = dict.fromkeys(BENCH_FIELDS, "")
    row.update(index=index, name=case.get("name", f"case{index}"),
               engine=case.get("engine", "sise"))
    try:
        if unknown:
            raise UsageError(f"unknown case keys {unknown}")
        spec = case["system"]
        if isinstance(spec, str):
            path = Path(spec) if Path(spec).is_absolute() else base / spec
            plant = io.load_system(path)
        else:
            plant = io.system_from_dict(spec)
        horizon = int(case.get("horizon", 1000))
        seed = int(case.get("seed", 0))
        burn = int(case.get("burn_in", min(100, horizon // 2)))
        rng = np.random.default_rng([seed, 1])
        traj = simulate(plant, rng.standard_normal((horizon + 1, plant.m)),
                        horizon=horizon, seed=seed)
        start = time.perf_counter()
        est, report, _ = run_engine(plant, traj.measurements, row["engine"],
                                    float(case.get("pseudo_variance", 1e8)))
        wall = time.perf_counter() - start
        err = est.xhat - traj.states[est.t]
        keep = est.t >= burn
        cov_ratio = float(np.mean(np.sum(err[keep] ** 2, axis=1)) / np.mean(est.trP[keep]))
        row.update(verdict=report.verdict, status="ok", steps=len(est.t),
                   wall_time=f"{wall:.6g}", steps_per_sec=f"{len(est.t) / wall:.6g}",
                   cov_ratio=f"{cov_ratio:.6g}")
    except EngineMismatch as exc:
        row.update(status="unstable", message=str(exc))
    except (SiseError, KeyError, ValueError, OSError) as exc:
        row.update(status="error", message=f"{type(exc).__name__}: {exc}")
    return row


def cmd_bench(cfg):
    suite = io.read_json(cfg.suite)
    cases = suite.get("cases", []) if isinstance(suite, dict) else suite
    if not isinstance(cases, list):
        raise UsageError("suite must be a list of cases or {\"cases\": [...]}")
    base = Path(cfg.suite).resolve().parent
    workers = max(1, min(int(os.environ.get("SISELAB_THREADS", os.cpu_count() or 1)),
                         max(len(cases), 1)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda ic: _bench_case(ic[0], ic[1], base), enumerate(cases)))
    io.write_rows(cfg.out, BENCH_FIELDS, ([row[k] for k in BENCH_FIELDS] for row in rows))
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "filter": cmd_filter,
            "factorize": cmd_factorize, "bench": cmd_bench}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="siselab", description="Simultaneous input and state estimation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig keys (flags override)")
    common.add_argument("--system", help="system JSON file")
    common.add_argument("--out", help="output path (directory for factorize)")
    common.add_argument("--tol", type=float)
    helps = {
        "simulate": "simulate a trajectory CSV",
        "analyze": "a priori stability report (JSON)",
        "filter": "run an estimator over a measurement CSV",
        "factorize": "inner-outer factorization of the input-to-output map",
        "bench": "run a benchmark suite",
    }
    parsers = {name: sub.add_parser(name, parents=[common], help=text)
               for name, text in helps.items()}
    p = parsers["simulate"]
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--disturbance", help="CSV with d_* columns (default: N(0, I) input)")
    p.add_argument("--noise-off", action="store_true", default=None)
    p = parsers["filter"]
    p.add_argument("--measurements", help="trajectory or measurement CSV")
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--pseudo-variance", type=float)
    p.add_argument("--force", action="store_true", default=None)
    p.add_argument("--gains", help="optional JSON-lines gain dump")
    p.add_argument("--summary", help="summary JSON path (default: <out>.summary.json)")
    parsers["bench"].add_argument("--suite", help="suite JSON file")
    return parser


def config_from_args(args):
    values = {}
    if args.config is not None:
        data = io.read_json(args.config)
        if not isinstance(data, dict):
            raise UsageError("--config must hold a JSON object")
        values.update(data)
    values.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    return RunConfig.from_mapping(values)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        return HANDLERS[cfg.command](cfg)
    except EngineMismatch as exc:
        print(f"siselab: engine mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except MarginalError as exc:
        print(f"siselab: marginal: {exc}", file=sys.stderr)
        return EXIT_MARGINAL
    except (SiseError, FileFormatError, OSError, ValueError) as exc:
        print(f"siselab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
