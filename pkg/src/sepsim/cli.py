"""Command-line entry point.

    sepsim simulate-full      --model M --gait G --steps N --out DIR
    sepsim simulate-subsystem --model M --gait G --trace DIR/trace.csv --out DIR
    sepsim verify             --model M --gait G --samples N --seed S --out DIR
    sepsim robustness         --model M --gait G --mass-delta 24.9 --steps N --out DIR

Every command writes DIR/report.txt (`sepsim-report v1`) and exits with 0 on
pass, 1 on a failed check or a failed run, 2 on a configuration error.
Verbosity comes from the SEPSIM_LOG environment variable (a logging level
name, default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .controllers import (
    DomainContext,
    full_control,
    full_outputs,
    measured_state,
    random_phase,
    s_outputs,
    sample_admissible,
    separable_form,
    separable_structure,
    equivalence_fields_full,
    equivalence_fields_subsystem,
    u_bar_s,
    u_ssc,
)
from .fileio import FormatError, read_versioned, write_versioned
from .gait import VERTICES, GaitError, GaitParams, load_gait
from .hybrid import (
    HybridError,
    ReplayResult,
    Trace,
    TraceSchemaError,
    WalkingSystem,
    _fmt,
    initial_state,
    poincare_distance,
    replay_subsystem,
    step_cycle,
)
from .multibody import ModelError, RankDeficiencyError
from .prosthesis import MODEL_HEADER, AmputeeSystem, amputee_from_dict
from .sepctrl import (
    CheckReport,
    DecouplingSingularityError,
    check_output_conditions,
    check_separability,
    check_subsystem_equivalence,
)

log = logging.getLogger("sepsim")

REPORT_HEADER = "sepsim-report v1"
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

SEPARABILITY_TOL = 1e-10
OUTPUT_COND_TOL = 1e-6
EQUIVALENCE_TOL = 1e-8
EQUALITY_TOL = 1e-8
REPLAY_TOL = 1e-6
SAMPLE_VEL = 0.5


class ConfigError(ValueError):
    pass


def data_path(name: str) -> Path:
    """Path of a committed data file shipped with the package."""
    return Path(str(resources.files("sepsim") / "data" / name))


@dataclass
class RunConfig:
    command: str
    model: Path
    gait: Path
    out: Path
    steps: int = 10
    seed: int = 0
    samples: int = 200
    tol: float | None = None
    mass_delta: float = 0.0
    trace: Path | None = None
    kp: float = 100.0
    kd: float = 20.0

    def validate(self):
        for p in (self.model, self.gait) + ((self.trace,) if self.trace is not None else ()):
            if not Path(p).is_file():
                raise ConfigError(f"{p}: no such file")
        if self.steps < 0 or self.samples < 0:
            raise ConfigError("--steps and --samples must be non-negative")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("--tol must be positive")
        return self


def load_system(path, mass_delta: float = 0.0) -> AmputeeSystem:
    data = read_versioned(path, MODEL_HEADER)
    if data.get("kind") != "amputee":
        raise ConfigError(f"{path}: model kind {data.get('kind')!r} cannot walk; an amputee description is required")
    if mass_delta:
        data = dict(data)
        human = dict(data.get("human", {}))
        human["mass_delta"] = float(human.get("mass_delta", 0.0)) + mass_delta
        data["human"] = human
    return amputee_from_dict(data)


def write_report(out: Path, command: str, status: str, body: dict) -> Path:
    path = Path(out) / "report.txt"
    write_versioned(path, REPORT_HEADER, {"command": command, "status": status, "version": __version__, **body})
    return path


def read_report(path) -> dict:
    return read_versioned(path, REPORT_HEADER)


# -- simulate-full ---------------------------------------------------------------


def step_summary(walker: WalkingSystem, trace: Trace) -> list[dict]:
    """Per-step rows; the Poincare residual compares a domain's entry state
    with the entry state of the same vertex one cycle earlier."""
    entries = [trace.x[0]] + [trace.x[i] for i in range(1, len(trace.t)) if trace.step[i] != trace.step[i - 1]]
    rows = []
    for s in trace.steps:
        k = s["step"]
        res = poincare_distance(walker.system, entries[k], entries[k - 2]) if k >= 2 else float("nan")
        imp = trace.impacts[k]
        rows.append(
            {
                "step": k,
                "vertex": s["vertex"],
                "t_start": s["t_start"],
                "step_time": s["duration"],
                "tau_end": s["tau_end"],
                "impact_dT": imp["dT"],
                "projections": s["projections"],
                "poincare_residual": res,
            }
        )
    return rows


def write_rows(path: Path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.writer(fh)
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else _fmt(v)) for v in r.values()])


def run_full(system: AmputeeSystem, gait: GaitParams, steps: int, out: Path, kp=100.0, kd=20.0):
    """Walk `steps` domains from the gait's initial state; write trace files.

    Returns (walker, trace, summary rows, runtime in seconds).
    """
    walker = WalkingSystem(system, gait, kp, kd)
    x0 = initial_state(walker)
    t = time.perf_counter()
    trace = step_cycle(walker, x0, steps)
    runtime = time.perf_counter() - t
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    trace.impacts_to_csv(out / "impacts.csv")
    rows = step_summary(walker, trace)
    write_rows(out / "steps.csv", rows)
    return walker, trace, rows, runtime


def cmd_simulate_full(cfg: RunConfig) -> int:
    system = load_system(cfg.model, cfg.mass_delta)
    gait = load_gait(cfg.gait)
    try:
        _, trace, rows, runtime = run_full(system, gait, cfg.steps, cfg.out, cfg.kp, cfg.kd)
    except (HybridError, GaitError, DecouplingSingularityError, RankDeficiencyError) as exc:
        log.error("simulation failed: %s", exc)
        write_report(cfg.out, "simulate-full", "FAIL", {"steps_requested": cfg.steps, "error": f"{type(exc).__name__}: {exc}"})
        return EXIT_FAIL
    last = [r["poincare_residual"] for r in rows[-2:] if np.isfinite(r["poincare_residual"])]
    body = {
        "steps_requested": cfg.steps,
        "steps_completed": len(rows),
        "sim_time": float(trace.t[-1]),
        "runtime_s": round(runtime, 3),
        "max_impact_dT": max((float(r["impact_dT"]) for r in rows), default=0.0),
        "final_poincare_residual": max(last) if last else None,
        "files": ["trace.csv", "impacts.csv", "steps.csv"],
    }
    write_report(cfg.out, "simulate-full", "PASS", body)
    print(f"PASS  simulate-full  {len(rows)} steps in {runtime:.1f} s")
    return EXIT_PASS


# -- simulate-subsystem ------------------------------------------------------------


def replay_report(replay: ReplayResult, tol: float) -> dict:
    per = [{"step": k, "domain": v, "max_error": e} for k, v, e in replay.max_error_per_domain()]
    worst = max((p["max_error"] for p in per), default=0.0)
    return {"tolerance": tol, "max_state_error": worst, "per_domain": per, "passed": bool(worst <= tol)}


def cmd_simulate_subsystem(cfg: RunConfig) -> int:
    system = load_system(cfg.model, cfg.mass_delta)
    gait = load_gait(cfg.gait)
    trace = Trace.from_csv(cfg.trace)
    walker = WalkingSystem(system, gait, cfg.kp, cfg.kd)
    replay = replay_subsystem(walker, trace)
    cfg.out.mkdir(parents=True, exist_ok=True)
    replay.to_csv(cfg.out / "subsystem_trace.csv")
    tol = cfg.tol or REPLAY_TOL
    body = replay_report(replay, tol)
    status = "PASS" if body["passed"] else "FAIL"
    write_report(cfg.out, "simulate-subsystem", status, body)
    print(f"{status}  simulate-subsystem  max |x_s - xbar_s| = {body['max_state_error']:.3e}  tol={tol:.0e}")
    return EXIT_PASS if body["passed"] else EXIT_FAIL


# -- verify ------------------------------------------------------------------------


def check_control_equality(ctx: DomainContext, samples, phases, tol=EQUALITY_TOL) -> tuple[CheckReport, CheckReport]:
    """Pointwise equality of the full law's s-inputs with the separable
    subsystem law (full-state form) and with the subsystem law evaluated on
    the measured augmented state."""
    sys_ = ctx.system
    t1 = t2 = 0.0
    for x, ph in zip(samples, phases):
        r = full_control(ctx, x, phase=ph)
        us = r.u[ctx.s_inputs]
        ussc = u_ssc(ctx, x, F=r.F, phase=ph)
        X = sys_.measurement_transform(x, r.F)
        ubar = u_bar_s(ctx, X, ph)
        t1 = max(t1, np.abs(us - ussc).max() / (1.0 + np.abs(r.u).max()))
        t2 = max(t2, np.abs(us - ubar).max())
    n = len(samples)
    notes = [] if n else ["no samples: vacuous"]
    a = CheckReport(f"law_equality_{ctx.vertex}", bool(t1 <= tol), {"u_s_vs_u_ssc_scaled": t1}, n, tol, list(notes))
    b = CheckReport(f"measured_law_equality_{ctx.vertex}", bool(t2 <= tol), {"u_s_vs_ubar_s": t2}, n, tol, list(notes))
    return a, b


def verify_domain(system: AmputeeSystem, gait: GaitParams, vertex: str, n_samples: int, seed: int, tol: float | None = None, kp=100.0, kd=20.0, fd_samples: int | None = None) -> list[CheckReport]:
    """Checker battery on one domain.

    Equality checks use all `n_samples` states; the finite-difference heavy
    structural checks use `fd_samples` of them (default min(n, 10)).
    """
    rng = np.random.default_rng([seed, VERTICES.index(vertex)])
    ctx = DomainContext(system, vertex, gait[vertex], kp, kd)
    xs = sample_admissible(ctx, rng, n_samples, vel=SAMPLE_VEL)
    phases = [random_phase(ctx, x, rng) if ctx.mode == "phase" else None for x in xs]
    nfd = min(n_samples, 10) if fd_samples is None else min(fd_samples, n_samples)
    reports = list(check_control_equality(ctx, xs, phases, tol or EQUALITY_TOL))
    if n_samples == 0:
        vac = ["no samples: vacuous"]
        reports += [
            CheckReport(f"separability_{vertex}", True, {}, 0, SEPARABILITY_TOL, vac),
            CheckReport(f"output_conditions_{vertex}", True, {}, 0, OUTPUT_COND_TOL, vac),
            CheckReport(f"subsystem_equivalence_{vertex}", True, {}, 0, EQUIVALENCE_TOL, vac),
        ]
        return reports
    ph0 = phases[0]
    form = separable_form(ctx, ph0)
    structure = separable_structure(ctx)
    sep = check_separability(form, structure, xs[:nfd], SEPARABILITY_TOL)
    sep.name = f"separability_{vertex}"
    oc = check_output_conditions(form, structure, full_outputs(ctx, ph0), xs[:nfd], OUTPUT_COND_TOL)
    oc.name = f"output_conditions_{vertex}"
    fs, gs = equivalence_fields_full(ctx, ph0)
    fb, gb = equivalence_fields_subsystem(ctx, ph0)
    equiv = check_subsystem_equivalence(fs, gs, fb, gb, lambda x: measured_state(ctx, x, phase=ph0), xs[:nfd], EQUIVALENCE_TOL)
    equiv.name = f"subsystem_equivalence_{vertex}"
    return reports + [sep, oc, equiv]


def cmd_verify(cfg: RunConfig) -> int:
    system = load_system(cfg.model, cfg.mass_delta)
    gait = load_gait(cfg.gait)
    if cfg.samples == 0:
        log.warning("zero samples requested: every check passes vacuously")
    reports = []
    for v in VERTICES:
        reports += verify_domain(system, gait, v, cfg.samples, cfg.seed, cfg.tol, cfg.kp, cfg.kd)
    for r in reports:
        print(r.line())
    ok = all(r.passed for r in reports)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_report(cfg.out, "verify", "PASS" if ok else "FAIL", {"samples": cfg.samples, "seed": cfg.seed, "checks": [r.to_dict() for r in reports]})
    return EXIT_PASS if ok else EXIT_FAIL


# -- robustness --------------------------------------------------------------------


def s_output_degrees(walker: WalkingSystem) -> dict[str, list[int]]:
    return {v: [o.degree for o in s_outputs(walker.context(v))] for v in VERTICES}


def tracking_errors(walker: WalkingSystem, replay: ReplayResult) -> dict:
    """Max |y_s| over the replay, split into relative-degree-2 outputs and the
    relative-degree-1 hip-velocity output."""
    deg = s_output_degrees(walker)
    d2 = d1 = 0.0
    for i, v in enumerate(replay.domain):
        for j, g in enumerate(deg[v]):
            val = abs(replay.ys[i, j])
            if g == 2:
                d2 = max(d2, val)
            else:
                d1 = max(d1, val)
    return {"max_abs_y_s": d2, "max_abs_hip_velocity_error": d1}


def cmd_robustness(cfg: RunConfig) -> int:
    system = load_system(cfg.model, cfg.mass_delta)
    gait = load_gait(cfg.gait)
    try:
        walker, trace, rows, _ = run_full(system, gait, cfg.steps, cfg.out, cfg.kp, cfg.kd)
    except (HybridError, GaitError, DecouplingSingularityError, RankDeficiencyError) as exc:
        log.error("full simulation failed: %s", exc)
        write_report(cfg.out, "robustness", "FAIL", {"mass_delta": cfg.mass_delta, "error": f"{type(exc).__name__}: {exc}"})
        return EXIT_FAIL
    replay = replay_subsystem(walker, trace)
    replay.to_csv(cfg.out / "tracking.csv")
    tol = cfg.tol or REPLAY_TOL
    track = tracking_errors(walker, replay)
    rep = replay_report(replay, REPLAY_TOL)
    ok = track["max_abs_y_s"] <= tol and rep["passed"]
    body = {
        "mass_delta": cfg.mass_delta,
        "human_mass": float(system.human.total_mass),
        "total_mass": float(system.human.total_mass + system.prosthesis.total_mass),
        "steps_completed": len(rows),
        "tolerance": tol,
        **track,
        "max_state_error": rep["max_state_error"],
    }
    status = "PASS" if ok else "FAIL"
    write_report(cfg.out, "robustness", status, body)
    print(f"{status}  robustness  mass_delta={cfg.mass_delta:+g} kg  max|y_s|={track['max_abs_y_s']:.3e}  tol={tol:.0e}")
    return EXIT_PASS if ok else EXIT_FAIL


# -- entry point ---------------------------------------------------------------------

COMMANDS = {
    "simulate-full": cmd_simulate_full,
    "simulate-subsystem": cmd_simulate_subsystem,
    "verify": cmd_verify,
    "robustness": cmd_robustness,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepsim", description="Separable prosthesis control: simulation and verification.")
    p.add_argument("--version", action="version", version=f"sepsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate-full": "walk the full amputee model and write trace CSVs",
        "simulate-subsystem": "replay a full-model trace through the prosthesis subsystem",
        "verify": "run the structural and control-equality checks on sampled states",
        "robustness": "walk a heavier human model and report subsystem tracking",
    }
    defaults = {"simulate-full": 10, "robustness": 10}
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], description=helps[name])
        s.add_argument("--model", type=Path, default=data_path("model1.yaml"), help="model file (default: packaged Model 1)")
        s.add_argument("--gait", type=Path, default=data_path("reference_gait.yaml"), help="gait file (default: packaged reference gait)")
        s.add_argument("--out", type=Path, default=Path("sepsim_out"), help="output directory")
        s.add_argument("--seed", type=int, default=0, help="sampling seed")
        s.add_argument("--tol", type=float, default=None, help="override the pass tolerance")
        s.add_argument("--kp", type=float, default=100.0, help="proportional output gain")
        s.add_argument("--kd", type=float, default=20.0, help="derivative output gain")
        if name in defaults:
            s.add_argument("--steps", type=int, default=defaults[name], help="number of domain traversals")
        if name == "verify":
            s.add_argument("--samples", type=int, default=200, help="sampled states per domain")
        if name == "simulate-subsystem":
            s.add_argument("--trace", type=Path, required=True, help="trace.csv written by simulate-full")
        s.add_argument("--mass-delta", type=float, default=24.9 if name == "robustness" else 0.0, help="kg added to the human segments")
    return p


def configure_logging():
    level = os.environ.get("SEPSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        command=args.command,
        model=args.model,
        gait=args.gait,
        out=args.out,
        steps=getattr(args, "steps", 0),
        seed=args.seed,
        samples=getattr(args, "samples", 0),
        tol=args.tol,
        mass_delta=args.mass_delta,
        trace=getattr(args, "trace", None),
        kp=args.kp,
        kd=args.kd,
    )
    try:
        cfg.validate()
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, FormatError, ModelError, GaitError, TraceSchemaError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        try:
            cfg.out.mkdir(parents=True, exist_ok=True)
            write_report(cfg.out, cfg.command, "CONFIG_ERROR", {"error": str(exc)})
        except OSError:
            pass
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
