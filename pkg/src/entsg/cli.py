"""Command-line entry points.

Subcommands: ``run``, ``study-tau``, ``study-eps``, ``study-joint``,
``report-energy``. Exit codes: 0 success, 1 usage, 2 configuration,
3 solver, 4 I/O. On failure a one-line JSON error record goes to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import __version__
from . import diagnostics as dg
from .config import config_to_dict, load_config, with_seed
from .dynamics import simulate
from .errors import ConfigError, FormatError, InstanceTooLarge, SolverError
from .measures import DiscreteMeasure
from .sgt import read_trajectory, write_trajectory

EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _grid(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if not vals:
        raise UsageError("empty grid")
    return vals


def _resolve(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    return dataclasses.replace(cfg, threads=args.threads)


def _bounds_record(cfg):
    return dataclasses.asdict(cfg.bounds())


class _Stages:
    def __init__(self):
        self.times = {}

    def __call__(self, name):
        stages = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                stages.times[name] = time.perf_counter() - self.t0
        return _Timer()


def _write_manifest(out, command, cfg, stages, outputs, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config_to_dict(cfg) if cfg is not None else None,
        "threads": cfg.threads if cfg is not None else None,
        "theory_bounds": _bounds_record(cfg) if cfg is not None else None,
        "wall_clock": stages.times,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_report(out, study, records):
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"study": study, "version": __version__}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _table(header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    line = "  ".join(str(h).rjust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(str(c).rjust(w) for c, w in zip(r, widths)))


def _g(x):
    return f"{x:.6g}" if isinstance(x, float) else str(x)


# --- commands -----------------------------------------------------------------

def cmd_run(args):
    st = _Stages()
    with st("load"):
        cfg = _resolve(args)
    with st("simulate"):
        traj = simulate(cfg)
    with st("write"):
        write_trajectory(traj, args.out)
    _write_manifest(args.out, "run", cfg, st, [args.out],
                    {"steps": traj.steps, "snapshots": len(traj.snapshots)})
    rows = [(s.step, _g(s.time), _g(s.diagnostics.ot_eps), _g(s.diagnostics.potential_energy),
             _g(s.diagnostics.support_radius), s.diagnostics.iterations)
            for s in traj.snapshots]
    _table(("step", "time", "ot_eps", "potential", "radius", "iters"), rows)


def _single_atom_oracle(cfg, alpha0, mu0):
    if alpha0.n != 1 or mu0.n != 1:
        return None
    x0, y = alpha0.points[0], mu0.points[0]
    a = cfg.drift.matrix

    def exact(t):
        return DiscreteMeasure((y + expm(t * a) @ (x0 - y))[None, :], np.ones(1))
    return exact


def cmd_study_tau(args):
    st = _Stages()
    with st("load"):
        cfg = _resolve(args)
        alpha0, mu0 = cfg.build_measure("alpha0"), cfg.build_measure("mu0")
    with st("study"):
        fit = dg.tau_rate_study(cfg, _grid(args.tau_grid), _single_atom_oracle(cfg, alpha0, mu0))
    recs = [{"tau": t, "error": e} for t, e in zip(fit.grid, fit.errors)]
    recs.append({"summary": fit.as_record()})
    _write_report(args.out, "tau", recs)
    _write_manifest(args.out, "study-tau", cfg, st, [args.out])
    _table(("tau", "sup W2 error"), [(_g(t), _g(e)) for t, e in zip(fit.grid, fit.errors)])
    print(f"slope {fit.slope:.4f} +/- {fit.half_width:.4f}"
          + (" (degenerate: all errors zero)" if fit.degenerate else ""))


def cmd_study_eps(args):
    st = _Stages()
    with st("load"):
        cfg = _resolve(args)
        alpha, mu = cfg.build_measure("alpha0"), cfg.build_measure("mu0")
    with st("study"):
        rep = dg.eps_gap_study(alpha, mu, _grid(args.eps_grid), cfg.tol, cfg.max_iter)
    recs = [{"epsilon": e, "transport_gap": g, "value_gap": v}
            for e, g, v in zip(rep.eps_grid, rep.transport_gap, rep.value_gap)]
    recs.append({"summary": rep.as_record()})
    _write_report(args.out, "eps", recs)
    _write_manifest(args.out, "study-eps", cfg, st, [args.out])
    _table(("epsilon", "cost gap", "OT_eps - W2^2/2"),
           [(_g(e), _g(g), _g(v)) for e, g, v in zip(rep.eps_grid, rep.transport_gap, rep.value_gap)])
    print(f"W2^2 = {rep.w2_squared:.6g}; nonnegative={rep.nonnegative} monotone={rep.monotone}; "
          f"slope vs eps|log eps| = {rep.fit.slope:.4f}")


def read_schedule(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 4:
                raise ConfigError(f"schedule line {lineno}: expected 'epsilon tau count seed'")
            try:
                rows.append(dg.ScheduleRow(float(parts[0]), float(parts[1]),
                                           int(parts[2]), int(parts[3])))
            except ValueError:
                raise ConfigError(f"schedule line {lineno}: bad number") from None
    return rows


def cmd_study_joint(args):
    st = _Stages()
    with st("load"):
        cfg = _resolve(args)
        rows = read_schedule(args.schedule)
        if args.seed is not None:
            rows = [dataclasses.replace(r, seed=args.seed) for r in rows]
    with st("study"):
        rep = dg.joint_convergence_study(cfg, rows)
    recs = [{"row": i, "epsilon": r.epsilon, "tau": r.tau, "count": r.count, "seed": r.seed}
            for i, r in enumerate(rows)]
    recs += [{"pair": i, "distance": d, "approximate": a}
             for i, (d, a) in enumerate(zip(rep.distances, rep.approximate))]
    recs.append({"summary": rep.as_record()})
    _write_report(args.out, "joint", recs)
    _write_manifest(args.out, "study-joint", cfg, st, [args.out],
                    {"schedule": [dataclasses.asdict(r) for r in rows]})
    _table(("pair", "sup W2 distance", "approximate"),
           [(i, _g(d), a) for i, (d, a) in enumerate(zip(rep.distances, rep.approximate))])
    print(f"decreasing={rep.decreasing}" + (f"; {rep.note}" if rep.note else ""))


def cmd_report_energy(args):
    st = _Stages()
    with st("load"):
        cfg = _resolve(args)
        traj = read_trajectory(args.trajectory)
        mu0 = cfg.build_measure("mu0")
    with st("energy"):
        rep = dg.energy_report(traj, mu0, cfg.epsilon, cfg.tol, cfg.max_iter)
    recs = [{"time": t, "total": e, "kinetic": k, "potential": p}
            for t, e, k, p in zip(rep.times, rep.total, rep.kinetic, rep.potential)]
    recs.append({"summary": {"max_drift": rep.max_drift}})
    _write_report(args.out, "energy", recs)
    _write_manifest(args.out, "report-energy", cfg, st, [args.out],
                    {"trajectory": str(args.trajectory)})
    _table(("time", "total", "OT_eps", "potential"),
           [(_g(t), _g(e), _g(k), _g(p)) for t, e, k, p in
            zip(rep.times, rep.total, rep.kinetic, rep.potential)])
    print(f"max drift {rep.max_drift:.6g}")


def build_parser():
    p = _Parser(prog="entsg", description="Entropic semi-geostrophic particle solver")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", required=True, help="configuration file (.cfg)")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--seed", type=int, default=None,
                        help="override seeds (alpha0 gets SEED, mu0 gets SEED+1)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads, 0 = all cores; results do not depend on it")

    sp = sub.add_parser("run", help="simulate and write a trajectory")
    common(sp, "trajectory file (.sgt)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("study-tau", help="convergence rate in the time step")
    common(sp, "report file (.rpt)")
    sp.add_argument("--tau-grid", required=True, help="comma list, strictly decreasing")
    sp.set_defaults(func=cmd_study_tau)

    sp = sub.add_parser("study-eps", help="entropic gap against exact OT")
    common(sp, "report file (.rpt)")
    sp.add_argument("--eps-grid", required=True, help="comma list, strictly decreasing")
    sp.set_defaults(func=cmd_study_eps)

    sp = sub.add_parser("study-joint", help="simultaneous eps, tau, quantization refinement")
    common(sp, "report file (.rpt)")
    sp.add_argument("--schedule", required=True, help="lines of 'epsilon tau count seed'")
    sp.set_defaults(func=cmd_study_joint)

    sp = sub.add_parser("report-energy", help="entropic total energy along a trajectory")
    common(sp, "report file (.rpt)")
    sp.add_argument("--trajectory", required=True, help="trajectory file (.sgt)")
    sp.set_defaults(func=cmd_report_energy)
    return p


def _fail(code, exc):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("step", "marginal_error", "iterations", "field", "line", "key"):
        val = getattr(exc, attr, None)
        if val is not None and not (isinstance(val, float) and math.isnan(val)):
            rec[attr] = val
    sys.stderr.write(json.dumps(rec, default=str) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        if args.threads < 0:
            raise UsageError("--threads must be >= 0")
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(EXIT_USAGE, exc)
    except (ConfigError, InstanceTooLarge) as exc:
        return _fail(EXIT_CONFIG, exc)
    except SolverError as exc:
        return _fail(EXIT_SOLVER, exc)
    except (FormatError, OSError) as exc:
        return _fail(EXIT_IO, exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
