"""Command-line surface: simulate, orbit, certify, reproduce-paper.

Exit codes: 0 success, 1 usage error, 2 model validation failure, 3 check
failure (certify --strict, or a failed reproduction assertion), 4 numerical
or I/O failure.  All CSV output uses '.' decimals, '\\n' line endings, and
17 significant digits so every double round-trips exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import certify, genereg
from .expr import EvalError, ParseError
from .integrate import IntegrationError, IntegratorSettings, sample_trajectory
from .model import ClosedLoopModel, ModelError, build_doubled, load_model
from .poincare import iterate_orbit

USAGE_ERROR, MODEL_ERROR, CHECK_FAILURE, NUMERICAL_ERROR = 1, 2, 3, 4


class ReproductionError(RuntimeError):
    """A reproduction run missed its convergence assertions."""

    def __init__(self, message: str, discrepancy: float):
        super().__init__(message)
        self.discrepancy = discrepancy


@dataclass
class RunReport:
    """Self-contained record of one CLI run."""

    command: str
    model_digest: str
    solver: dict
    seed: int | None = None
    checks: list = field(default_factory=list)
    certificate: dict | None = None
    produced_files: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "model_digest": self.model_digest,
            "solver": self.solver,
            "seed": self.seed,
            "checks": self.checks,
            "certificate": self.certificate,
            "produced_files": self.produced_files,
            "metrics": self.metrics,
        }


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _digest(raw: bytes) -> str:
    return "sha256:" + hashlib.sha256(raw).hexdigest()


def _load(path: str) -> tuple[ClosedLoopModel, dict, str]:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ModelError(f"{path}: not valid JSON: {err}") from err
    return load_model(doc), doc, _digest(raw)


def _settings(args, tau: float) -> IntegratorSettings:
    return IntegratorSettings(
        rtol=args.rtol,
        atol=args.atol,
        max_step=args.max_step if args.max_step is not None else tau / 100,
    )


def _solver_dict(s: IntegratorSettings) -> dict:
    return {"rtol": s.rtol, "atol": s.atol, "max_step": s.max_step,
            "max_steps": s.max_steps}


def _x0(text: str, n: int) -> np.ndarray:
    try:
        vals = [float(p) for p in text.split(",")]
    except ValueError as err:
        raise ModelError(f"--x0: {err}") from err
    if len(vals) != n:
        raise ModelError(f"--x0 has {len(vals)} components, model has n={n}")
    return np.array(vals)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    mdl, _, _ = _load(args.model)
    s = _settings(args, mdl.tau)
    x0 = _x0(args.x0, mdl.n)
    n_steps = int(round((args.t_end - args.t0) / args.dt))
    grid = np.linspace(args.t0, args.t_end, n_steps + 1)
    traj = sample_trajectory(mdl.field, args.t0, x0, grid, s)
    header = ["t"] + [f"x{i + 1}" for i in range(mdl.n)]
    _write_csv(Path(args.out), header,
               (np.concatenate([[t], x]) for t, x in zip(traj.times, traj.states)))
    return 0


def _cmd_orbit(args) -> int:
    mdl, _, _ = _load(args.model)
    s = _settings(args, mdl.tau)
    x0 = _x0(args.x0, mdl.n)
    orbit = iterate_orbit(mdl, x0, args.n, s)
    header = ["k"] + [f"x{i + 1}" for i in range(mdl.n)] + ["residual"]
    rows = []
    for k, point in enumerate(orbit.points):
        res = orbit.residuals[k - 1] if k > 0 else float("nan")
        rows.append(np.concatenate([[k], point, [res]]))
    _write_csv(Path(args.out), header, rows)
    print(f"orbit: {args.n} iterates, tail diameter {orbit.tail_diameter():.3e} "
          f"-> {args.out}")
    return 0


def _run_checks(mdl: ClosedLoopModel, doc: dict, digest: str, command: str,
                s: IntegratorSettings, seed: int, samples: int,
                tol: float, residual_tol: float, max_iters: int) -> RunReport:
    dm = build_doubled(mdl)
    checks = [
        certify.check_A1_quasimonotone(mdl, samples, seed),
        certify.check_A2_input_monotone(mdl, samples, seed),
        certify.check_A3_output_decreasing(mdl, samples, seed),
        certify.verify_box_invariance(mdl, mdl.X, seed=seed),
        certify.check_bracket_condition(dm, mdl.X.lo, mdl.X.hi, s),
    ]
    slope_check = None
    if doc.get("type") == "gene":
        slope_check = genereg.check_H(genereg.spec_from_config(doc))
        checks.append(slope_check)

    cert = certify.bracket_converge(dm, mdl.X.lo, mdl.X.hi, tol=tol,
                                    residual_tol=residual_tol,
                                    max_iters=max_iters, s=s)
    report = RunReport(command=command, model_digest=digest,
                       solver=_solver_dict(s), seed=seed,
                       checks=[c.to_dict() for c in checks],
                       certificate=cert.to_dict())
    if slope_check is not None and slope_check.passed:
        uniqueness = {"basis": "slope-condition",
                      "note": "collapse of the brackets is guaranteed by the "
                              "passing slope condition"}
    else:
        uniqueness = {"basis": "empirical",
                      "note": "gap below tolerance is evidence, not proof, "
                              "of a unique fixed point on the bracketed box"}
    report.metrics["uniqueness"] = uniqueness
    report.metrics["all_checks_pass"] = all(c.passed for c in checks)
    report.metrics["converged"] = cert.converged
    return report


def _cmd_certify(args) -> int:
    mdl, doc, digest = _load(args.model)
    s = _settings(args, mdl.tau)
    report = _run_checks(mdl, doc, digest, "certify", s, args.seed, args.samples,
                         args.tol, args.residual_tol, args.max_iters)
    out = Path(args.out)
    report.produced_files.append(str(out))
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    ok = report.metrics["all_checks_pass"] and report.metrics["converged"]
    print(f"certify: checks {'pass' if report.metrics['all_checks_pass'] else 'FAIL'}, "
          f"bracketing {'converged' if report.metrics['converged'] else 'DID NOT CONVERGE'} "
          f"-> {out}")
    if args.strict and not ok:
        return CHECK_FAILURE
    return 0


_GNUPLOT_3D = """\
set datafile separator ','
set xlabel 'x1'
set ylabel 'x2'
set zlabel 'x3'
splot for [k=0:4] '{csv}' using (column(3*k+2)):(column(3*k+3)):(column(3*k+4)) \\
    with lines title sprintf('start %d', k)
pause -1
"""

_GNUPLOT_SERIES = """\
set datafile separator ','
set xlabel 't'
set ylabel '{component}'
plot for [k=0:4] '{csv}' using 1:(column(k+2)) with lines title sprintf('start %d', k)
pause -1
"""


def reproduce_paper(outdir, rtol: float = 1e-9, atol: float = 1e-12,
                    t_end: float = 200.0, dt: float = 0.05,
                    seed: int = 0) -> RunReport:
    """Regenerate the bundled demo study end to end.

    Runs the three-gene demo model from five initial conditions spread
    along the box diagonal, writes the phase-portrait and per-component
    time-series CSVs with gnuplot scripts, certifies convergence, and
    asserts that all five trajectories have collapsed onto one harmonic
    periodic orbit (sup-distance and period-defect both below 1e-3).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = genereg.reference_config()
    digest = _digest(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode())
    mdl = load_model(doc)
    s = IntegratorSettings(rtol=rtol, atol=atol, max_step=mdl.tau / 100)
    tau = mdl.tau

    starts = [np.array([k / 4, k / 4, 5 * k / 24]) for k in range(5)]
    grid = np.linspace(0.0, t_end, int(round(t_end / dt)) + 1)
    with ThreadPoolExecutor(max_workers=len(starts)) as pool:
        trajs = list(pool.map(
            lambda x0: sample_trajectory(mdl.field, 0.0, x0, grid, s), starts))

    report = RunReport(command="reproduce-paper", model_digest=digest,
                       solver=_solver_dict(s), seed=seed)

    def emit_csv(name: str, header: list[str], columns: list[np.ndarray]) -> Path:
        path = outdir / name
        _write_csv(path, header, np.column_stack(columns))
        report.produced_files.append(str(path))
        return path

    def emit_text(name: str, text: str) -> Path:
        path = outdir / name
        path.write_text(text)
        report.produced_files.append(str(path))
        return path

    header2 = ["t"]
    cols2 = [grid]
    for k, traj in enumerate(trajs):
        header2 += [f"x1_k{k}", f"x2_k{k}", f"x3_k{k}"]
        cols2 += [traj.states[:, 0], traj.states[:, 1], traj.states[:, 2]]
    emit_csv("fig2.csv", header2, cols2)
    emit_text("fig2.gp", _GNUPLOT_3D.format(csv="fig2.csv"))

    for comp, name in enumerate(["fig3", "fig4", "fig5"]):
        header = ["t"] + [f"x{comp + 1}_k{k}" for k in range(5)]
        cols = [grid] + [traj.states[:, comp] for traj in trajs]
        emit_csv(f"{name}.csv", header, cols)
        emit_text(f"{name}.gp", _GNUPLOT_SERIES.format(
            csv=f"{name}.csv", component=f"x{comp + 1}"))

    cert_report = _run_checks(mdl, doc, digest, "reproduce-paper", s, seed=seed,
                              samples=256, tol=1e-6, residual_tol=1e-8,
                              max_iters=500)
    emit_text("certificate.json", json.dumps(cert_report.to_dict(), indent=2) + "\n")
    report.checks = cert_report.checks
    report.certificate = cert_report.certificate
    report.metrics.update(cert_report.metrics)

    # convergence assertions: common limit at late period multiples, and a
    # period-tau repeat over the settled window
    per = int(round(tau / dt))
    late = [j * per for j in range(len(grid) // per + 1)
            if j >= 40 and j * per < len(grid)]
    pair_dist = 0.0
    for a in range(len(trajs)):
        for b in range(a + 1, len(trajs)):
            d = np.max(np.abs(trajs[a].states[late] - trajs[b].states[late]))
            pair_dist = max(pair_dist, float(d))
    lo_idx, hi_idx = int(round(150.0 / dt)), int(round(195.0 / dt))
    period_defect = 0.0
    for traj in trajs:
        window = slice(lo_idx, hi_idx + 1)
        shifted = slice(lo_idx + per, hi_idx + per + 1)
        d = np.max(np.abs(traj.states[shifted] - traj.states[window]))
        period_defect = max(period_defect, float(d))
    report.metrics["max_pairwise_distance"] = pair_dist
    report.metrics["max_period_defect"] = period_defect

    report_path = outdir / "report.json"
    report.produced_files.append(str(report_path))
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")

    missing = [p for p in report.produced_files
               if not Path(p).exists() or Path(p).stat().st_size == 0]
    if missing:
        raise OSError(f"produced files missing or empty: {missing}")

    worst = max(pair_dist, period_defect)
    if worst >= 1e-3:
        raise ReproductionError(
            f"trajectories did not collapse onto one periodic orbit: "
            f"pairwise distance {pair_dist:.3e}, period defect {period_defect:.3e}",
            worst,
        )
    return report


def _cmd_reproduce(args) -> int:
    report = reproduce_paper(args.outdir, rtol=args.rtol, atol=args.atol,
                             seed=args.seed)
    print(f"reproduce-paper: {len(report.produced_files)} files in {args.outdir} "
          f"(pairwise distance {report.metrics['max_pairwise_distance']:.2e}, "
          f"period defect {report.metrics['max_period_defect']:.2e})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rtol", type=float, default=1e-9)
    p.add_argument("--atol", type=float, default=1e-12)
    p.add_argument("--max-step", type=float, default=None,
                   help="default: period / 100")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perifix",
        description="Simulate and certify time-periodic negative-feedback systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one trajectory to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(run=_cmd_simulate)

    p = sub.add_parser("orbit", help="period-map iterates to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--n", type=int, required=True, help="number of iterates")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(run=_cmd_orbit)

    p = sub.add_parser("certify", help="run all hypothesis checks and the "
                                       "bracketing iteration; write a JSON report")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--tol", type=float, default=1e-6,
                   help="bracket gap tolerance")
    p.add_argument("--residual-tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--strict", action="store_true",
                   help="exit 3 if any check fails or bracketing stalls")
    _add_solver_flags(p)
    p.set_defaults(run=_cmd_certify)

    p = sub.add_parser("reproduce-paper",
                       help="regenerate the bundled demo study (figures + certificate)")
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_solver_flags(p)
    p.set_defaults(run=_cmd_reproduce)

    return parser


def run_command(argv: list[str]) -> int:
    """Parse argv, dispatch, and map failures to documented exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else USAGE_ERROR
    try:
        return args.run(args)
    except (ModelError, ParseError, FileNotFoundError) as err:
        print(f"perifix: model error: {err}", file=sys.stderr)
        return MODEL_ERROR
    except ReproductionError as err:
        print(f"perifix: reproduction assertion failed: {err}", file=sys.stderr)
        return CHECK_FAILURE
    except (IntegrationError, EvalError, certify.CertificationError, OSError,
            ValueError) as err:
        print(f"perifix: numerical failure: {err}", file=sys.stderr)
        return NUMERICAL_ERROR


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
