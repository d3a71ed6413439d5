"""Command line entry point ``blhomlab``.

Exit codes: 0 pass, 2 criterion failure, 3 config error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .asymptotics import (
    PlateauError,
    decay_report,
    slow_witness_build,
    slow_witness_verify,
    tail_offset_independence,
)
from .blsolver import (
    FourierBoundaryData,
    LayerSolverError,
    homogenization_error_sweep,
    solve_quasiperiodic_regularized,
    solve_rational_strip,
    solve_series_laplacian,
)
from .blsolver.rect import bump_source
from .cell import NAMED_COEFFICIENTS, CellSolverError, named_coefficients, solve_cell_problems
from .config import ConfigError, load_config
from .experiments import EXIT_CONFIG, EXIT_CRITERION, EXIT_NONCONVERGENCE, EXIT_PASS, run_experiment, write_outputs
from .geometry import (
    GeometryError,
    axis_frame,
    build_frame,
    golden_frame,
    liouville_direction,
    small_divisor_scan,
    xi_sequence,
)
from .kernels import boundary_mass, greens_identity_check, harmonicity_residual, kernel_bound_check, scaling_defect

NUMERICAL_ERRORS = (CellSolverError, LayerSolverError, PlateauError)


class UsageError(ValueError):
    pass


def parse_frame(spec: str, offset: float = 0.0):
    """``axis``, ``golden``, ``liouville[:levels]`` or ``n1,n2``."""
    if spec == "axis":
        return axis_frame(2, offset)
    if spec == "golden":
        return golden_frame(offset)
    if spec.startswith("liouville"):
        _, _, lv = spec.partition(":")
        return liouville_direction(int(lv) if lv else 3, offset)
    try:
        return build_frame([float(v) for v in spec.split(",")], offset)
    except ValueError as e:
        raise UsageError(f"bad frame {spec!r}: {e}") from None


def parse_data(items: list[str]) -> FourierBoundaryData:
    """Terms ``sin:x1,x2[:amp]``, ``cos:x1,x2[:amp]``, ``const:c``."""
    out = FourierBoundaryData.constant(0.0)
    for it in items:
        parts = it.split(":")
        try:
            if parts[0] == "const":
                out = out + FourierBoundaryData.constant(float(parts[1]))
                continue
            xi = tuple(int(v) for v in parts[1].split(","))
            amp = float(parts[2]) if len(parts) > 2 else 1.0
        except (IndexError, ValueError):
            raise UsageError(f"bad data term {it!r}") from None
        if parts[0] == "sin":
            out = out + FourierBoundaryData.sine(xi, amp)
        elif parts[0] == "cos":
            out = out + FourierBoundaryData.cosine(xi, amp)
        else:
            raise UsageError(f"bad data term {it!r}")
    return out


def _emit(args, name: str, csv_text: str | None, payload: dict) -> None:
    """Write to ``--out`` (both formats) or print the chosen format."""
    js = json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if csv_text is not None:
            (out / f"{name}.csv").write_text(csv_text)
        (out / f"{name}.json").write_text(js)
    if args.format == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(js)


# ---------------------------------------------------------------------------
# subcommands


def _run_one(path: str, out: str | None) -> tuple[str, int, str]:
    try:
        cfg = load_config(path)
    except ConfigError as e:
        return path, EXIT_CONFIG, str(e)
    try:
        res = run_experiment(cfg)
    except NUMERICAL_ERRORS as e:
        return path, EXIT_NONCONVERGENCE, f"{path}: non-convergence: {e}"
    except (GeometryError, ValueError) as e:
        return path, EXIT_CONFIG, f"{path}: invalid setup: {e}"
    target = out or cfg.output or str(Path("out") / cfg.experiment.lower())
    write_outputs(res, cfg, target)
    lines = [f"{res.experiment}: {'PASS' if res.passed else 'FAIL'} ({target})"]
    for c in res.criteria:
        lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.value:.6g} {c.relation} {c.threshold:.6g}"
                     + (f"  ({c.note})" if c.note else ""))
    return path, res.exit_code, "\n".join(lines)


def cmd_run(args) -> int:
    configs = args.config
    if not configs:
        raise UsageError("run needs at least one --config")
    outs = [args.out] * len(configs)
    if args.out and len(configs) > 1:
        outs = [str(Path(args.out) / Path(c).stem) for c in configs]
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_run_one, configs, outs))
    else:
        results = [_run_one(c, o) for c, o in zip(configs, outs)]
    code = EXIT_PASS
    for _, rc, msg in results:
        print(msg, file=sys.stderr if rc in (EXIT_CONFIG, EXIT_NONCONVERGENCE) else sys.stdout)
        code = max(code, rc)
    return code


def cmd_dioph(args) -> int:
    frame = parse_frame(args.frame)
    if args.xi_seq:
        seq = xi_sequence(frame, args.xi_seq, args.radius)
        _emit(args, "xi_sequence", seq.to_csv(), json.loads(seq.to_json()))
        return EXIT_PASS
    rep = small_divisor_scan(frame, args.tau, args.radius)
    _emit(args, "dioph", rep.to_csv(), json.loads(rep.to_json()))
    return EXIT_PASS


def cmd_cell(args) -> int:
    coeffs = named_coefficients(args.coefficients, args.grid)
    cs = solve_cell_problems(coeffs)
    if args.out:
        cs.save(args.out)
    sys.stdout.write(json.dumps(cs.summary(), indent=2, sort_keys=True) + "\n")
    return EXIT_PASS


def cmd_decay(args) -> int:
    frame = parse_frame(args.frame, args.offset)
    v0 = parse_data(args.data or ["sin:1,0"])
    coeffs = None if args.coefficients == "identity" else named_coefficients(args.coefficients, 64)
    if args.solver == "series":
        f = solve_series_laplacian(v0, frame)
        rep = decay_report(f, np.linspace(0.0, args.T, args.nt + 1))
    elif args.solver == "strip":
        f = solve_rational_strip(coeffs, v0, frame, args.T, (args.n_theta, args.nt))
        rep = decay_report(f)
    else:
        f = solve_quasiperiodic_regularized(coeffs, v0, frame, args.iota, args.T, (args.n_theta, args.nt))
        rep = decay_report(f)
    _emit(args, "decay", rep.to_csv(), rep.to_dict())
    return EXIT_PASS


def cmd_slowcv(args) -> int:
    frame = parse_frame(args.frame)
    w = slow_witness_build(frame, args.l, args.M_max, args.variant, args.R, args.radius)
    rep = slow_witness_verify(w, frame)
    _emit(args, "witness", rep.to_csv(), json.loads(rep.to_json()))
    return EXIT_PASS if rep.passed else EXIT_CRITERION


def cmd_tailscan(args) -> int:
    frame = parse_frame(args.frame)
    v0 = parse_data(args.data or ["cos:1,0", "const:0.2"])
    rep = tail_offset_independence(v0, None, frame, args.offsets, args.path, args.T, (args.n_theta, args.nt))
    csv_text = "a,tail,difference\n" + "".join(f"{a!r},{t!r},{d!r}\n" for a, t, d in zip(rep.offsets, rep.tails, rep.differences))
    _emit(args, "tails", csv_text, rep.to_dict())
    return EXIT_PASS


def cmd_kernel_check(args) -> int:
    frame = parse_frame(args.frame, args.offset)
    rep = kernel_bound_check(frame)
    N = frame.N[:, 0]
    probes = [frame.a * frame.n + s * N + h * frame.n for s, h in ((0.0, 0.1), (1.3, 2.0), (-4.0, 0.01))]
    mass = max(abs(boundary_mass(frame, p) - 1.0) for p in probes)
    yb = frame.a * frame.n
    harm = max(abs(harmonicity_residual(frame, yb + s * N + h * frame.n, yb)) for s, h in ((0.2, 1.5), (-1.0, 2.0), (3.0, 1.6)))
    scale = scaling_defect(frame)
    green = greens_identity_check(frame)
    checks = {
        "bound_constant_minus_inv_pi": abs(rep.bound_constant - 1 / math.pi),
        "boundary_mass_error": mass,
        "harmonicity_residual": harm,
        "scaling_defect": scale,
        "green_boundary": green.boundary_max,
        "green_laplacian_residual": green.laplacian_residual,
    }
    limits = {"bound_constant_minus_inv_pi": 1e-9, "boundary_mass_error": 1e-8, "harmonicity_residual": 1e-6,
              "scaling_defect": 1e-12, "green_boundary": 1e-8, "green_laplacian_residual": 1e-4}
    passed = {k: bool(v <= limits[k]) for k, v in checks.items()}
    payload = {"report": rep.to_dict(), "checks": checks, "limits": limits, "passed": passed,
               "green": green.to_dict()}
    csv_text = "check,value,limit,pass\n" + "".join(f"{k},{checks[k]!r},{limits[k]!r},{int(passed[k])}\n" for k in checks)
    _emit(args, "kernel_check", csv_text, payload)
    return EXIT_PASS if all(passed.values()) else EXIT_CRITERION


def cmd_err_sweep(args) -> int:
    coeffs = named_coefficients(args.coefficients, 64)
    sw = homogenization_error_sweep(coeffs, bump_source(), args.eps)
    csv_text = "eps,error\n" + "".join(f"{e!r},{v!r}\n" for e, v in sw.rows())
    _emit(args, "sweep", csv_text, {"eps": sw.eps, "errors": sw.errors, "slope": sw.slope,
                                    "degenerate": sw.degenerate, "grid": sw.grid})
    if sw.degenerate:
        return EXIT_PASS
    return EXIT_PASS if sw.slope >= args.min_slope else EXIT_CRITERION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blhomlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=False):
        if config:
            sp.add_argument("--config", action="append", default=[], help="experiment config (JSON); repeatable")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default="json")
        sp.add_argument("--jobs", type=int, default=1, help="concurrent experiment runs")

    sp = sub.add_parser("run", help="run experiments from config files")
    common(sp, config=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("dioph", help="small-divisor scan or witness sequence of a direction")
    common(sp)
    sp.add_argument("--frame", default="golden")
    sp.add_argument("--tau", type=float, default=0.0)
    sp.add_argument("--radius", type=int, default=100)
    sp.add_argument("--xi-seq", type=int, default=0, metavar="M_MAX", help="build the witness sequence instead")
    sp.set_defaults(func=cmd_dioph)

    sp = sub.add_parser("cell", help="solve the cell problems")
    common(sp)
    sp.add_argument("--coefficients", choices=NAMED_COEFFICIENTS, default="layered")
    sp.add_argument("--grid", type=int, default=64)
    sp.set_defaults(func=cmd_cell)

    sp = sub.add_parser("decay", help="solve a layer and report its decay")
    common(sp)
    sp.add_argument("--frame", default="axis")
    sp.add_argument("--offset", type=float, default=0.0)
    sp.add_argument("--data", action="append", help="data term: sin:x1,x2[:amp] | cos:x1,x2[:amp] | const:c")
    sp.add_argument("--coefficients", choices=NAMED_COEFFICIENTS, default="identity")
    sp.add_argument("--solver", choices=("series", "strip", "quasi"), default="strip")
    sp.add_argument("--T", type=float, default=6.0)
    sp.add_argument("--n-theta", type=int, default=64)
    sp.add_argument("--nt", type=int, default=512)
    sp.add_argument("--iota", type=float, default=None)
    sp.set_defaults(func=cmd_decay)

    sp = sub.add_parser("slowcv", help="build and verify the slow-convergence witness")
    common(sp)
    sp.add_argument("--frame", default="liouville:3")
    sp.add_argument("--l", type=float, default=1.0)
    sp.add_argument("--M-max", type=int, default=3)
    sp.add_argument("--variant", choices=("L2", "Linf"), default="L2")
    sp.add_argument("--R", type=float, default=1.0)
    sp.add_argument("--radius", type=int, default=10_000)
    sp.set_defaults(func=cmd_slowcv)

    sp = sub.add_parser("tailscan", help="tails across boundary offsets")
    common(sp)
    sp.add_argument("--frame", default="golden")
    sp.add_argument("--data", action="append")
    sp.add_argument("--offsets", type=float, nargs="+", default=[0.0, 0.3, 0.7])
    sp.add_argument("--path", choices=("grid", "series"), default="grid")
    sp.add_argument("--T", type=float, default=8.0)
    sp.add_argument("--n-theta", type=int, default=32)
    sp.add_argument("--nt", type=int, default=256)
    sp.set_defaults(func=cmd_tailscan)

    sp = sub.add_parser("kernel-check", help="half-plane kernel bounds, mass, scaling and Green identity")
    common(sp)
    sp.add_argument("--frame", default="golden")
    sp.add_argument("--offset", type=float, default=0.0)
    sp.set_defaults(func=cmd_kernel_check)

    sp = sub.add_parser("err-sweep", help="homogenization error versus eps")
    common(sp)
    sp.add_argument("--coefficients", choices=NAMED_COEFFICIENTS, default="layered")
    sp.add_argument("--eps", type=float, nargs="+", default=[0.125, 0.0625, 0.03125])
    sp.add_argument("--min-slope", type=float, default=0.8)
    sp.set_defaults(func=cmd_err_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        print(f"non-convergence: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (GeometryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
