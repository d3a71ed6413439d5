"""Named experiments E1..E6 with pass/fail criteria and deterministic outputs."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .asymptotics import (
    decay_report,
    rational_tail_formula,
    slow_witness_build,
    slow_witness_verify,
    small_divisor_decay_check,
    tail_estimate,
    tail_offset_independence,
)
from .blsolver import (
    check_max_principle,
    homogenization_error_sweep,
    solve_rational_strip,
    solve_series_laplacian,
)
from .blsolver.rect import bump_source
from .cell import solve_cell_problems
from .config import E1Config, E2Config, E3Config, E4Config, E5Config, E6Config, config_dict
from .geometry import divisors, small_divisor_scan, xi_sequence

EXIT_PASS = 0
EXIT_CRITERION = 2
EXIT_CONFIG = 3
EXIT_NONCONVERGENCE = 4


@dataclass
class Criterion:
    name: str
    value: float
    threshold: float
    relation: str  # "<=" or ">="
    passed: bool
    note: str = ""

    @classmethod
    def le(cls, name: str, value: float, threshold: float, note: str = "") -> "Criterion":
        return cls(name, float(value), float(threshold), "<=", bool(value <= threshold), note)

    @classmethod
    def ge(cls, name: str, value: float, threshold: float, note: str = "") -> "Criterion":
        return cls(name, float(value), float(threshold), ">=", bool(value >= threshold), note)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExperimentResult:
    experiment: str
    reference: str
    criteria: list[Criterion] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)  # relative path -> text
    summary: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    @property
    def exit_code(self) -> int:
        return EXIT_PASS if self.passed else EXIT_CRITERION


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------


def run_e1(cfg: E1Config) -> ExperimentResult:
    res = ExperimentResult("E1", "rational direction: exponential decay to an offset-dependent tail")
    frame = cfg.frame.build()
    v0 = cfg.data.build()
    coeffs = None if cfg.coefficients.name == "identity" else cfg.coefficients.build()
    field_ = solve_rational_strip(coeffs, v0, frame, cfg.grid.T, (cfg.grid.n_theta, cfg.grid.nt), cfg.tolerance)
    report = decay_report(field_)
    tail = tail_estimate(field_, "plateau")
    res.criteria.append(Criterion.ge("max_principle", float(check_max_principle(field_)), 1.0))
    nz = np.any(v0.xi != 0, axis=1)
    if coeffs is None:
        series = solve_series_laplacian(v0, frame)
        z = field_.tangential_nodes()
        exact = np.array([series.trace(z, t) for t in field_.t])
        res.criteria.append(Criterion.le("strip_vs_exact_sup", float(np.abs(exact - field_.values).max()),
                                         cfg.sup_tolerance))
        if np.any(nz):
            kappa = float(2 * math.pi * divisors(frame, v0.xi[nz]).astype(float).min())
            got = report.model.get("kappa", float("nan"))
            res.criteria.append(Criterion.le("kappa_rel_error", abs(got - kappa) / kappa, cfg.kappa_rel_tolerance,
                                             f"fitted {got:.6g}, expected {kappa:.6g}"))
        formula = rational_tail_formula(v0, frame, frame.a)
        res.criteria.append(Criterion.le("tail_vs_formula", abs(tail.value - formula), cfg.tail_tolerance,
                                         f"plateau {tail.value:.3e}, formula {formula:.3e}"))
    res.files["decay.csv"] = report.to_csv()
    res.files["field.csv"] = field_.to_csv()
    res.summary = {"decay": report.to_dict(), "tail": tail.__dict__, "field": field_.summary()}
    return res


def parseval_gap(series, t_values, grid: int) -> float:
    g = np.arange(grid) / grid
    th = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    worst = 0.0
    for t in t_values:
        quad = float(np.mean((series.evaluate(th, t) - series.tail) ** 2))
        modes = float(series.deviation_l2(t) ** 2)
        worst = max(worst, abs(quad - modes))
    return worst


def run_e2(cfg: E2Config) -> ExperimentResult:
    res = ExperimentResult("E2", "small-divisor direction: decay faster than any power")
    frame = cfg.frame.build()
    v0 = cfg.data.build()
    series = solve_series_laplacian(v0, frame)
    t = np.linspace(cfg.t_min, cfg.t_max, cfg.t_samples)
    sp = small_divisor_decay_check(series, cfg.m_list, t)
    for m, ok, s in zip(sp.m_list, sp.flat, sp.sups):
        res.criteria.append(Criterion.ge(f"flat_top_decade_m{m}", float(ok), 1.0, f"sup {s:.6e}"))
    gap = parseval_gap(series, [0.0, 0.25, 1.0, 3.0], cfg.parseval_grid)
    res.criteria.append(Criterion.le("parseval_gap", gap, cfg.parseval_tolerance))
    scan = small_divisor_scan(frame, 0.0, cfg.scan_radius)
    res.criteria.append(Criterion.ge("scan_best_constant_positive", float(scan.best_constant > 0), 1.0,
                                     f"best constant {scan.best_constant:.6g}"))
    report = decay_report(series, np.linspace(0.0, cfg.t_max, 101))
    res.files["decay.csv"] = report.to_csv()
    res.files["dioph.csv"] = scan.to_csv()
    res.summary = {"superpolynomial": sp.to_dict(), "decay": report.to_dict(), "scan": json.loads(scan.to_json())}
    return res


def run_e3(cfg: E3Config) -> ExperimentResult:
    res = ExperimentResult("E3", "Liouville direction: slow convergence witness")
    frame = cfg.frame.build()
    seq = xi_sequence(frame, cfg.M_max, cfg.search_radius)
    res.files["xi_sequence.csv"] = seq.to_csv()
    res.criteria.append(Criterion.ge("xi_sequence_verified", float(verify_xi_sequence(seq, frame)), 1.0))
    summary = {"xi_sequence": json.loads(seq.to_json())}
    for l in cfg.l_list:
        w = slow_witness_build(frame, l, cfg.M_max, cfg.variant, cfg.R, cfg.search_radius)
        rep = slow_witness_verify(w, frame)
        tag = f"l{l:g}"
        worst = min((r.log_value - r.log_threshold for r in rep.rows), default=float("-inf"))
        worst_p = min((r.log_value - r.log_proven for r in rep.rows), default=float("-inf"))
        res.criteria.append(Criterion.ge(f"witness_literal_{tag}", worst, 0.0,
                                         "log(norm) - log(t_M^-l), min over retained levels"))
        res.criteria.append(Criterion.ge(f"witness_proven_{tag}", worst_p, 0.0,
                                         "log(norm) - log(sqrt2 (l/(2 pi e))^l t_M^-l)"))
        res.files[f"witness_{tag}.csv"] = rep.to_csv()
        summary[tag] = json.loads(rep.to_json())
        summary[tag]["M_start"] = w.M_start
        summary[tag]["chain"] = w.chain
    res.summary = summary
    return res


def verify_xi_sequence(seq, frame) -> bool:
    """Recheck each entry's inequalities and minimality by brute force on a small ball."""
    prev = None
    for M, xi, dv in seq.entries:
        x = np.array(xi)
        n = float(np.linalg.norm(x))
        if not float(divisors(frame, x)[0]) < (1.0 / M) * n ** (-M):
            return False
        if prev is not None and not n > prev + 1:
            return False
        # no smaller admissible vector inside the ball of radius |xi|
        r = int(math.ceil(n))
        g = np.arange(-r, r + 1)
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        n2 = np.sum(pts * pts, axis=1)
        pts = pts[(n2 > 0) & (n2 < n * n - 1e-9)]
        nn = np.sqrt(np.sum(pts * pts, axis=1))
        ok = divisors(frame, pts).astype(float) < (1.0 / M) * nn ** (-M)
        if prev is not None:
            ok &= nn > prev + 1
        if np.any(ok):
            return False
        prev = n
    return True


def run_e4(cfg: E4Config) -> ExperimentResult:
    res = ExperimentResult("E4", "tail dependence on the boundary offset")
    frame = cfg.frame.build()
    v0 = cfg.data.build()
    grid_rep = tail_offset_independence(v0, None, frame, cfg.offsets, "grid", cfg.grid.T,
                                        (cfg.grid.n_theta, cfg.grid.nt))
    series_rep = tail_offset_independence(v0, None, frame, cfg.offsets, "series")
    rat = tail_offset_independence(cfg.rational_data.build(), None, cfg.rational_frame.build(),
                                   cfg.rational_offsets)
    res.criteria.append(Criterion.le("irrational_grid_spread", grid_rep.spread, cfg.spread_factor * cfg.tolerance))
    res.criteria.append(Criterion.le("irrational_series_spread", series_rep.spread, 0.0))
    res.criteria.append(Criterion.le("rational_difference_error",
                                     abs(rat.differences[-1] - cfg.rational_expected_difference), 1e-10,
                                     f"difference {rat.differences[-1]:.12g}"))
    lines = ["path,a,tail,difference"]
    for rep in (grid_rep, series_rep, rat):
        for a, t, d in zip(rep.offsets, rep.tails, rep.differences):
            lines.append(f"{rep.method},{a!r},{t!r},{d!r}")
    res.files["tails.csv"] = "\n".join(lines) + "\n"
    res.summary = {"grid": grid_rep.to_dict(), "series": series_rep.to_dict(), "rational": rat.to_dict()}
    return res


A0_ORACLES = {
    "identity": np.eye(2),
    "layered": np.diag([math.sqrt(3.0), 2.0]),
}


def run_e5(cfg: E5Config) -> ExperimentResult:
    res = ExperimentResult("E5", "cell problems and the homogenized tensor")
    coeffs = cfg.coefficients.build()
    cs = solve_cell_problems(coeffs)
    if cfg.coefficients.name in A0_ORACLES:
        err = float(np.abs(cs.A0 - A0_ORACLES[cfg.coefficients.name]).max())
        res.criteria.append(Criterion.le("A0_vs_closed_form", err, cfg.a0_tolerance))
    worst = max(v for k, v in cs.residuals.items() if k != "psi_identity")
    res.criteria.append(Criterion.le("cell_residual", worst, cfg.residual_tolerance))
    res.criteria.append(Criterion.le("psi_identity", cs.residuals["psi_identity"], 1e-8))
    means = max(float(np.abs(cs.chi.mean(axis=(1, 2))).max()), float(np.abs(cs.gamma.mean(axis=(2, 3))).max()))
    res.criteria.append(Criterion.le("zero_means", means, 1e-10))
    ev = np.linalg.eigvalsh(0.5 * (cs.A0 + cs.A0.T))
    res.criteria.append(Criterion.ge("A0_ellipticity_margin", float(min(ev.min() - coeffs.lam, 1 / coeffs.lam - ev.max())),
                                     -1e-12))
    for name, arr in sorted(cs.fields().items()):
        lines = [f"# grid={arr.shape[-1]} field={name}"] + [",".join(repr(float(v)) for v in row) for row in arr]
        res.files[f"correctors/{name}.csv"] = "\n".join(lines) + "\n"
    res.files["correctors/summary.json"] = _json(cs.summary())
    res.summary = {"A0": cs.A0.tolist(), "residuals": cs.residuals}
    return res


def run_e6(cfg: E6Config) -> ExperimentResult:
    res = ExperimentResult("E6", "homogenization error sweep in eps")
    coeffs = cfg.coefficients.build()
    sw = homogenization_error_sweep(coeffs, bump_source(cfg.L), cfg.eps_list, cfg.L)
    if sw.degenerate:
        res.criteria.append(Criterion("slope", float("nan"), cfg.min_slope, ">=", True, "degenerate: no oscillation"))
    else:
        res.criteria.append(Criterion.ge("slope", sw.slope, cfg.min_slope))
    res.criteria.append(Criterion.ge("errors_finite", float(all(math.isfinite(e) for e in sw.errors)), 1.0))
    res.files["sweep.csv"] = "eps,error\n" + "".join(f"{e!r},{v!r}\n" for e, v in sw.rows())
    res.summary = {"grid": sw.grid, "slope": sw.slope, "degenerate": sw.degenerate, "errors": sw.errors}
    return res


RUNNERS: dict[str, Callable] = {"E1": run_e1, "E2": run_e2, "E3": run_e3, "E4": run_e4, "E5": run_e5, "E6": run_e6}


def run_experiment(cfg) -> ExperimentResult:
    t0 = time.perf_counter()
    res = RUNNERS[cfg.experiment](cfg)
    res.elapsed = time.perf_counter() - t0
    return res


def write_outputs(res: ExperimentResult, cfg, out_dir: str | Path) -> Path:
    """Write all files plus ``manifest.json`` (config, criteria, checksums)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for rel, text in sorted(res.files.items()):
        p = out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        p.write_bytes(data)
        entries.append({"path": rel, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    summary = out / "summary.json"
    sdata = _json(res.summary).encode()
    summary.write_bytes(sdata)
    entries.append({"path": "summary.json", "sha256": hashlib.sha256(sdata).hexdigest(), "bytes": len(sdata)})
    manifest = {
        "experiment": res.experiment,
        "description": res.reference,
        "version": __version__,
        "config": config_dict(cfg),
        "criteria": [c.to_dict() for c in res.criteria],
        "passed": res.passed,
        "exit_code": res.exit_code,
        "files": entries,
        "timing": {"elapsed_seconds": round(res.elapsed, 3)},
    }
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_nan_safe) + "\n")
    return mp


def _nan_safe(o):
    return str(o)
