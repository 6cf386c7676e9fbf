"""Command-line experiment runner.

    plaplab <kind> [--config PATH] [--out DIR] [--seed N] [--threads N]

Each run writes its CSV/JSON/field outputs into the output directory and
finishes with ``manifest.json`` listing every file and the pass/fail
verdict of each invariant the run asserted. The exit status is 1 when a
verdict fails, 2 for configuration errors and 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from plaplab import __version__, kernels
from plaplab.config import KINDS, ConfigError, ExperimentConfig, load_config, parse_config
from plaplab.dnmap import BoundaryDictionary, bump_dictionary, dn_table, write_table_csv
from plaplab.errors import ConvergenceFailure, InvalidArgument, PreconditionViolation
from plaplab.forward import DirichletProblem, p_energy, solve_dirichlet
from plaplab.geometry import Mesh, gradient, interpolate, write_field, write_mesh
from plaplab.monotonicity import (
    detect_difference_region,
    dictionary_triples,
    jaccard,
    uniqueness_experiment,
)
from plaplab.perturbation import (
    calibrate_eps,
    gradient_stability_study,
    perturbation_size,
    smooth_perturbation,
)
from plaplab.seeding import stream
from plaplab.ucp2d import (
    beltrami_coefficients,
    beltrami_residual,
    complex_gradient,
    dual_stream_function,
    near_zero_count,
    plateau_scan,
)

__all__ = ["RunManifest", "run", "main"]

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    kind: str
    seed: int
    backend: str
    wall_time: float = 0.0
    steps: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def outputs(self) -> list:
        files = {f for step in self.steps for f in step["outputs"]}
        return sorted(files | {MANIFEST})

    @property
    def passed(self) -> bool:
        return all(v == "pass" for v in self.verdicts.values())

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "kind": self.kind,
            "seed": self.seed,
            "backend": self.backend,
            "wall_time_s": self.wall_time,
            "steps": self.steps,
            "outputs": self.outputs,
            "verdicts": self.verdicts,
            "failures": self.failures,
            "status": "pass" if self.passed else "fail",
            "summary": self.summary,
        }


class _Writer:
    """Single writer for one run's output directory."""

    def __init__(self, out: Path, manifest: RunManifest):
        self.out = out
        self.manifest = manifest

    def step(self, name: str):
        self.manifest.steps.append({"name": name, "outputs": []})

    def _register(self, name):
        self.manifest.steps[-1]["outputs"].append(name)
        return self.out / name

    def json(self, name, obj):
        self._register(name).write_text(_dumps(obj))

    def csv(self, name, header, rows):
        with open(self._register(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])

    def field(self, name, values, kind="scalar", location="cell"):
        write_field(self._register(name), values, kind, location)

    def mesh(self, name, mesh):
        write_mesh(mesh, self._register(name))

    def table(self, name, table):
        write_table_csv(self._register(name), table)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _verdict(ok) -> str:
    return "pass" if bool(ok) else "fail"


def _prepare_output(out: Path) -> None:
    """Create ``out``; remove files a previous manifest there lists; refuse other content."""
    out.mkdir(parents=True, exist_ok=True)
    old = out / MANIFEST
    if old.exists():
        try:
            listed = json.loads(old.read_text()).get("outputs", [])
        except (json.JSONDecodeError, AttributeError):
            listed = []
        for name in listed:
            target = out / name
            if target.parent == out and target.is_file():
                target.unlink()
    leftover = sorted(p.name for p in out.iterdir())
    if leftover:
        raise InvalidArgument(f"output directory {out} is not empty (found {leftover[0]!r})")


def _solver_kw(cfg: ExperimentConfig) -> dict:
    tol = cfg.tolerances["solver"]
    return {} if tol is None else {"tol": tol}


def _dictionary(cfg: ExperimentConfig, mesh: Mesh) -> BoundaryDictionary:
    spec = cfg.dictionary
    entries = [(label, e.at_vertices(mesh)) for label, e in spec["entries"]]
    if spec["bumps"]:
        entries += list(bump_dictionary(mesh, spec["bumps"], spec["width"]))
    return BoundaryDictionary(tuple(entries))


def _sigma(cfg, mesh, name="sigma"):
    s = cfg.coefficients[name].cells(mesh)
    if s.shape != (mesh.n_cells,):
        raise InvalidArgument(f"{name} has {s.shape[0]} values, mesh has {mesh.n_cells} cells")
    if not np.all(s > 0):
        bad = int(np.flatnonzero(~(s > 0))[0])
        raise PreconditionViolation(f"{name} is not positive at cell {bad}", cell=bad)
    return s


# --- experiments ------------------------------------------------------------


def _run_solve(cfg, mesh, w: _Writer, m: RunManifest):
    sigma, A = _sigma(cfg, mesh), cfg.matrix(mesh)
    f = cfg.f.at_vertices(mesh)
    w.step("solve")
    w.mesh("mesh.txt", mesh)
    try:
        sol = solve_dirichlet(DirichletProblem(mesh, sigma, A, cfg.p, f), **_solver_kw(cfg))
    except ConvergenceFailure as exc:
        m.failures["solve"] = str(exc)
        m.verdicts["converged"] = "fail"
        if exc.best_iterate is not None:
            w.field("solution.field", exc.best_iterate, location="vertex")
        return
    w.field("solution.field", sol.u, location="vertex")
    summary = {
        "energy": sol.energy,
        "residual_norm": sol.residual_norm,
        "tolerance": sol.tolerance,
        "iterations": sol.iterations,
        "regularization_eps": sol.regularization_eps,
        "min_gradient": float(np.min(np.linalg.norm(gradient(mesh, sol.u), axis=1))),
    }
    w.json("solution.json", summary)
    m.summary.update(summary)
    m.verdicts["converged"] = _verdict(sol.residual_norm <= sol.tolerance)
    if "expect_energy" in cfg.options:
        target = cfg.options["expect_energy"]
        tol = cfg.tolerances["invariant"] * (1.0 + abs(target))
        m.verdicts["expected_energy"] = _verdict(abs(sol.energy - target) <= tol)


def _run_dn(cfg, mesh, w, m):
    sigma, A = _sigma(cfg, mesh), cfg.matrix(mesh)
    d = _dictionary(cfg, mesh)
    table = dn_table(mesh, sigma, A, cfg.p, d, threads=cfg.threads, **_solver_kw(cfg))
    m.failures.update(table.failures)
    w.step("dn")
    w.table("dn_table.csv", table)
    energies = [s.energy if s is not None else float("nan") for s in table.solutions]
    diag = table.diagonal
    ok = [i for i, s in enumerate(table.solutions) if s is not None]
    rel = [abs(diag[i] - energies[i]) / max(abs(energies[i]), 1e-300) for i in ok]
    w.json("dn_summary.json", {"labels": table.labels, "diagonal": diag, "energies": energies})
    m.summary["max_energy_identity_error"] = max(rel) if rel else None
    m.verdicts["energy_identity"] = _verdict(all(r <= 1e-8 for r in rel))
    m.verdicts["diagonal_nonnegative"] = _verdict(all(diag[i] >= -cfg.tolerances["invariant"] for i in ok))


def _run_mono(cfg, mesh, w, m):
    s1, s2 = _sigma(cfg, mesh, "sigma1"), _sigma(cfg, mesh, "sigma2")
    A = cfg.matrix(mesh)
    d = _dictionary(cfg, mesh)
    d.validate(mesh)
    kw = _solver_kw(cfg)
    if cfg.options.get("assert_ordering", True):
        # raises before any solve when the ordering fails
        try:
            report = uniqueness_experiment(
                mesh, s1, s2, A, cfg.p, d, gap_tol=cfg.options.get("gap_tol", 1e-9), threads=cfg.threads, **kw
            )
        except PreconditionViolation as exc:
            m.verdicts["ordering"] = "fail"
            m.failures["ordering"] = str(exc)
            return
        m.verdicts["ordering"] = "pass"
        triples, failures = report.triples, report.failures
        m.summary.update(
            max_middle=report.max_middle,
            certified_lower=report.certified_lower,
            certified_by=report.certified_by,
            gap_verdict=report.verdict,
        )
        if report.region_cells.size:
            m.verdicts["gap_positive"] = _verdict(report.gap_positive)
    else:
        triples, failures, _ = dictionary_triples(mesh, s1, s2, A, cfg.p, d, threads=cfg.threads, **kw)
    m.failures.update(failures)
    w.step("mono")
    w.csv("triples.csv", ["f_id", "lower", "middle", "upper"], [(t.f_id, t.lower, t.middle, t.upper) for t in triples])
    tol = cfg.tolerances["invariant"]
    m.verdicts["sandwich"] = _verdict(all(t.sandwich_holds(tol * (1 + abs(t.upper))) for t in triples))


def _run_detect(cfg, mesh, w, m):
    s1, s2 = _sigma(cfg, mesh, "sigma1"), _sigma(cfg, mesh, "sigma2")
    A = cfg.matrix(mesh)
    d = _dictionary(cfg, mesh)
    kw = _solver_kw(cfg)
    oracle = dn_table(mesh, s1, A, cfg.p, d, threads=cfg.threads, **kw)
    m.failures.update({f"oracle:{k}": v for k, v in oracle.failures.items()})
    est = detect_difference_region(
        mesh, oracle, s2, A, cfg.p, d,
        quantile=cfg.options.get("quantile", 0.9),
        gap_tol=cfg.options.get("gap_tol", 1e-8),
        method=cfg.options.get("method", "monotonicity"),
        threads=cfg.threads, **kw,
    )
    truth = s1 > s2
    w.step("detect")
    w.table("oracle_table.csv", oracle)
    w.field("scores.field", est.cell_scores)
    w.field("region.field", est.detected.astype(float))
    w.field("truth.field", truth.astype(float))
    jac = jaccard(est.detected, truth)
    summary = {
        "jaccard": jac,
        "detected_cells": int(est.detected.sum()),
        "true_cells": int(truth.sum()),
        "threshold": est.threshold,
        "gaps": dict(zip(d.labels, est.gaps)),
    }
    w.json("detect_summary.json", summary)
    m.summary.update({k: summary[k] for k in ("jaccard", "detected_cells", "true_cells")})
    if not truth.any():
        m.verdicts["control_empty"] = _verdict(not est.detected.any())
    elif cfg.options.get("min_jaccard", 0.5) is not None:
        m.verdicts["jaccard"] = _verdict(jac >= cfg.options.get("min_jaccard", 0.5))


def _direction(cfg, mesh):
    spec = cfg.options.get("direction")
    if spec is None:
        return smooth_perturbation(mesh, stream(cfg.seed, "perturb.direction"))
    ds, dA = spec
    ds = None if ds is None else ds.cells(mesh)
    if dA is not None:
        a11, a12, a21, a22 = (e.cells(mesh) for e in dA)
        dA = np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], axis=1)
    return ds, dA


def _calibration(cfg, mesh, w, m, ladder, tests):
    cal = calibrate_eps(mesh, cfg.p, ladder=ladder, tests=tests, rng=stream(cfg.seed, "calibrate-eps"), **_solver_kw(cfg))
    rows = [(e, float(mins.min()), int(h)) for e, mins, h in zip(cal.ladder, cal.min_gradients, cal.holds)]
    w.csv("calibration.csv", ["eps", "min_gradient", "holds"], rows)
    m.summary["eps_largest"] = cal.eps_largest
    m.summary["eps_breakdown"] = cal.eps_breakdown
    small = cal.ladder <= 0.01
    if small.any():
        m.verdicts["nonvanishing_gradient_small_eps"] = _verdict(np.all(cal.holds[small]))
    return cal


def _run_perturb(cfg, mesh, w, m):
    sigma0, A0 = _sigma(cfg, mesh), cfg.matrix(mesh)
    f = cfg.f.at_vertices(mesh)
    ladder = cfg.options.get("eps_ladder", (1e-1, 3e-2, 1e-2, 3e-3, 1e-3))
    study = gradient_stability_study(mesh, sigma0, A0, cfg.p, f, _direction(cfg, mesh), ladder, **_solver_kw(cfg))
    w.step("perturb")
    w.csv(
        "stability.csv",
        ["eps", "lp_ratio", "sup_norm"],
        zip(study.eps_ladder, study.lp_ratios, study.sup_norms),
    )
    summary = {
        "fitted_exponent_lp": study.fitted_exponent_lp,
        "fitted_exponent_sup": study.fitted_exponent_sup,
        "stability_exponent": study.stability_exponent,
        "c_fit": study.c_fit,
        "gradient_norm_ratios": study.gradient_norm_ratios,
    }
    m.verdicts["exponent"] = _verdict(study.fitted_exponent_lp >= study.stability_exponent - 0.1)
    m.verdicts["c_fit_bounded"] = _verdict(study.c_fit < 1e3)
    small = study.eps_ladder <= 0.1
    m.verdicts["gradient_norm_ratio"] = _verdict(np.all(study.gradient_norm_ratios[small] <= 2.0))
    if cfg.p >= 2.0:
        m.verdicts["i_dominates"] = _verdict(np.all(study.i_dominates))
    if cfg.options.get("calibrate", True):
        _calibration(
            cfg, mesh, w, m,
            cfg.options.get("calibration_ladder", (0.01, 0.05, 0.1, 0.2, 0.4, 0.8, 1.2, 1.6)),
            cfg.options.get("calibration_tests", 4),
        )
        summary["eps_largest"] = m.summary["eps_largest"]
        summary["eps_breakdown"] = m.summary["eps_breakdown"]
    w.json("perturb_summary.json", summary)
    m.summary.update({k: v for k, v in summary.items() if k != "gradient_norm_ratios"})


def _run_calibrate(cfg, mesh, w, m):
    w.step("calibrate-eps")
    ladder = cfg.options.get("ladder", (0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 1.8))
    cal = _calibration(cfg, mesh, w, m, ladder, cfg.options.get("tests", 4))
    w.json(
        "calibration.json",
        {
            "eps_largest": cal.eps_largest,
            "eps_breakdown": cal.eps_breakdown,
            "ladder": cal.ladder,
            "min_gradients": cal.min_gradients,
        },
    )


def _run_ucp(cfg, mesh, w, m):
    sigma = _sigma(cfg, mesh)
    sv = cfg.coefficients["sigma"].vertices(mesh)
    f = cfg.f.at_vertices(mesh)
    p = cfg.p
    try:
        sol = solve_dirichlet(DirichletProblem(mesh, sigma, None, p, f), **_solver_kw(cfg))
    except ConvergenceFailure as exc:
        m.failures["solve"] = str(exc)
        m.verdicts["converged"] = "fail"
        return
    u = sol.u
    coeffs = beltrami_coefficients(p)
    res = beltrami_residual(mesh, u, sigma, p, sigma_vertex=sv, zero_threshold=cfg.options.get("zero_threshold", 1e-6))
    F = complex_gradient(mesh, u, sigma, 0.5 * (p - 2.0)).F
    dual = dual_stream_function(mesh, u, sigma, p)
    thr = cfg.options.get("plateau_threshold")
    plateau = plateau_scan(mesh, u, thr, cfg.options.get("flag_fraction", 0.05))
    gmax = float(np.max(np.linalg.norm(gradient(mesh, u), axis=1)))
    flux_scale = float(np.max(sigma)) * max(gmax, 1e-300) ** (p - 1.0)
    w.step("ucp")
    w.field("F.field", np.column_stack([F.real, F.imag]), kind="vector")
    w.field("dual_stream.field", dual.v, location="vertex")
    report = {
        "p": p,
        "q1_mag": coeffs.q1_mag,
        "q2_mag": coeffs.q2_mag,
        "normalized_residual": res.normalized,
        "residual_cells": int(res.cells.size),
        "H_bound_holds": res.H_bound_holds,
        "dual_residual": dual.dual_residual,
        "flux_error": dual.flux_error,
        "near_zero_cells": near_zero_count(mesh, u, sigma, p),
        "plateau": {
            "count": plateau.count,
            "area_fraction": plateau.area_fraction,
            "largest_fraction": plateau.largest_fraction,
            "threshold": plateau.threshold,
        },
    }
    w.json("ucp_report.json", report)
    m.summary.update({k: report[k] for k in ("normalized_residual", "flux_error", "dual_residual")})
    m.verdicts["coefficient_bound"] = _verdict(coeffs.total < 1.0)
    m.verdicts["H_bound"] = _verdict(res.H_bound_holds)
    m.verdicts["dual_round_trip"] = _verdict(dual.flux_error <= cfg.tolerances["invariant"] * (1.0 + flux_scale))
    m.verdicts["no_plateau"] = _verdict(not plateau.red_flag)


_RUNNERS = {
    "solve": _run_solve,
    "dn": _run_dn,
    "mono": _run_mono,
    "detect": _run_detect,
    "perturb": _run_perturb,
    "ucp": _run_ucp,
    "calibrate-eps": _run_calibrate,
}


def run(config: ExperimentConfig, out=None) -> RunManifest:
    """Execute ``config``, write its outputs and the manifest, and return the manifest.

    Outputs go to ``out``, else ``config.output``, else ``./plaplab-<kind>``.
    """
    t0 = time.perf_counter()
    out = Path(out or config.output or f"plaplab-{config.kind}")
    manifest = RunManifest(config.config_hash, __version__, config.kind, config.seed, kernels.BACKEND)
    mesh = config.build_mesh()
    _prepare_output(out)
    writer = _Writer(out, manifest)
    writer.step("config")
    writer.json("config.json", config.raw)
    _RUNNERS[config.kind](config, mesh, writer, manifest)
    manifest.wall_time = time.perf_counter() - t0
    (out / MANIFEST).write_text(_dumps(manifest.to_json()))
    return manifest


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plaplab", description="Weighted p-Laplacian experiments.")
    ap.add_argument("--version", action="version", version=f"plaplab {__version__}")
    sub = ap.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment")
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, help="worker threads for independent solves")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, kind=args.kind) if args.config else parse_config({}, kind=args.kind)
        if args.seed is not None or args.threads is not None:
            raw = dict(cfg.raw)
            if args.seed is not None:
                raw["seed"] = args.seed
            if args.threads is not None:
                raw["threads"] = args.threads
            cfg = parse_config(raw, kind=args.kind, base_dir=cfg.base_dir)
        manifest = run(cfg, args.out)
    except (ConfigError, InvalidArgument, PreconditionViolation) as exc:
        print(f"plaplab: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"plaplab: I/O error: {exc}", file=sys.stderr)
        return 3
    for name, v in manifest.verdicts.items():
        print(f"{v.upper():4s} {name}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
