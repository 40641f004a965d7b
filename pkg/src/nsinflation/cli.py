"""Command-line experiment runner.

Subcommands ``inflation``, ``checks``, ``lemmas`` and ``perturb`` run one
experiment from a JSON configuration and write CSV tables, SVG plots and a
summary into the output directory.  Exit codes: 0 ok, 1 a check failed or a
solve diverged outside a requested delta sweep, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .besov import BesovIndex, ChLIndex, NormRow, besov_from_blocks, format_exponent, write_norm_csv
from .checks import CheckResult, run_identity_checks, write_check_csv
from .config import ConfigError, ExperimentConfig, config_from_mapping, load_config
from .construction import ForceParams
from .lab import (
    measure_bilinear_duhamel_variants,
    measure_duhamel_product,
    measure_max_regularity,
    measure_perturbation_ensemble,
    measure_weak_product,
    write_constant_csv,
)
from .report import (
    NormReport,
    Trace,
    atomic_write_text,
    emit_plot,
    rows_from_quantities,
    summary_text,
    write_report_csv,
)
from .solver import InflationCase, run_inflation_case
from .spectral import GridSpec

__all__ = ["ExperimentResult", "run_experiment", "build_parser", "main", "SUBCOMMANDS"]

log = logging.getLogger("nsinflation")

SUBCOMMANDS = {
    "inflation": "inflation",
    "checks": "identity-checks",
    "lemmas": "lemma-constants",
    "perturb": "perturbation",
}


@dataclass
class ExperimentResult:
    """Report, written files and exit code of one run."""

    report: NormReport
    exit_code: int
    artifacts: list[Path] = field(default_factory=list)
    summary: str = ""
    checks: list[CheckResult] = field(default_factory=list)


def _experiment_id(cfg: ExperimentConfig, delta: float | None = None) -> str:
    d = cfg.delta if delta is None else delta
    return f"{cfg.experiment}-p{format_exponent(cfg.p)}-delta{d:g}"


def _flag(case: InflationCase) -> str:
    parts = []
    if case.state.diverged:
        parts.append("diverged")
    if case.reduced:
        parts.append("reduced")
    return ";".join(parts)


def _inflation_cases(cfg: ExperimentConfig, delta: float, threads: int) -> list[InflationCase]:
    gp, tp = cfg.grid_policy.build(), cfg.time_grid.build()

    def task(N: int) -> InflationCase:
        params = ForceParams(cfg.p, delta, N, cfg.M)
        grid, reduced = gp.grid_for(N, cfg.M)
        log.info("delta=%g N=%d grid n=%d L=%g%s", delta, N, grid.points_per_dim, grid.box_half_length,
                 " (reduced)" if reduced else "")
        return run_inflation_case(params, grid, tp.grid_for(N, params.T), cfg.tol, cfg.max_iter, reduced)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(task, cfg.N_list))


def _decomposition_rows(eid: str, case: InflationCase) -> list[NormRow]:
    rows = []
    for name, (idx, value) in case.decomposition().items():
        rid = f"{eid}/N={case.N}/{name}"
        if isinstance(idx, ChLIndex):
            b = idx.besov
            rows.append(NormRow(rid, "chemin-lerner", b.p, b.q, b.s, idx.r, idx.t_start, idx.t_end, value))
        else:
            rows.append(NormRow(rid, "besov", idx.p, idx.q, idx.s, None, None, None, value))
    return rows


def _time_trace(case: InflationCase) -> Trace:
    st = case.state
    idx = BesovIndex(st.p, 1, 2.0 / st.p - 1.0)
    keep = st.times > 0
    values = [besov_from_blocks(row, idx, st.partition) for row in st.series["final"][keep]]
    return Trace("norm_vs_t", f"u N={case.N}", tuple(float(t) for t in st.times[keep]), tuple(values))


def _run_inflation(cfg: ExperimentConfig, out: Path, threads: int, timings: dict) -> ExperimentResult:
    eid = _experiment_id(cfg)
    cases = _inflation_cases(cfg, cfg.delta, threads)
    rows, decomp, traces = [], [], []
    for case in cases:
        rt = case.runtime_seconds if cfg.record_runtime else None
        rows += rows_from_quantities(eid, case.N, case.quantities(), rt, _flag(case))
        decomp += _decomposition_rows(eid, case)
        traces.append(_time_trace(case))
        timings[f"{eid}/N={case.N}"] = case.runtime_seconds
    diverged = any(c.state.diverged for c in cases)

    if cfg.delta_sweep:
        N0 = min(cfg.N_list)
        sweep_vals: dict[str, list[float]] = {"u2_terminal": [], "u211_terminal": [], "w_linfty": []}
        deltas = sorted(cfg.delta_sweep)
        for d in deltas:
            sweep_cfg = cfg.model_copy(update={"N_list": (N0,)})
            (case,) = _inflation_cases(sweep_cfg, d, 1)
            sid = _experiment_id(cfg, d) + "-sweep"
            rt = case.runtime_seconds if cfg.record_runtime else None
            rows += rows_from_quantities(sid, case.N, case.quantities(), rt, _flag(case))
            timings[f"{sid}/N={case.N}"] = case.runtime_seconds
            q = case.quantities()
            for name in sweep_vals:
                sweep_vals[name].append(q[name][1])
        for name, ys in sweep_vals.items():
            traces.append(Trace("delta_scaling", f"{name} N={N0}", tuple(deltas), tuple(ys)))

    report = NormReport(tuple(rows), tuple(traces))
    main_report = NormReport(tuple(r for r in rows if r.experiment_id == eid))
    artifacts = [
        atomic_write_text(out / "report.csv", write_report_csv(report)),
        atomic_write_text(out / "decomposition.csv", write_norm_csv(decomp)),
    ]
    for kind in ("norm_vs_N", "norm_vs_t", "delta_scaling"):
        if kind == "delta_scaling" and not cfg.delta_sweep:
            continue
        source = main_report if kind == "norm_vs_N" else report
        artifacts.append(atomic_write_text(out / f"{kind}.svg", emit_plot(source, kind)))
    summary = summary_text(main_report)
    if diverged:
        summary += "solver diverged for N = " + " ".join(str(c.N) for c in cases if c.state.diverged) + "\n"
    return ExperimentResult(report, 1 if diverged else 0, artifacts, summary)


def _run_checks(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    results = run_identity_checks(cfg.p, cfg.delta, min(cfg.N_list), cfg.M, pairs=cfg.samples, seed=cfg.seed)
    text = "identity checks\n" + "".join(f"  {r.line()}\n" for r in results)
    ok = all(r.passed for r in results)
    text += f"  verdict: {'all passed' if ok else 'failures present'}\n"
    artifacts = [atomic_write_text(out / "checks.csv", write_check_csv(results))]
    return ExperimentResult(NormReport(), 0 if ok else 1, artifacts, text, results)


def _run_lemmas(cfg: ExperimentConfig, out: Path, threads: int) -> ExperimentResult:
    p, q, n, seed = cfg.p, cfg.q, cfg.samples, cfg.seed
    jobs = [
        lambda: [measure_max_regularity(p, q, math.inf, 2.0 / p - 1.0, n, seed)],
        lambda: [measure_max_regularity(p, q, 2, 2.0 / p - 1.0, n, seed)],
        lambda: [measure_weak_product(p, n, seed)],
        lambda: [measure_duhamel_product(p, q, math.inf, 4, 4, n, seed)],
    ]
    for N in cfg.N_list:
        jobs.append(lambda N=N: list(measure_bilinear_duhamel_variants(p, N, samples=n, seed=seed).values()))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = [r for batch in pool.map(lambda f: f(), jobs) for r in batch]
    lines = ["empirical constants"]
    for r in reports:
        params = ";".join(f"{k}={v}" for k, v in r.parameters)
        lines.append(f"  {r.lemma_id} [{params}] samples={r.samples} max_ratio={r.max_ratio:.6g}")
    artifacts = [atomic_write_text(out / "constants.csv", write_constant_csv(reports))]
    return ExperimentResult(NormReport(), 0, artifacts, "\n".join(lines) + "\n")


PERTURBATION_COLUMNS = ("sample", "U_norm", "sup_u_norm", "ratio", "initial_error", "converged", "diverged")


def _run_perturbation(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    gp = cfg.grid_policy
    grid = GridSpec(gp.L, gp.points) if gp.points is not None and gp.L is not None else None
    ens = measure_perturbation_ensemble(max(1, cfg.samples), cfg.seed, cfg.delta, cfg.p, cfg.q, grid,
                                        tol=cfg.tol, max_iter=cfg.max_iter)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PERTURBATION_COLUMNS)
    for k in range(ens.U_norms.size):
        w.writerow([k, repr(float(ens.U_norms[k])), repr(float(ens.sup_norms[k])), repr(float(ens.ratios[k])),
                    repr(float(ens.initial_errors[k])), int(ens.converged[k]), int(ens.diverged[k])])
    ok = bool(np.all(ens.initial_errors == 0.0) and not ens.diverged.any())
    text = (
        "perturbation ensemble\n"
        f"  samples: {ens.U_norms.size}, amplitude {ens.amplitude:g}\n"
        f"  empirical constant sup_t |u| / |U|: {ens.constant:.6g} (spread {ens.spread:.3g})\n"
        f"  max |v(0) + U|: {float(ens.initial_errors.max()):.3g}\n"
        f"  diverged solves: {int(ens.diverged.sum())}\n"
    )
    artifacts = [atomic_write_text(out / "perturbation.csv", buf.getvalue())]
    return ExperimentResult(NormReport(), 0 if ok else 1, artifacts, text)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, out_dir: str | Path | None = None) -> ExperimentResult:
    """Run ``cfg`` and write its artifacts.

    Always written: ``summary.txt`` and ``timings.json`` (wall-clock seconds,
    kept out of the CSV so that reports are byte-identical across runs).
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    if cfg.experiment == "inflation":
        result = _run_inflation(cfg, out, threads, timings)
    elif cfg.experiment == "identity-checks":
        result = _run_checks(cfg, out)
    elif cfg.experiment == "lemma-constants":
        result = _run_lemmas(cfg, out, threads)
    else:
        result = _run_perturbation(cfg, out)
    result.artifacts.append(atomic_write_text(out / "summary.txt", result.summary))
    result.artifacts.append(atomic_write_text(out / "timings.json", json.dumps(timings, indent=2, sort_keys=True) + "\n"))
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsinflation", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, tag in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {tag} experiment")
        sp.add_argument("--config", type=Path, help="JSON configuration file (defaults otherwise)")
        sp.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="random seed (overrides seed)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for independent tasks")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config) if args.config else config_from_mapping({})
        update: dict = {"experiment": SUBCOMMANDS[args.command]}
        if args.seed is not None:
            update["seed"] = args.seed
        if args.out is not None:
            update["output_dir"] = str(args.out)
        cfg = config_from_mapping({**cfg.model_dump(mode="json"), **update}, environ={})
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    result = run_experiment(cfg, args.threads)
    sys.stdout.write(result.summary)
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
