"""Batch front end: one config file in, machine-readable results out.

Usage::

    qsde --config run.json [--seed N] [--out DIR]

The command in the config's run section selects what to compute (verify,
trajectories, master, moments, spectrum, mollow); results are emitted as
CSV tables plus a single JSON document mirroring the whole bundle.  The
exit code is 0 only if every internal physics check passed, so CI can gate
on it.  Identical (config, seed) pairs give byte-identical CSV output
regardless of the worker count (QSDE_WORKERS).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .master import (
    DegenerateStationaryState,
    LindbladPropagator,
    apriori_from_trajectories,
    master_series,
    stationary_state,
    validate_density,
)
from .model import (
    DetectionSpec,
    SystemModel,
    build_coefficients,
    operator_norm_bounds,
    verify_weight_identity,
)
from .mollow import find_spectrum_peaks, rabi_frequency
from .statistics import mc_output_moments, spectrum_scan, wiener_law_tests
from .trajectories import run_linear_ensemble

__all__ = ["ResultBundle", "Table", "Check", "run_command", "emit", "main", "bundles_equal"]


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ResultBundle:
    command: str
    metadata: dict
    tables: dict[str, Table] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "metadata": self.metadata,
            "tables": {name: {"columns": list(t.columns),
                              "rows": [list(r) for r in t.rows]}
                       for name, t in self.tables.items()},
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                       for c in self.checks],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ResultBundle":
        tables = {name: Table(columns=tuple(t["columns"]),
                              rows=tuple(tuple(r) for r in t["rows"]))
                  for name, t in doc["tables"].items()}
        checks = [Check(name=c["name"], passed=c["passed"], detail=c["detail"])
                  for c in doc["checks"]]
        return cls(command=doc["command"], metadata=doc["metadata"],
                   tables=tables, checks=checks)


def bundles_equal(a: ResultBundle, b: ResultBundle, ignore_walltime: bool = True) -> bool:
    """Field-for-field equality, by default ignoring the volatile wall time."""
    da, db = a.to_json_dict(), b.to_json_dict()
    if ignore_walltime:
        da["metadata"] = {k: v for k, v in da["metadata"].items() if k != "walltime_s"}
        db["metadata"] = {k: v for k, v in db["metadata"].items() if k != "walltime_s"}
    return da == db


def _default_checkpoints(cfg: RunConfig) -> np.ndarray:
    if cfg.run.record_times is not None:
        return np.asarray(cfg.run.record_times, dtype=float)
    return cfg.run.horizon * np.arange(11) / 10.0


def _initial_vector(cfg: RunConfig, dim: int) -> np.ndarray:
    if cfg.run.initial_state is not None:
        vec = cfg.run.initial_state.astype(complex)
    else:
        vec = np.zeros(dim, dtype=complex)
        vec[0] = 1.0
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise ConfigError(["run.initial_state: must be a nonzero vector"])
    return vec / nrm


def _run_verify(cfg: RunConfig, bundle: ResultBundle):
    coeffs = build_coefficients(cfg.model)
    times = np.linspace(0.0, cfg.run.horizon, 11)
    report = verify_weight_identity(coeffs, times, tol=cfg.run.identity_tol)
    bundle.tables["residuals"] = Table(
        columns=("t", "residual"),
        rows=tuple((float(t), float(r)) for t, r in zip(report.times, report.residuals)))
    bundle.checks.append(Check(
        name="weight-identity", passed=report.passed,
        detail=f"max residual {report.max_residual:.3e} vs tol {report.tol:.1e}"))
    bounds = operator_norm_bounds(coeffs, cfg.run.horizon)
    bundle.tables["norm_bounds"] = Table(
        columns=("horizon", "sup_rr", "sup_k"),
        rows=((bounds.horizon, bounds.sup_rr, bounds.sup_k),))


def _run_trajectories(cfg: RunConfig, bundle: ResultBundle):
    coeffs = build_coefficients(cfg.model)
    run = cfg.run
    nsteps = max(1, int(round(run.horizon / run.dt)))
    psi0 = _initial_vector(cfg, cfg.model.dim)
    ens = run_linear_ensemble(coeffs, psi0, dt=run.dt, nsteps=nsteps, ntraj=run.ntraj,
                              base_seed=run.seed, record_times=_default_checkpoints(cfg),
                              chunk_size=run.chunk_size)
    mean_w = ens.weight.mean(axis=0)
    se_w = ens.weight.std(axis=0, ddof=1) / np.sqrt(ens.ntraj) if ens.ntraj > 1 else 0 * mean_w
    rows, ok = [], True
    for m, t in enumerate(ens.times):
        dev = abs(mean_w[m] - 1.0)
        passed = dev <= 3.0 * se_w[m] or se_w[m] == 0.0
        ok &= passed
        rows.append((float(t), float(mean_w[m]), float(se_w[m]), int(passed)))
    bundle.tables["weights"] = Table(columns=("t", "mean_weight", "stderr", "passed"),
                                     rows=tuple(rows))
    bundle.checks.append(Check(
        name="martingale", passed=bool(ok),
        detail="mean weight within 3 standard errors of 1 at every checkpoint"))

    out_rows = []
    for m, t in enumerate(ens.times):
        for k in range(ens.w_path.shape[2]):
            contrib = ens.weight[:, m] * ens.w_path[:, m, k]
            se = contrib.std(ddof=1) / np.sqrt(ens.ntraj) if ens.ntraj > 1 else 0.0
            out_rows.append((float(t), k, float(contrib.mean()), float(se)))
    bundle.tables["outputs"] = Table(columns=("t", "channel", "mean", "stderr"),
                                     rows=tuple(out_rows))

    if len(ens.times) >= 3 and ens.ntraj > 1:
        law = wiener_law_tests(ens)
        bundle.tables["wiener_law"] = Table(
            columns=("test", "statistic", "expected", "stderr", "passed"),
            rows=tuple((r.name, float(r.statistic), float(r.expected),
                        float(r.stderr), int(r.passed)) for r in law.rows))
        bundle.checks.append(Check(name="wiener-law", passed=law.passed,
                                   detail=f"{sum(r.passed for r in law.rows)}/{len(law.rows)} "
                                          f"tests at {law.confidence:.0%}"))

    path_rows = []
    for b in range(ens.ntraj):
        path_rows.append((b, float(ens.weight[b, -1]),
                          *(float(ens.w_path[b, -1, k]) for k in range(ens.w_path.shape[2])),
                          int(ens.frozen_at[b])))
    nchan = ens.w_path.shape[2]
    bundle.tables["paths"] = Table(
        columns=("trajectory", "final_weight", *(f"W{k}" for k in range(nchan)), "frozen_at"),
        rows=tuple(path_rows))


def _run_master(cfg: RunConfig, bundle: ResultBundle):
    coeffs = build_coefficients(cfg.model)
    gen = LindbladPropagator(coeffs)
    run = cfg.run
    psi0 = _initial_vector(cfg, cfg.model.dim)
    rho0 = np.outer(psi0, psi0.conj())
    nsteps = max(1, int(round(run.horizon / run.dt)))
    grid = (run.horizon / nsteps) * np.arange(nsteps + 1)
    series = master_series(gen, rho0, grid)
    rows = []
    for t in _default_checkpoints(cfg):
        n = int(round(t / (grid[1] - grid[0])))
        for i in range(gen.dim):
            for j in range(gen.dim):
                rows.append((float(grid[n]), i, j,
                             float(series[n, i, j].real), float(series[n, i, j].imag)))
    bundle.tables["rho"] = Table(columns=("t", "i", "j", "re", "im"), rows=tuple(rows))
    try:
        validate_density(series[-1])
        bundle.checks.append(Check(name="final-state-valid", passed=True,
                                   detail="Hermitian, unit trace, positive"))
    except ValueError as exc:
        bundle.checks.append(Check(name="final-state-valid", passed=False, detail=str(exc)))
    if gen.time_independent:
        st = stationary_state(gen)
        if st.degenerate:
            bundle.tables["stationary"] = Table(columns=("nullity",), rows=((st.nullity,),))
        else:
            srows = tuple((i, j, float(st.rho[i, j].real), float(st.rho[i, j].imag))
                          for i in range(gen.dim) for j in range(gen.dim))
            bundle.tables["stationary"] = Table(columns=("i", "j", "re", "im"), rows=srows)
            bundle.checks.append(Check(name="stationary-residual",
                                       passed=st.residual <= 1e-10,
                                       detail=f"residual {st.residual:.3e}"))


def _run_moments(cfg: RunConfig, bundle: ResultBundle):
    coeffs = build_coefficients(cfg.model)
    gen = LindbladPropagator(coeffs)
    run = cfg.run
    psi0 = _initial_vector(cfg, cfg.model.dim)
    rho0 = np.outer(psi0, psi0.conj())
    checkpoints = set(_default_checkpoints(cfg).tolist())
    for (_, _, t1, t2) in run.pairs:
        checkpoints.update((t1, t2))
    record = np.array(sorted(checkpoints))
    nsteps = max(1, int(round(run.horizon / run.dt)))
    ens = run_linear_ensemble(coeffs, psi0, dt=run.dt, nsteps=nsteps, ntraj=run.ntraj,
                              base_seed=run.seed, record_times=record,
                              chunk_size=run.chunk_size)
    report = mc_output_moments(ens, coeffs, gen, rho0, run.dt, pairs=run.pairs)
    slack = run.bias_coeff * run.dt
    rows, ok, worst = [], True, 0.0
    for m, t in enumerate(report.times):
        for k in range(report.mc_mean.shape[1]):
            dev = abs(report.analytic_mean[m, k] - report.mc_mean[m, k])
            bound = 3.0 * report.mc_mean_stderr[m, k] + slack
            ok &= dev <= bound
            worst = max(worst, dev - bound)
            rows.append((float(t), k, float(report.analytic_mean[m, k]),
                         float(report.mc_mean[m, k]), float(report.mc_mean_stderr[m, k])))
    bundle.tables["mean"] = Table(
        columns=("t", "channel", "analytic", "mc", "stderr"), rows=tuple(rows))
    bundle.checks.append(Check(name="first-moment", passed=bool(ok),
                               detail=f"3 sigma + {slack:.2e} slack, "
                                      f"worst excess {max(worst, 0.0):.2e}"))
    if report.second:
        srows, sok = [], True
        for r in report.second:
            sok &= abs(r.analytic - r.mc) <= 3.0 * r.stderr + slack
            srows.append((r.i, r.j, r.t1, r.t2, r.analytic, r.mc, r.stderr))
        bundle.tables["second"] = Table(
            columns=("i", "j", "t1", "t2", "analytic", "mc", "stderr"),
            rows=tuple(srows))
        bundle.checks.append(Check(name="second-moment", passed=bool(sok),
                                   detail=f"3 sigma + {slack:.2e} slack"))


def _spectrum_factory(cfg: RunConfig):
    base = cfg.model
    if base.detection.kind != "diagonal-phase":
        raise ConfigError(["run.command: spectrum scans require diagonal-phase detection"])

    def factory(nu: float) -> SystemModel:
        return SystemModel(hamiltonian=base.hamiltonian, channels=base.channels,
                           drive=base.drive,
                           detection=DetectionSpec(kind="diagonal-phase", nu=nu),
                           frame=base.frame)

    return factory


def _run_spectrum(cfg: RunConfig, bundle: ResultBundle, rel_prominence: float = 0.08):
    run = cfg.run
    rho0 = None
    if run.initial_state is not None:
        psi0 = _initial_vector(cfg, cfg.model.dim)
        rho0 = np.outer(psi0, psi0.conj())
    scan = spectrum_scan(_spectrum_factory(cfg), run.nu_grid, horizon=run.horizon,
                         dt=run.dt, rho0=rho0)
    bundle.tables["spectrum"] = Table(
        columns=("nu", "s"),
        rows=tuple((float(n), float(s)) for n, s in zip(scan.nu, scan.values)))
    peaks = find_spectrum_peaks(scan.nu, scan.values, rel_prominence=rel_prominence)
    bundle.tables["peaks"] = Table(columns=("nu",), rows=tuple((float(p),) for p in peaks))
    bundle.checks.append(Check(
        name="spectrum-nonnegative", passed=bool(np.min(scan.values) >= -1e-6),
        detail=f"min S = {np.min(scan.values):.3e}"))
    return scan, peaks


def _run_mollow(cfg: RunConfig, bundle: ResultBundle):
    scan, peaks = _run_spectrum(cfg, bundle)
    mcfg = cfg.mollow
    omega = rabi_frequency(mcfg)
    gamma = mcfg.gamma
    bundle.metadata["rabi_frequency"] = omega
    strong = omega > 0.5 * gamma
    expected_peaks = 3 if strong else 1
    bundle.checks.append(Check(
        name="peak-count", passed=len(peaks) == expected_peaks,
        detail=f"found {len(peaks)}, expected {expected_peaks}"))
    if strong and len(peaks) == 3:
        spacing = scan.nu[1] - scan.nu[0]
        lo, hi = mcfg.omega0 - omega, mcfg.omega0 + omega
        ok = (abs(peaks[0] - lo) <= 2 * spacing + 1e-12
              and abs(peaks[-1] - hi) <= 2 * spacing + 1e-12)
        bundle.checks.append(Check(
            name="sideband-locations", passed=bool(ok),
            detail=f"peaks {peaks[0]:.3f}/{peaks[-1]:.3f} vs {lo:.3f}/{hi:.3f}"))
    resonant = mcfg.omega == mcfg.omega0
    grid_sym = np.allclose(scan.nu + scan.nu[::-1], 2 * mcfg.omega0, atol=1e-9)
    if resonant and grid_sym:
        asym = float(np.max(np.abs(scan.values - scan.values[::-1])))
        bundle.checks.append(Check(
            name="spectrum-symmetry", passed=asym <= 1e-3 * float(np.max(scan.values)),
            detail=f"max asymmetry {asym:.3e}"))


_DISPATCH = {
    "verify": _run_verify,
    "trajectories": _run_trajectories,
    "master": _run_master,
    "moments": _run_moments,
    "spectrum": _run_spectrum,
    "mollow": _run_mollow,
}


def run_command(cfg: RunConfig) -> ResultBundle:
    """Execute the configured command and collect tables plus check results."""
    start = time.time()
    bundle = ResultBundle(command=cfg.run.command,
                          metadata={"config": cfg.echo, "seed": cfg.run.seed,
                                    "version": __version__})
    try:
        _DISPATCH[cfg.run.command](cfg, bundle)
    except DegenerateStationaryState as exc:
        bundle.checks.append(Check(name="stationary-unique", passed=False, detail=str(exc)))
    bundle.metadata["walltime_s"] = time.time() - start
    return bundle


def _format_value(v, precision: int) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.{precision}g}"
    return str(v)


def emit(bundle: ResultBundle, directory: str | Path, formats=("csv", "json"),
         precision: int = 17) -> list[Path]:
    """Write the bundle as CSV tables and/or one JSON document.

    CSV bytes are a pure function of the payload (metadata such as wall
    time goes only into the JSON document).
    """
    outdir = Path(directory)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    seed = bundle.metadata.get("seed", 0)
    if "csv" in formats:
        for name, table in bundle.tables.items():
            path = outdir / f"{bundle.command}_{name}_{seed}.csv"
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(table.columns)
            for row in table.rows:
                writer.writerow([_format_value(v, precision) for v in row])
            path.write_text(buf.getvalue(), encoding="utf-8")
            written.append(path)
    if "json" in formats:
        path = outdir / f"{bundle.command}_{seed}.json"
        path.write_text(json.dumps(bundle.to_json_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        written.append(path)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qsde", description=__doc__)
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default=None, help="override output.directory")
    args = parser.parse_args(argv)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text)
        if args.seed is not None:
            from dataclasses import replace
            echo = json.loads(json.dumps(cfg.echo))
            echo.setdefault("run", {})["seed"] = args.seed
            cfg = RunConfig(model=cfg.model, run=replace(cfg.run, seed=args.seed),
                            output=cfg.output, mollow=cfg.mollow, echo=echo)
        bundle = run_command(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outdir = args.out if args.out is not None else cfg.output.directory
    paths = emit(bundle, outdir, formats=cfg.output.formats, precision=cfg.output.precision)
    for c in bundle.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    for p in paths:
        print(f"wrote {p}")
    return 0 if bundle.passed else 2


if __name__ == "__main__":
    sys.exit(main())
