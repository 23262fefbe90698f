"""Experiment orchestration: cells, CSV outputs and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import tomli
import tomli_w

from .. import __version__
from ..audit import audit
from ..bcd import BaselineKind, run_baseline
from ..costs import total_latency
from ..network import generate_instance
from ..pafl import FLConfig, make_label_skew_data, train
from .config import ExperimentConfig, SolverConfig, from_dict, resolve_parameter

log = logging.getLogger(__name__)

MANIFEST = "manifest.toml"
MANIFEST_FORMAT = "mhfl.run-manifest/1"

COLUMNS = {
    "convergence": ("replicate", "seed", "scheme", "iteration", "latency_s",
                    "after_routing_s", "after_leaf_s", "after_relay_s", "status"),
    "baselines": ("replicate", "seed", "scheme", "iteration", "latency_s", "final_energy_J",
                  "converged", "max_violation", "status"),
    "sweep": ("replicate", "seed", "parameter", "value", "scheme", "latency_s", "energy_J",
              "iterations", "converged", "max_violation", "status"),
    "eh_table": ("replicate", "seed", "node_count", "scheme", "latency_eh_on_s",
                 "latency_eh_off_s", "gap_s", "max_violation", "status"),
    "fl_metrics": ("round", "algorithm", "accuracy", "loss", "seed"),
}


def cell_seed(base: int, index: int) -> int:
    """Independent, reproducible seed for cell ``index`` of a run seeded with ``base``."""
    return int(np.random.SeedSequence([int(base), int(index)]).generate_state(1)[0])


@dataclass
class SchemeResult:
    scheme: str
    latency: float
    energy: float
    history: list
    block_history: list
    iterations: int
    converged: bool
    max_violation: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def solve_scheme(inst, scheme, solver: SolverConfig | None = None) -> SchemeResult:
    """Run one scheme on one instance and audit the returned decision."""
    solver = solver or SolverConfig()
    kw = {} if scheme == BaselineKind.GREEDY.value else dict(
        tol=solver.tol, max_iter=solver.max_iter, sca_steps=solver.sca_steps)
    state = run_baseline(scheme, inst, **kw)
    rep = audit(inst, state.vars, latency=state.latency, tol=solver.audit_tol)
    return SchemeResult(BaselineKind(scheme).value, state.latency,
                        total_latency(inst, state.vars).total_energy, list(state.history),
                        list(state.block_history), state.iteration, state.converged,
                        rep.max_violation, rep.violations)


def _audit_status(res: SchemeResult) -> str:
    if res.ok:
        return "ok"
    name, k, node, amount = res.violations[0]
    return f"infeasible: {name} round {k} node {node} by {amount:.3g}"


# cells -------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    table: str
    index: int
    replicate: int
    seed: int
    scheme: str = ""
    parameter: str = ""
    value: object = None
    label: str = ""          # output file stem for sweep tables


@dataclass
class CellResult:
    cell: Cell
    rows: list
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def _convergence(cfg, cell):
    inst = generate_instance(cell.seed, cfg.instance_config())
    res = solve_scheme(inst, cell.scheme, cfg.solver)
    status = _audit_status(res)
    rows = [dict(iteration=0, latency_s=res.history[0], after_routing_s=math.nan,
                 after_leaf_s=math.nan, after_relay_s=math.nan)]
    for i, (lat, blocks) in enumerate(zip(res.history[1:], res.block_history), start=1):
        rows.append(dict(iteration=i, latency_s=lat,
                         after_routing_s=blocks.get("routing", math.nan),
                         after_leaf_s=blocks.get("leaf", math.nan),
                         after_relay_s=blocks.get("relay", math.nan)))
    for r in rows:
        r.update(replicate=cell.replicate, seed=cell.seed, scheme=cell.scheme, status=status)
    return rows, "" if res.ok else status


def _baseline(cfg, cell):
    inst = generate_instance(cell.seed, cfg.instance_config())
    res = solve_scheme(inst, cell.scheme, cfg.solver)
    status = _audit_status(res)
    rows = [dict(replicate=cell.replicate, seed=cell.seed, scheme=cell.scheme, iteration=i,
                 latency_s=lat, final_energy_J=res.energy, converged=res.converged,
                 max_violation=res.max_violation, status=status)
            for i, lat in enumerate(res.history)]
    return rows, "" if res.ok else status


def _sweep(cfg, cell):
    name = resolve_parameter(cell.parameter)
    inst = generate_instance(cell.seed, cfg.instance_config(**{name: cell.value}))
    res = solve_scheme(inst, cell.scheme, cfg.solver)
    status = _audit_status(res)
    return [dict(replicate=cell.replicate, seed=cell.seed, parameter=cell.parameter,
                 value=cell.value, scheme=cell.scheme, latency_s=res.latency,
                 energy_J=res.energy, iterations=res.iterations, converged=res.converged,
                 max_violation=res.max_violation, status=status)], "" if res.ok else status


def _eh_table(cfg, cell):
    lat, worst, bad = {}, 0.0, []
    for on in (True, False):
        inst = generate_instance(cell.seed, cfg.instance_config(n_relays=int(cell.value), eh_enabled=on))
        res = solve_scheme(inst, cell.scheme, cfg.solver)
        lat[on], worst = res.latency, max(worst, res.max_violation)
        if not res.ok:
            bad.append(f"eh {'on' if on else 'off'} " + _audit_status(res))
    status = "; ".join(bad) or "ok"
    return [dict(replicate=cell.replicate, seed=cell.seed, node_count=int(cell.value),
                 scheme=cell.scheme, latency_eh_on_s=lat[True], latency_eh_off_s=lat[False],
                 gap_s=lat[False] - lat[True], max_violation=worst, status=status)], \
        "" if not bad else status


def _fl(cfg, cell):
    fl = cfg.fl
    data = make_label_skew_data(cell.seed, n_clients=fl.n_clients, n_classes=fl.n_classes,
                                dim=fl.dim, dominant=fl.dominant, dominant_frac=fl.dominant_frac,
                                cluster_spread=fl.cluster_spread, noise=fl.noise)
    conf = FLConfig(rounds=fl.rounds, local_steps=fl.local_steps, lr=fl.lr, lam=fl.lam,
                    weight_rule=fl.weight_rule, algorithm=cell.scheme)
    return train(conf, data, seed=cell.seed), ""


_HANDLERS = {"convergence": _convergence, "baselines": _baseline, "sweep": _sweep,
             "eh_table": _eh_table, "fl_metrics": _fl}


def _failure_row(cell):
    base = dict(replicate=cell.replicate, seed=cell.seed, scheme=cell.scheme,
                parameter=cell.parameter, value=cell.value, node_count=cell.value)
    return {c: base.get(c, math.nan) for c in COLUMNS[cell.table]}


def run_cell(cfg: ExperimentConfig, cell: Cell) -> CellResult:
    """Run one cell; exceptions become a failed result rather than aborting the run."""
    try:
        rows, error = _HANDLERS[cell.table](cfg, cell)
    except Exception as exc:     # noqa: BLE001 - every failure is recorded per cell
        log.warning("cell %s[%d] failed: %s", cell.table, cell.index, exc)
        row = _failure_row(cell)
        msg = f"failed: {type(exc).__name__}: {exc}"
        if cell.table == "fl_metrics":
            return CellResult(cell, [], msg)
        row["status"] = msg
        return CellResult(cell, [row], msg)
    return CellResult(cell, rows, error)


def _run_cell_packed(args):
    cfg_dict, cell = args
    return run_cell(from_dict(cfg_dict), cell)


def plan(cfg: ExperimentConfig) -> list:
    """Every cell of the experiment, in output order."""
    seeds = cfg.replicate_seeds()
    cells = []

    def add(**kw):
        cells.append(Cell(index=len(cells), **kw))

    if cfg.kind == "convergence":
        for r, s in enumerate(seeds):
            add(table="convergence", replicate=r, seed=s, scheme="proposed", label="convergence")
    elif cfg.kind == "baseline-compare":
        for r, s in enumerate(seeds):
            for scheme in cfg.baseline.schemes:
                add(table="baselines", replicate=r, seed=s, scheme=scheme, label="baselines")
    elif cfg.kind == "sweep":
        for sw in cfg.sweep:
            for r, s in enumerate(seeds):
                for value in sw.grid:
                    for scheme in sw.schemes:
                        add(table="sweep", replicate=r, seed=s, scheme=scheme,
                            parameter=sw.parameter, value=value, label=f"sweep_{sw.parameter}")
    elif cfg.kind == "eh-table":
        for r, s in enumerate(seeds):
            for n in cfg.eh_table.node_counts:
                add(table="eh_table", replicate=r, seed=s, scheme=cfg.eh_table.scheme,
                    value=int(n), label="eh_table")
    elif cfg.kind == "fl-training":
        for r, s in enumerate(seeds):
            for algo in cfg.fl.algorithms:
                add(table="fl_metrics", replicate=r, seed=s, scheme=algo, label="fl_metrics")
    return cells


# output ------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def csv_text(table: str, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = COLUMNS[table]
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunResult:
    out: Path
    exit_status: int
    outputs: dict = field(default_factory=dict)       # file name -> sha256
    failures: list = field(default_factory=list)      # (file, cell index, message)
    results: list = field(default_factory=list)


def run(cfg: ExperimentConfig, out=None, jobs: int = 1) -> RunResult:
    """Run every cell, write one CSV per table and a manifest; exit 0 iff all cells succeed."""
    cfg.validate()
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = plan(cfg)
    log.info("running %d %s cells with %d job(s)", len(cells), cfg.kind, jobs)
    if jobs > 1 and len(cells) > 1:
        packed = [(cfg.to_dict(), c) for c in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_packed, packed))
    else:
        results = [run_cell(cfg, c) for c in cells]

    # single writer: rows are gathered in plan order before any file is touched
    by_label = {}
    for res in results:
        by_label.setdefault((res.cell.label, res.cell.table), []).extend(res.rows)
    outputs = {}
    for (label, table), rows in by_label.items():
        name = f"{label}.csv"
        (out / name).write_text(csv_text(table, rows))
        outputs[name] = sha256_file(out / name)
    failures = [(f"{r.cell.label}.csv", r.cell.index, r.error) for r in results if not r.ok]
    status = 0 if not failures else 1
    write_manifest(out / MANIFEST, cfg, outputs, failures, status)
    return RunResult(out, status, outputs, failures, results)


def write_manifest(path, cfg, outputs, failures, status):
    doc = {
        "manifest": {
            "format": MANIFEST_FORMAT,
            "package_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "config_sha256": cfg.digest(),
            "kind": cfg.kind,
            "seeds": cfg.replicate_seeds(),
            "exit_status": status,
        },
        "outputs": dict(sorted(outputs.items())),
        "failures": [{"file": f, "cell": i, "message": m} for f, i, m in failures],
        "config": cfg.to_dict(),
    }
    Path(path).write_text(tomli_w.dumps(doc))


def read_manifest(path) -> dict:
    doc = tomli.loads(Path(path).read_text())
    if doc.get("manifest", {}).get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path} is not a run manifest")
    return doc


@dataclass
class ReplayResult:
    run: RunResult
    mismatched: list      # files whose hash differs or that are missing

    @property
    def identical(self) -> bool:
        return not self.mismatched


def replay(manifest_path, out=None, jobs: int = 1) -> ReplayResult:
    """Rerun the manifest's embedded config and compare output hashes."""
    doc = read_manifest(manifest_path)
    cfg = from_dict(doc["config"])
    if cfg.digest() != doc["manifest"]["config_sha256"]:
        raise ValueError("embedded config does not match its recorded hash")
    out = Path(out) if out is not None else Path(manifest_path).parent / "replay"
    res = run(cfg, out=out, jobs=jobs)
    expected = doc["outputs"]
    mismatched = sorted(name for name in set(expected) | set(res.outputs)
                        if expected.get(name) != res.outputs.get(name))
    return ReplayResult(res, mismatched)
