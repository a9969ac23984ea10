"""Experiment grids: cells x seeds, run in parallel, aggregated into CSV tables.

Output directory layout::

    runs.csv      one row per (cell, seed)
    traces.csv    NNRMSE and discriminator-objective traces per run
    summary.csv   median NNRMSE per cell
    timings.csv   wall-clock and CPU seconds per run (the only non-deterministic file)
    cells/<n>.svg scatter of the median run of each cell (when svg is on)
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import scatter_svg
from .losses import (
    CROSS_ENTROPY,
    LEAST_SQUARES,
    ConfigError,
    DistanceKind,
    DObjective,
    Family,
    GLossSpec,
    Target,
    check_pairing,
    wgan_gp,
)
from .trainer import RunResult, TrainConfig, train

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["d_objective", "family", "distance", "target", "median_nnrmse", "n_seeds", "n_diverged"]
CELL_COLUMNS = SUMMARY_COLUMNS[:4]


@dataclass(frozen=True)
class Cell:
    d_objective: DObjective
    g_loss: GLossSpec

    @classmethod
    def from_dict(cls, raw: dict) -> "Cell":
        raw = dict(raw)
        unknown = set(raw) - {"d_objective", "g_loss"}
        if unknown:
            raise ConfigError(f"unknown cell keys: {sorted(unknown)}")
        if "g_loss" not in raw:
            raise ConfigError("cell needs a g_loss")
        return cls(DObjective.from_dict(raw.get("d_objective", "CrossEntropy")), GLossSpec.from_dict(raw["g_loss"]))

    def to_dict(self) -> dict:
        return {"d_objective": self.d_objective.to_dict(), "g_loss": self.g_loss.to_dict()}

    def key(self) -> list[str]:
        g = self.g_loss
        return [
            self.d_objective.label(),
            g.family.value,
            g.distance.value if g.distance else "",
            g.y_hat.value if g.y_hat else "",
        ]

    def skip_reason(self) -> str | None:
        """Why this cell is blank (invalid pairing), or None when it can run."""
        try:
            check_pairing(self.d_objective, self.g_loss)
        except ConfigError as exc:
            return str(exc)
        return None


def table2_cells(block: str) -> list[Cell]:
    """Cells of one block of the swiss-roll results table, blanks included.

    ``block`` is ``gan`` (cross-entropy), ``lsgan`` (least squares) or ``wgan``
    (Wasserstein with one-sided penalty).  Each block has its classic loss
    row(s), then one row per distance with DM, LM(mid), LM(real), EDM,
    ELM(mid), ELM(real) columns.  Invalid pairings stay in the list and are
    reported as skipped.
    """
    if block == "gan":
        d_obj, classic = CROSS_ENTROPY, [Family.NON_SATURATING, Family.SATURATING]
    elif block == "lsgan":
        d_obj, classic = LEAST_SQUARES, [Family.LSGAN]
    elif block == "wgan":
        d_obj, classic = wgan_gp(10.0, "OneSided"), [Family.WGAN]
    else:
        raise ConfigError(f"unknown table block {block!r} (gan, lsgan, wgan)")
    cells = [Cell(d_obj, GLossSpec(fam)) for fam in classic]
    for dist in DistanceKind:
        cells += [
            Cell(d_obj, GLossSpec(Family.DM, dist)),
            Cell(d_obj, GLossSpec(Family.LM, dist, Target.MID)),
            Cell(d_obj, GLossSpec(Family.LM, dist, Target.REAL)),
            Cell(d_obj, GLossSpec(Family.EDM, dist)),
            Cell(d_obj, GLossSpec(Family.ELM, dist, Target.MID)),
            Cell(d_obj, GLossSpec(Family.ELM, dist, Target.REAL)),
        ]
    return cells


@dataclass
class ExperimentGrid:
    cells: list[Cell]
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    base: dict = field(default_factory=dict)
    svg: bool = False

    def __post_init__(self):
        if not self.cells:
            raise ConfigError("grid has no cells")
        if not self.seeds:
            raise ConfigError("grid has no seeds")
        for key in ("d_objective", "g_loss", "seed"):
            if key in self.base:
                raise ConfigError(f"base config cannot set {key!r}; it is chosen per cell and seed")
        # validate the shared settings once, before any run starts
        TrainConfig.from_dict(self.base)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentGrid":
        raw = dict(raw)
        unknown = set(raw) - {"cells", "table2", "seeds", "base", "svg"}
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        cells = [Cell.from_dict(c) for c in raw.get("cells", [])]
        blocks = raw.get("table2", [])
        for block in [blocks] if isinstance(blocks, str) else blocks:
            cells += table2_cells(block)
        seeds = raw.get("seeds", [1, 2, 3, 4, 5])
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("seeds must be integers")
        return cls(cells, list(seeds), dict(raw.get("base", {})), bool(raw.get("svg", False)))

    def config_for(self, cell: Cell, seed: int) -> TrainConfig:
        raw = dict(self.base)
        raw.update(cell.to_dict())
        raw["seed"] = seed
        return TrainConfig.from_dict(raw)


def load_grid(path) -> ExperimentGrid:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"grid file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return ExperimentGrid.from_dict(raw)


@dataclass
class RunRecord:
    cell: Cell
    seed: int
    status: str  # ok | diverged | error
    result: RunResult | None = None
    error: str = ""

    @property
    def final(self) -> float:
        if self.status == "error":
            return math.nan
        return self.result.final_nnrmse


@dataclass
class CellSummary:
    cell: Cell
    median_nnrmse: float | None  # None when skipped or every run errored
    n_seeds: int
    n_diverged: int
    skipped: str | None = None
    n_errors: int = 0
    median_run: RunRecord | None = None


@dataclass
class GridResult:
    grid: ExperimentGrid
    records: list[RunRecord]
    summaries: list[CellSummary]

    def summary_for(self, cell: Cell) -> CellSummary:
        for s in self.summaries:
            if s.cell == cell:
                return s
        raise KeyError(cell)


def worker_count() -> int:
    raw = os.environ.get("GANLAB_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GANLAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_one(cell: Cell, seed: int, config: TrainConfig) -> RunRecord:
    try:
        result = train(config)
    except Exception as exc:  # a crashed run is recorded, the grid goes on
        log.exception("cell %s seed %d failed", cell.key(), seed)
        return RunRecord(cell, seed, "error", None, f"{type(exc).__name__}: {exc}")
    return RunRecord(cell, seed, "diverged" if result.diverged else "ok", result)


def _median(values: list[float]) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def summarize(cell: Cell, records: list[RunRecord]) -> CellSummary:
    usable = [r for r in records if r.status != "error"]
    n_err = len(records) - len(usable)
    if not usable:
        return CellSummary(cell, None, 0, 0, None, n_err)
    finals = [r.final for r in usable]
    med = _median(finals)
    # the run closest to the median (lower one on ties) represents the cell
    order = sorted(range(len(usable)), key=lambda i: (abs(finals[i] - med) if math.isfinite(finals[i]) else math.inf, i))
    return CellSummary(
        cell, med, len(usable), sum(r.status == "diverged" for r in usable), None, n_err, usable[order[0]]
    )


def run_grid(grid: ExperimentGrid, out_dir=None, threads: int | None = None) -> GridResult:
    """Run every valid cell x seed; blanks are reported as skipped.

    Runs are independent (each owns its random stream), so they may execute
    concurrently; results are gathered and written in cell/seed order.
    """
    jobs = []
    for cell in grid.cells:
        if cell.skip_reason() is None:
            jobs += [(cell, seed, grid.config_for(cell, seed)) for seed in grid.seeds]
    n = threads if threads is not None else worker_count()
    if n > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=min(n, len(jobs))) as pool:
            records = list(pool.map(lambda job: _run_one(*job), jobs))
    else:
        records = [_run_one(*job) for job in jobs]

    summaries = []
    for cell in grid.cells:
        reason = cell.skip_reason()
        if reason is not None:
            summaries.append(CellSummary(cell, None, 0, 0, reason))
            continue
        summaries.append(summarize(cell, [r for r in records if r.cell == cell]))
    result = GridResult(grid, records, summaries)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


# -- CSV --------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def runs_csv(result: GridResult) -> str:
    rows = [CELL_COLUMNS + ["seed", "status", "final_nnrmse", "diverged_cycle", "reason"]]
    for r in result.records:
        res = r.result
        rows.append(
            r.cell.key()
            + [
                r.seed,
                r.status,
                r.final,
                res.diverged_cycle if res is not None else None,
                r.error if res is None else res.reason,
            ]
        )
    return _csv(rows)


def summary_csv(result: GridResult) -> str:
    rows = [list(SUMMARY_COLUMNS)]
    for s in result.summaries:
        if s.skipped is not None:
            median = "skipped"
        elif s.median_nnrmse is None:
            median = "error"
        else:
            median = s.median_nnrmse
        rows.append(s.cell.key() + [median, s.n_seeds, s.n_diverged])
    return _csv(rows)


def traces_csv(result: GridResult) -> str:
    rows = [CELL_COLUMNS + ["seed", "cycle", "nnrmse", "d_obj_after_d_step", "d_obj_after_g_step"]]
    for r in result.records:
        if r.result is None:
            continue
        after_d = dict(r.result.d_obj_after_d_step)
        after_g = dict(r.result.d_obj_after_g_step)
        for cycle, value in r.result.nnrmse_trace:
            rows.append(r.cell.key() + [r.seed, cycle, value, after_d.get(cycle), after_g.get(cycle)])
    return _csv(rows)


def timings_csv(result: GridResult) -> str:
    rows = [CELL_COLUMNS + ["seed", "wall_time", "cpu_time"]]
    for r in result.records:
        res = r.result
        rows.append(r.cell.key() + [r.seed, res.wall_time if res else None, res.cpu_time if res else None])
    return _csv(rows)


def write_outputs(result: GridResult, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in (
            ("runs.csv", runs_csv(result)),
            ("traces.csv", traces_csv(result)),
            ("summary.csv", summary_csv(result)),
            ("timings.csv", timings_csv(result)),
        ):
            (out / name).write_text(text, encoding="utf-8")
        if result.grid.svg:
            (out / "cells").mkdir(exist_ok=True)
            for i, s in enumerate(result.summaries):
                run = s.median_run
                if run is None or run.result is None or run.result.final_fake is None:
                    continue
                title = " ".join(v for v in s.cell.key() if v) + f" seed {run.seed}"
                scatter_svg(run.result.final_real, run.result.final_fake, out / "cells" / f"{i:02d}.svg", title=title)
    except OSError as exc:
        raise OSError(f"cannot write grid output to {out}: {exc}") from exc
    return out
