"""Monte Carlo comparison of passive and active structure learning.

Each (rho, n) cell runs ``trials`` independent trials of both algorithms at the
same scalar budget ``n * p``. Trial ``t`` of cell ``c`` draws from the random
stream ``(seed, c, t, algorithm)``, so results do not depend on how trials are
spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import IO, Iterable, Iterator, Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .active_lathe import IsingOracle, active_lathe
from .errors import ConfigError, InsufficientDataError
from .estimation import CorrelationAccumulator, scl_mst
from .tree_model import (
    IsingTreeModel,
    TreeTopology,
    _draw_full,
    build_binary_tree,
    build_chain,
    build_hmm,
    build_random_tree,
    make_rng,
)

log = logging.getLogger(__name__)

STRUCTURES = ("chain", "hmm", "binary-tree", "random")
SUMMARY_COLUMNS = (
    "structure", "rho", "n", "algorithm", "trials", "errors",
    "err_rate", "ci_lo", "ci_hi", "mean_ptilde", "mean_alpha",
)
TRACE_COLUMNS = ("structure", "rho", "n", "trial", "alpha_trace", "rho_trace", "ptilde", "error")
PASSIVE, ACTIVE = 0, 1
TREE_STREAM = 0x7EE


def parse_n_grid(text: str) -> tuple[int, ...]:
    """``"50:250:50"`` (inclusive) or ``"60,100,140"``."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (int(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        return tuple(range(start, stop + 1, step))
    return tuple(int(x) for x in text.split(",") if x.strip())


def parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


@dataclass
class ExperimentConfig:
    structure: str = "chain"
    p: int | None = 200
    levels: int | None = None
    rhos: tuple[float, ...] = (0.9,)
    n_grid: tuple[int, ...] = (60, 100, 140, 180)
    trials: int = 2000
    seed: int = 0
    workers: int = 1
    out: str | None = None
    trace_out: str | None = None
    allow_assumption_violation: bool = False

    def problems(self) -> list[str]:
        bad = []
        if self.structure not in STRUCTURES:
            bad.append(f"structure must be one of {', '.join(STRUCTURES)} (got {self.structure!r})")
        elif self.structure == "binary-tree":
            if not self.levels or self.levels < 2:
                bad.append("levels must be >= 2 for a binary tree")
        elif self.p is None or self.p < (4 if self.structure == "hmm" else 2):
            bad.append(f"p too small for {self.structure}")
        elif self.structure == "hmm" and self.p % 2:
            bad.append("p must be even for an hmm tree")
        if self.trials < 1:
            bad.append("trials must be >= 1")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            bad.append("n grid must be nonempty with positive entries")
        elif any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            bad.append("n grid must be strictly increasing")
        if not self.rhos or any(not 0.0 < r < 1.0 for r in self.rhos):
            bad.append("rho values must lie in (0, 1)")
        if self.workers < 1:
            bad.append("workers must be >= 1")
        if not bad and not self.allow_assumption_violation:
            truth = self.truth()
            if not truth.satisfies_size_assumption():
                bad.append(
                    f"p={truth.p} < 82 * max degree {truth.max_degree}; "
                    "pass allow_assumption_violation to run anyway"
                )
        return bad

    def validate(self) -> "ExperimentConfig":
        bad = self.problems()
        if bad:
            raise ConfigError(bad)
        return self

    def truth(self) -> TreeTopology:
        if self.structure == "chain":
            return build_chain(self.p)
        if self.structure == "hmm":
            return build_hmm(self.p)
        if self.structure == "binary-tree":
            return build_binary_tree(self.levels)
        return build_random_tree(self.p, make_rng(self.seed, TREE_STREAM))

    @property
    def label(self) -> str:
        if self.structure == "binary-tree":
            return f"binary-tree-{2 ** self.levels - 1}"
        return f"{self.structure}-{self.p}"


_CONFIG_KEYS = {
    "structure": str,
    "p": int,
    "levels": int,
    "rho": parse_floats,
    "n": parse_n_grid,
    "trials": int,
    "seed": int,
    "workers": int,
    "out": str,
    "trace_out": str,
    "allow_assumption_violation": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}
_CONFIG_FIELD = {"rho": "rhos", "n": "n_grid"}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values, bad = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad.append(f"line {lineno}: expected 'key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            bad.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            values[_CONFIG_FIELD.get(key, key)] = _CONFIG_KEYS[key](val)
        except ValueError as exc:
            bad.append(f"line {lineno}: bad value for {key}: {exc}")
    if bad:
        raise ConfigError(bad)
    return values


def load_config(path: str | None = None, **overrides) -> ExperimentConfig:
    values = {}
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc.strerror or exc}"]) from exc
        values = parse_config_text(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in values.items() if k in known})


@dataclass
class TrialOutcome:
    passive_error: bool
    active_error: bool
    alpha: float
    p_tilde: int
    alpha_trace: tuple[float, ...] = ()
    rho_trace: tuple[float, ...] = ()
    spent: int = 0


def passive_trial(model: IsingTreeModel, n: int, rng: np.random.Generator) -> bool:
    acc = CorrelationAccumulator(model.p)
    x = _draw_full(model, n, rng).astype(np.float64)
    acc.sums += np.rint(x.T @ x).astype(np.int64)
    acc.counts += n
    return scl_mst(acc).edge_set != model.topology.edge_set


def run_trial(model: IsingTreeModel, n: int, seed: int, cell: int, trial: int) -> TrialOutcome:
    passive_err = passive_trial(model, n, make_rng(seed, cell, trial, PASSIVE))
    res = active_lathe(IsingOracle(model, make_rng(seed, cell, trial, ACTIVE)), n)
    return TrialOutcome(
        passive_error=passive_err,
        active_error=res.tree.edge_set != model.topology.edge_set,
        alpha=res.alpha,
        p_tilde=res.p_tilde,
        alpha_trace=tuple(a for a, _ in res.trace),
        rho_trace=tuple(r for _, r in res.trace),
        spent=res.ledger.spent,
    )


def _run_chunk(args) -> list[TrialOutcome]:
    p, edges, rho, n, seed, cell, start, stop = args
    model = IsingTreeModel(TreeTopology(p, edges), rho)
    out = []
    for t in range(start, stop):
        o = run_trial(model, n, seed, cell, t)
        if o.spent > n * p:
            raise AssertionError(f"trial {t} of cell {cell} overspent its budget")
        out.append(o)
    return out


@dataclass
class SummaryRow:
    structure: str
    rho: float
    n: int
    algorithm: str
    trials: int
    errors: int
    err_rate: float
    ci_lo: float
    ci_hi: float
    mean_ptilde: float | None = None
    mean_alpha: float | None = None

    @classmethod
    def from_counts(cls, structure, rho, n, algorithm, trials, errors, mean_ptilde=None, mean_alpha=None):
        lo, hi = wilson_interval(errors, trials)
        return cls(structure, rho, n, algorithm, trials, errors, errors / trials, lo, hi, mean_ptilde, mean_alpha)

    def as_csv(self) -> list[str]:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return repr(x)
            return str(x)

        return [fmt(getattr(self, c)) for c in SUMMARY_COLUMNS]


def wilson_interval(errors: int, trials: int) -> tuple[float, float]:
    lo, hi = proportion_confint(errors, trials, alpha=0.05, method="wilson")
    # rounding can push a bound a few ulps past the point estimate
    rate = errors / trials
    return min(max(0.0, float(lo)), rate), max(min(1.0, float(hi)), rate)


def _chunks(trials: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, min(100, math.ceil(trials / (4 * workers))))
    return [(s, min(s + size, trials)) for s in range(0, trials, size)]


def iter_cells(config: ExperimentConfig) -> Iterator[tuple[int, float, int]]:
    c = 0
    for rho in config.rhos:
        for n in config.n_grid:
            yield c, rho, n
            c += 1


def run_experiment(
    config: ExperimentConfig,
    out: IO[str] | None = None,
    trace_out: IO[str] | None = None,
) -> list[SummaryRow]:
    """Run every cell and stream two summary rows (passive, active) per cell to ``out``."""
    config.validate()
    truth = config.truth()
    writer = csv.writer(out, lineterminator="\n") if out is not None else None
    if writer:
        writer.writerow(SUMMARY_COLUMNS)
        out.flush()
    twriter = csv.writer(trace_out, lineterminator="\n") if trace_out is not None else None
    if twriter:
        twriter.writerow(TRACE_COLUMNS)
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    rows: list[SummaryRow] = []
    try:
        for cell, rho, n in iter_cells(config):
            jobs = [
                (truth.p, truth.edges, rho, n, config.seed, cell, a, b)
                for a, b in _chunks(config.trials, config.workers)
            ]
            results = pool.map(_run_chunk, jobs) if pool else map(_run_chunk, jobs)
            outcomes = [o for chunk in results for o in chunk]
            passive = SummaryRow.from_counts(
                config.label, rho, n, "passive", config.trials,
                sum(o.passive_error for o in outcomes),
            )
            active = SummaryRow.from_counts(
                config.label, rho, n, "active", config.trials,
                sum(o.active_error for o in outcomes),
                mean_ptilde=math.fsum(o.p_tilde for o in outcomes) / len(outcomes),
                mean_alpha=math.fsum(o.alpha for o in outcomes) / len(outcomes),
            )
            rows += [passive, active]
            log.info("rho=%g n=%d passive=%.4f active=%.4f", rho, n, passive.err_rate, active.err_rate)
            if writer:
                writer.writerow(passive.as_csv())
                writer.writerow(active.as_csv())
                out.flush()
            if twriter:
                for t, o in enumerate(outcomes):
                    twriter.writerow([
                        config.label, rho, n, t,
                        ";".join(format(a, "g") for a in o.alpha_trace),
                        ";".join(format(r, ".6f") for r in o.rho_trace),
                        o.p_tilde, int(o.active_error),
                    ])
                trace_out.flush()
    finally:
        if pool:
            pool.shutdown()
    return rows


def read_summary_csv(source: str | IO[str]) -> list[SummaryRow]:
    fh = open(source) if isinstance(source, str) else source
    try:
        rows = []
        for rec in csv.DictReader(fh):
            def opt(key):
                return float(rec[key]) if rec.get(key) else None

            rows.append(SummaryRow(
                rec["structure"], float(rec["rho"]), int(rec["n"]), rec["algorithm"],
                int(rec["trials"]), int(rec["errors"]), float(rec["err_rate"]),
                float(rec["ci_lo"]), float(rec["ci_hi"]), opt("mean_ptilde"), opt("mean_alpha"),
            ))
        return rows
    finally:
        if isinstance(source, str):
            fh.close()


def rows_to_csv(rows: Iterable[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


@dataclass
class SlopeEstimate:
    algorithm: str
    rho: float
    slope: float
    residual: float
    points: int
    structure: str = ""


def estimate_slope(rows: Sequence[SummaryRow]) -> SlopeEstimate:
    """Least-squares slope of ln(error rate) against n; the negative slope estimates the exponent.

    Cells with zero errors or all errors are skipped.
    """
    use = [r for r in rows if 0 < r.errors < r.trials]
    if len(use) < 3:
        raise InsufficientDataError(f"need >= 3 cells with 0 < errors < trials, got {len(use)}")
    keys = {(r.structure, r.rho, r.algorithm) for r in use}
    if len(keys) != 1:
        raise InsufficientDataError(f"rows mix several series: {sorted(keys)}")
    structure, rho, algorithm = keys.pop()
    n = np.array([r.n for r in use], dtype=float)
    y = np.log([r.err_rate for r in use])
    (slope, intercept), *_ = np.linalg.lstsq(np.vstack([n, np.ones_like(n)]).T, y, rcond=None)
    resid = y - (slope * n + intercept)
    return SlopeEstimate(algorithm, rho, float(slope), float(np.sqrt(np.mean(resid**2))), len(use), structure)


def slopes_by_series(rows: Sequence[SummaryRow]) -> dict[tuple[str, float, str], SlopeEstimate | None]:
    groups: dict[tuple[str, float, str], list[SummaryRow]] = {}
    for r in rows:
        groups.setdefault((r.structure, r.rho, r.algorithm), []).append(r)
    out = {}
    for key, grp in sorted(groups.items()):
        try:
            out[key] = estimate_slope(sorted(grp, key=lambda r: r.n))
        except InsufficientDataError:
            out[key] = None
    return out


def default_workers() -> int:
    return os.cpu_count() or 1
