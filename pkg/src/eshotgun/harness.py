"""Experiment orchestration: configured optimisation runs, persisted traces
and derived statistics/convergence artefacts.

Runs operate internally on the unit hypercube with standardised outputs; all
recorded objective quantities are in original units. Initial designs depend
only on (base_seed, repeat_index) so every method sees identical starting
data, which is what makes the paired statistics valid.
"""

import json
import logging
import os
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bounds import Box
from .gp import Dataset, GpHyperparams, GpModel, OutputScaler, fit_gp
from .inneropt import SearchBudget
from .pareto import Nsga2Config
from .problems import ProblemSpec, get_problem, latin_hypercube_maximin
from .stats import MethodSample, build_comparison_table
from .strategies import (
    BatchProposal,
    PenaliserMode,
    SelectionMode,
    ShotgunConfig,
    default_thompson_candidates,
    eshotgun_select,
    kriging_believer_select,
    local_penalisation_select,
    thompson_select,
)

logger = logging.getLogger("eshotgun")

METHODS = ("es-rs", "es-pf", "es-0", "kb", "lp", "playbook", "ts")

_SHOTGUN_MODES = {
    "es-rs": SelectionMode.RANDOM_SPACE,
    "es-pf": SelectionMode.PARETO_FRONT,
    "es-0": SelectionMode.PURE_EXPLOIT,
}

DEDUPE_TOL_REL = 1e-12  # proposal vs dataset collision trigger
DEDUPE_NUDGE_REL = 1e-8  # nudge applied before evaluating a colliding point


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    method: str
    batch_size: int = 10
    budget: int = 200
    repeats: int = 51
    base_seed: int = 0
    epsilon: float = 0.1
    gamma: float = 1.0
    standardise: bool = True
    fit_restarts: int = 10
    inner_budget: int | None = None  # None: 10000 * d
    nsga2_generations: int = 50
    ts_candidates: int | None = None  # None: min(1000 * d, 5000)
    n_initial_designs: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; known: {METHODS}")
        problem = get_problem(self.problem)  # raises KeyError for unknown names
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # budget == 2d runs the initial design only (zero batch rounds).
        if self.budget < 2 * problem.dim:
            raise ValueError("budget must cover the 2d-point initial design")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.inner_budget is not None and self.inner_budget < 100:
            raise ValueError("inner_budget must be >= 100 evaluations")
        if self.ts_candidates is not None and self.ts_candidates < 1:
            raise ValueError("ts_candidates must be >= 1")

    @property
    def run_name(self) -> str:
        return f"{self.problem}_{self.method}_q{self.batch_size}"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationRecord:
    batch: np.ndarray  # original units
    values: np.ndarray
    lengthscale: float
    signal_variance: float
    jitter: float
    anchor: np.ndarray | None = None  # original units; shotgun methods only
    radius: float | None = None  # unit-cube input units
    fallback: bool = False


@dataclass
class RunRecord:
    config: dict
    repeat_index: int
    initial_inputs: np.ndarray = field(default=None)
    initial_values: np.ndarray = field(default=None)
    iterations: list = field(default_factory=list)
    best_seen: np.ndarray = field(default=None)
    failed: bool = False
    error: str | None = None

    @property
    def final_best(self) -> float:
        return float(self.best_seen[-1])

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "repeat_index": self.repeat_index,
            "initial_inputs": _listify(self.initial_inputs),
            "initial_values": _listify(self.initial_values),
            "iterations": [
                {
                    "batch": _listify(it.batch),
                    "values": _listify(it.values),
                    "lengthscale": it.lengthscale,
                    "signal_variance": it.signal_variance,
                    "jitter": it.jitter,
                    "anchor": _listify(it.anchor),
                    "radius": it.radius,
                    "fallback": it.fallback,
                }
                for it in self.iterations
            ],
            "best_seen": _listify(self.best_seen),
            "failed": self.failed,
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunRecord":
        record = cls(config=doc["config"], repeat_index=doc["repeat_index"])
        record.initial_inputs = _arrify(doc.get("initial_inputs"))
        record.initial_values = _arrify(doc.get("initial_values"))
        record.best_seen = _arrify(doc.get("best_seen"))
        record.failed = doc.get("failed", False)
        record.error = doc.get("error")
        record.iterations = [
            IterationRecord(
                batch=_arrify(it["batch"]),
                values=_arrify(it["values"]),
                lengthscale=it["lengthscale"],
                signal_variance=it["signal_variance"],
                jitter=it["jitter"],
                anchor=_arrify(it.get("anchor")),
                radius=it.get("radius"),
                fallback=it.get("fallback", False),
            )
            for it in doc.get("iterations", [])
        ]
        return record


def _listify(arr):
    if arr is None:
        return None
    return np.asarray(arr).tolist()


def _arrify(obj):
    if obj is None:
        return None
    return np.asarray(obj, dtype=float)


def _design_rng(config: ExperimentConfig, repeat_index: int) -> np.random.Generator:
    # Depends on (base_seed, repeat_index) only: designs are method-invariant.
    return np.random.default_rng(
        np.random.SeedSequence([config.base_seed, repeat_index, 0])
    )


def _method_rng(config: ExperimentConfig, repeat_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([config.base_seed, repeat_index, 1])
    )


def _dedupe_against(
    existing: np.ndarray, proposal: np.ndarray, box: Box, rng: np.random.Generator
) -> np.ndarray:
    """Nudge proposed rows that collide with existing inputs or each other.

    Keeps the model dataset pairwise distinct; the nudge is far below any
    benchmark's feature scale so the objective value is unaffected in
    practice.
    """
    tol = DEDUPE_TOL_REL * box.diagonal
    nudge = DEDUPE_NUDGE_REL * box.diagonal
    out = proposal.copy()
    taken = existing
    for i in range(out.shape[0]):
        tries = 0
        while (
            np.min(np.linalg.norm(taken - out[i], axis=1)) <= tol and tries < 100
        ):
            out[i] = box.clip(out[i] + nudge * rng.standard_normal(box.dim))
            tries += 1
        taken = np.vstack([taken, out[i]])
    return out


def _propose(
    config: ExperimentConfig,
    model: GpModel,
    q: int,
    box: Box,
    rng: np.random.Generator,
) -> BatchProposal:
    d = box.dim
    inner = config.inner_budget if config.inner_budget is not None else 10_000 * d

    def budget() -> SearchBudget:
        return SearchBudget(
            max_evaluations=inner,
            restarts=10,
            rng_seed=int(rng.integers(2**31)),
        )

    if config.method in _SHOTGUN_MODES:
        shotgun = ShotgunConfig(
            batch_size=q,
            epsilon=config.epsilon,
            gamma=config.gamma,
            selection_mode=_SHOTGUN_MODES[config.method],
        )
        nsga2_cfg = Nsga2Config(
            population=100 * d,
            generations=config.nsga2_generations,
            rng_seed=int(rng.integers(2**31)),
        )
        return eshotgun_select(
            model, shotgun, box, rng, budget=budget(), nsga2_config=nsga2_cfg
        )
    if config.method == "kb":
        return kriging_believer_select(model, q, model.incumbent, box, budget())
    if config.method == "lp":
        return local_penalisation_select(model, q, PenaliserMode.SOFT, box, rng)
    if config.method == "playbook":
        return local_penalisation_select(model, q, PenaliserMode.HARD, box, rng)
    if config.method == "ts":
        n_candidates = (
            config.ts_candidates
            if config.ts_candidates is not None
            else default_thompson_candidates(d)
        )
        return thompson_select(model, q, max(n_candidates, q), box, rng)
    raise ValueError(f"unknown method {config.method!r}")


def run_single(config: ExperimentConfig, repeat_index: int) -> RunRecord:
    """One optimisation repeat: LHS init, then batch proposals until budget."""
    problem = get_problem(config.problem)
    d = problem.dim
    unit_box = Box.unit(d)
    record = RunRecord(config=config.to_dict(), repeat_index=repeat_index)

    design = latin_hypercube_maximin(
        2 * d, d, _design_rng(config, repeat_index), config.n_initial_designs
    )
    X_unit = design.points
    X = problem.bounds.scale_from_unit(X_unit)
    values = np.array([problem.evaluate(x) for x in X])
    record.initial_inputs = X.copy()
    record.initial_values = values.copy()

    rng = _method_rng(config, repeat_index)
    all_unit = X_unit.copy()
    all_values = values.copy()
    warm: GpHyperparams | None = None

    while all_values.size < config.budget:
        q = min(config.batch_size, config.budget - all_values.size)
        scaler = OutputScaler.fit(all_values, config.standardise)
        dataset = Dataset(all_unit, scaler.to_model(all_values))
        model = fit_gp(
            dataset,
            unit_box.diagonal,
            rng,
            restarts=config.fit_restarts,
            warm_start=warm,
        )
        warm = model.hyperparams

        proposal = _propose(config, model, q, unit_box, rng)
        batch_unit = _dedupe_against(all_unit, proposal.locations, unit_box, rng)
        batch = problem.bounds.scale_from_unit(batch_unit)
        batch_values = np.array([problem.evaluate(x) for x in batch])

        is_shotgun = config.method in _SHOTGUN_MODES
        record.iterations.append(
            IterationRecord(
                batch=batch,
                values=batch_values,
                lengthscale=model.hyperparams.lengthscale,
                signal_variance=model.hyperparams.signal_variance,
                jitter=model.hyperparams.jitter,
                anchor=problem.bounds.scale_from_unit(proposal.anchor)
                if is_shotgun
                else None,
                radius=proposal.radius if is_shotgun else None,
                fallback=proposal.fallback,
            )
        )
        all_unit = np.vstack([all_unit, batch_unit])
        all_values = np.append(all_values, batch_values)

    record.best_seen = np.minimum.accumulate(all_values)
    return record


def _run_single_task(config_dict: dict, repeat_index: int) -> dict:
    """Top-level worker for process pools; returns a JSON-ready dict."""
    config = ExperimentConfig(**config_dict)
    try:
        return run_single(config, repeat_index).to_json_dict()
    except Exception as exc:  # recorded, never silently dropped
        failed = RunRecord(
            config=config.to_dict(), repeat_index=repeat_index, failed=True,
            error=f"{type(exc).__name__}: {exc}",
        )
        failed.best_seen = np.array([np.nan])
        return failed.to_json_dict()


def config_identity(config_dict: dict) -> dict:
    """Run identity: every config field except the extendable repeat count."""
    return {k: v for k, v in config_dict.items() if k != "repeats"}


def records_path(out_dir: str | Path, config: ExperimentConfig) -> Path:
    return Path(out_dir) / f"{config.run_name}.jsonl"


def load_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    records = []
    if not path.exists():
        return records
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json_dict(json.loads(line)))
    return records


def load_directory(directory: str | Path) -> list[RunRecord]:
    records = []
    for path in sorted(Path(directory).glob("*.jsonl")):
        records.extend(load_records(path))
    return records


def effective_parallelism(parallelism: int) -> int:
    env = os.environ.get("ESHOTGUN_THREADS")
    if env:
        return max(1, int(env))
    return max(1, parallelism)


def run_experiment(
    config: ExperimentConfig,
    parallelism: int = 1,
    out_dir: str | Path | None = None,
) -> list[RunRecord]:
    """Run all repeats, skipping any already persisted in out_dir.

    Repeats are independent; records are persisted incrementally (append per
    completion through the single writer here) and the returned list is
    ordered by repeat index regardless of completion order.
    """
    parallelism = effective_parallelism(parallelism)
    existing: dict[int, RunRecord] = {}
    path = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = records_path(out_dir, config)
        for record in load_records(path):
            if config_identity(record.config) != config_identity(config.to_dict()):
                raise ValueError(
                    f"{path} holds records for a different configuration; "
                    "refusing to mix"
                )
            existing[record.repeat_index] = record

    pending = [i for i in range(config.repeats) if i not in existing]
    results = dict(existing)

    def persist(doc: dict):
        if path is not None:
            with path.open("a") as fh:
                fh.write(json.dumps(doc) + "\n")
                fh.flush()

    if pending:
        logger.info(
            "%s: running %d repeat(s) (%d already done), parallelism=%d",
            config.run_name, len(pending), len(existing), parallelism,
        )
    if parallelism == 1 or len(pending) <= 1:
        for idx in pending:
            doc = _run_single_task(config.to_dict(), idx)
            persist(doc)
            record = RunRecord.from_json_dict(doc)
            results[idx] = record
            logger.info(
                "%s repeat %d done: best=%s", config.run_name, idx,
                "failed" if record.failed else f"{record.final_best:.6g}",
            )
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {
                pool.submit(_run_single_task, config.to_dict(), idx): idx
                for idx in pending
            }
            outstanding = set(futures)
            while outstanding:
                done, outstanding = wait(outstanding, return_when=FIRST_COMPLETED)
                for future in done:
                    doc = future.result()
                    persist(doc)
                    results[futures[future]] = RunRecord.from_json_dict(doc)

    return [results[i] for i in sorted(results) if i < config.repeats]


def final_gaps(records: list[RunRecord]) -> np.ndarray:
    """|f* - f_min| per completed record, ordered by repeat index."""
    gaps = []
    for record in sorted(records, key=lambda r: r.repeat_index):
        if record.failed:
            continue
        fmin = get_problem(record.config["problem"]).reference_minimum
        gaps.append(max(record.final_best - fmin, 0.0))
    return np.asarray(gaps)


def emit_convergence(records: list[RunRecord]) -> np.ndarray:
    """Rows (t, median, q25, q75) of |f*(t) - f_min| across records."""
    records = [r for r in records if not r.failed]
    if not records:
        raise ValueError("need at least one completed record")
    configs = {json.dumps(config_identity(r.config), sort_keys=True) for r in records}
    if len(configs) > 1:
        raise ValueError("records span multiple configurations")
    fmin = get_problem(records[0].config["problem"]).reference_minimum
    traces = np.vstack([r.best_seen for r in records])
    gaps = np.maximum(traces - fmin, 0.0)
    t = np.arange(1, gaps.shape[1] + 1)
    median = np.median(gaps, axis=0)
    q25 = np.quantile(gaps, 0.25, axis=0)
    q75 = np.quantile(gaps, 0.75, axis=0)
    return np.column_stack([t, median, q25, q75])


def write_convergence_csv(records: list[RunRecord], path: str | Path):
    rows = emit_convergence(records)
    with Path(path).open("w") as fh:
        fh.write("t,median,q25,q75\n")
        for t, med, lo, hi in rows:
            fh.write(f"{int(t)},{med:.10g},{lo:.10g},{hi:.10g}\n")


def comparison_tables(records: list[RunRecord], alpha: float = 0.05) -> dict:
    """Per-problem comparison tables from a mixed pile of run records.

    Methods are paired by repeat index; only repeats completed by every
    method of a problem enter the comparison.
    """
    by_problem: dict[str, dict[str, dict[int, RunRecord]]] = {}
    for record in records:
        if record.failed:
            continue
        problem = record.config["problem"]
        method = record.config["method"]
        by_problem.setdefault(problem, {}).setdefault(method, {})[
            record.repeat_index
        ] = record

    tables = {}
    for problem, methods in sorted(by_problem.items()):
        if len(methods) < 2:
            continue
        common = sorted(set.intersection(*(set(m) for m in methods.values())))
        if not common:
            continue
        fmin = get_problem(problem).reference_minimum
        samples = [
            MethodSample(
                method,
                np.array(
                    [max(runs[i].final_best - fmin, 0.0) for i in common]
                ),
            )
            for method, runs in sorted(methods.items())
        ]
        tables[problem] = build_comparison_table(samples, alpha)
    return tables
