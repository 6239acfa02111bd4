"""Scenario sampling: perturbed loads, Dirichlet dispatch and the random line-cutting agent."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .case_io import ScenarioRecord
from .grid import GridCase, Topology, admissible_cuts, apply_line_cut
from .solver import PowerFlowError, SolverOptions, newton_raphson_solve

log = logging.getLogger(__name__)

VM_BOUNDS = (0.9, 1.1)
MAX_ATTEMPTS_PER_INSTANCE = 100


class DatasetGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    """Knobs for dataset generation.

    ``load_sigma`` is the absolute standard deviation (pu) applied to PQ loads
    and PV voltage setpoints. ``dispatch="nominal"`` keeps the case's own
    generator dispatch instead of drawing a Dirichlet split.
    """

    n_instances: int = 1
    cut_probability: float = 0.0
    load_sigma: float = 0.01
    seed: int = 0
    dirichlet_alpha: float = 1.0
    dispatch: str = "dirichlet"

    def __post_init__(self):
        if not 0.0 <= self.cut_probability <= 1.0:
            raise ValueError(f"cut probability must lie in [0, 1], got {self.cut_probability}")
        if self.load_sigma < 0:
            raise ValueError("load_sigma must be non-negative")
        if self.n_instances < 1:
            raise ValueError("n_instances must be at least 1")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.dispatch not in ("dirichlet", "nominal"):
            raise ValueError(f"unknown dispatch mode {self.dispatch!r}")


class LoadProfile(NamedTuple):
    """Per-bus arrays; only PQ loads and PV setpoints differ from nominal."""

    pd: np.ndarray
    qd: np.ndarray
    vm: np.ndarray


class AgentCut(NamedTuple):
    topology: Topology
    cut_branch: int | None
    no_admissible_cut: bool = False


@dataclass
class GenerationStats:
    produced: int = 0
    discarded: int = 0
    no_admissible_cut: int = 0

    @property
    def attempts(self) -> int:
        return self.produced + self.discarded

    @property
    def discard_rate(self) -> float:
        return self.discarded / self.attempts if self.attempts else 0.0


def child_seed(seed: int, *key: int) -> int:
    """Derive a 64-bit seed from a master seed and an integer key path."""
    ss = np.random.SeedSequence(entropy=seed & (2**64 - 1), spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _normal_positive(rng: np.random.Generator, mean: np.ndarray, sigma: float) -> np.ndarray:
    out = rng.normal(mean, sigma) if sigma > 0 else mean.copy()
    if sigma > 0:
        redo = (mean > 0) & (out <= 0)
        while redo.any():
            out[redo] = rng.normal(mean[redo], sigma)
            redo = (mean > 0) & (out <= 0)
    return out


def sample_load_profile(case: GridCase, rng: np.random.Generator, sigma: float = 0.01) -> LoadProfile:
    """Draw PQ loads around nominal and PV voltage setpoints around their setpoint.

    Loads with a positive nominal value are redrawn until positive; voltage
    setpoints are clamped to ``VM_BOUNDS``.
    """
    pd, qd, vm = case.column("pd"), case.column("qd"), case.column("vm_setpoint")
    pq, pv = case.pq, case.pv
    pd[pq] = _normal_positive(rng, pd[pq], sigma)
    qd[pq] = _normal_positive(rng, qd[pq], sigma)
    if sigma > 0:
        vm[pv] = np.clip(rng.normal(vm[pv], sigma), *VM_BOUNDS)
    return LoadProfile(pd=pd, qd=qd, vm=vm)


def sample_generation_dispatch(case: GridCase, rng: np.random.Generator, alpha: float = 1.0) -> np.ndarray:
    """Split the case's total generation over the non-slack generator buses.

    Returns a per-bus array: the Dirichlet share times ``total_generation`` on
    PV buses, zero elsewhere (the slack output is decided by the power flow).
    """
    pv = case.pv
    if len(pv) == 0:
        raise ValueError("case has no non-slack generators to dispatch")
    pg = np.zeros(case.n_bus)
    if len(pv) == 1:
        pg[pv] = case.total_generation
        return pg
    w = rng.dirichlet(np.full(len(pv), alpha))
    pg[pv] = w * case.total_generation
    return pg


def random_agent_cut(
    case: GridCase,
    topo: Topology,
    p: float,
    rng: np.random.Generator,
    admissible: list[int] | None = None,
) -> AgentCut:
    """With probability ``p`` cut one branch chosen uniformly among non-islanding cuts."""
    if rng.random() >= p:
        return AgentCut(topo, None)
    if admissible is None:
        admissible = admissible_cuts(case, topo)
    if not admissible:
        log.warning("no single cut keeps %s connected; topology left unchanged", case.name)
        return AgentCut(topo, None, True)
    k = admissible[int(rng.integers(len(admissible)))]
    return AgentCut(apply_line_cut(topo, k), k)


def nominal_dispatch(case: GridCase) -> np.ndarray:
    pg = case.column("pg")
    pg[case.slack] = 0.0
    return pg


def _sample_instance(
    case: GridCase,
    cfg: SamplingConfig,
    opts: SolverOptions,
    admissible: list[int],
    instance_id: int,
) -> tuple[ScenarioRecord, int, bool]:
    full = case.full_topology()
    for attempt in range(MAX_ATTEMPTS_PER_INSTANCE):
        rng = np.random.default_rng(child_seed(cfg.seed, instance_id, attempt))
        loads = sample_load_profile(case, rng, cfg.load_sigma)
        if cfg.dispatch == "dirichlet":
            pg = sample_generation_dispatch(case, rng, cfg.dirichlet_alpha)
        else:
            pg = nominal_dispatch(case)
        cut = random_agent_cut(case, full, cfg.cut_probability, rng, admissible)
        inst = case.with_injections(pg=pg, pd=loads.pd, qd=loads.qd, vm=loads.vm)
        try:
            sol = newton_raphson_solve(inst, cut.topology, opts)
        except PowerFlowError:
            continue
        vm_in = np.where(np.isin(np.arange(case.n_bus), case.pq), 0.0, inst.column("vm_setpoint"))
        rec = ScenarioRecord(
            instance_id=instance_id,
            topology=cut.topology,
            cut_branch=cut.cut_branch,
            bus_p=sol.p,
            bus_q=sol.q,
            bus_vm=sol.state.vm,
            bus_va=sol.state.va,
            inj_current=sol.inj_current,
            br_i_or=sol.br_i_or,
            br_i_ex=sol.br_i_ex,
            input_pg=pg,
            input_vm=vm_in,
            input_pl=loads.pd,
            input_ql=loads.qd,
        )
        return rec, attempt, cut.no_admissible_cut
    raise DatasetGenerationError(
        f"instance {instance_id}: no feasible sample in {MAX_ATTEMPTS_PER_INSTANCE} attempts"
    )


def _sample_chunk(args) -> list[tuple[ScenarioRecord, int, bool]]:
    case, cfg, opts, admissible, ids = args
    return [_sample_instance(case, cfg, opts, admissible, i) for i in ids]


def run_generation(
    case: GridCase,
    cfg: SamplingConfig,
    opts: SolverOptions | None = None,
    jobs: int = 1,
) -> tuple[list[ScenarioRecord], GenerationStats]:
    """Generate ``cfg.n_instances`` labelled records plus discard statistics.

    Every attempt of every instance draws from its own seed derived from
    ``(cfg.seed, instance_id, attempt)``, so the output does not depend on
    ``jobs``.
    """
    opts = opts or SolverOptions()
    admissible = admissible_cuts(case, case.full_topology())
    excluded = case.n_branch - len(admissible)
    if excluded and cfg.cut_probability > 0:
        log.info("%s: %d of %d single cuts island the grid and are excluded", case.name, excluded, case.n_branch)

    ids = list(range(cfg.n_instances))
    if jobs <= 1:
        results = _sample_chunk((case, cfg, opts, admissible, ids))
    else:
        size = -(-len(ids) // (jobs * 4))
        chunks = [ids[i : i + size] for i in range(0, len(ids), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_sample_chunk, [(case, cfg, opts, admissible, c) for c in chunks])
            results = [r for part in parts for r in part]

    stats = GenerationStats()
    records = []
    for rec, discarded, flagged in results:
        records.append(rec)
        stats.produced += 1
        stats.discarded += discarded
        stats.no_admissible_cut += flagged
    if stats.discard_rate > 0.5:
        raise DatasetGenerationError(
            f"discard rate {stats.discard_rate:.1%} exceeds 50%; the sampling config is badly scaled"
        )
    if stats.discarded:
        log.info("%s: discarded %d of %d samples", case.name, stats.discarded, stats.attempts)
    return records, stats


def generate_dataset(case: GridCase, cfg: SamplingConfig, jobs: int = 1) -> list[ScenarioRecord]:
    return run_generation(case, cfg, jobs=jobs)[0]
