"""Grid data model, bus admittance matrix and topology helpers.

Buses are indexed densely from 0; the original case numbering survives only
as ``Bus.number``. All power quantities are per-unit on the case base.
Net injections follow the generation-positive convention:
``p_nominal = pg - pd`` and ``q_nominal = qg - qd``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np


class GridError(ValueError):
    """Inconsistent grid data or topology."""


class BusKind(enum.IntEnum):
    # values follow the MATPOWER bus type column
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    pd: float = 0.0
    qd: float = 0.0
    pg: float = 0.0
    qg: float = 0.0
    vm_setpoint: float = 1.0
    va_slack: float = 0.0
    gs: float = 0.0
    bs: float = 0.0
    number: int | None = None

    def __post_init__(self):
        if self.kind in (BusKind.SLACK, BusKind.PV) and not self.vm_setpoint > 0:
            raise GridError(f"bus {self.id}: voltage setpoint must be positive")
        if not np.isfinite(self.va_slack):
            raise GridError(f"bus {self.id}: reference angle must be finite")

    @property
    def p_nominal(self) -> float:
        return self.pg - self.pd

    @property
    def q_nominal(self) -> float:
        return self.qg - self.qd


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise GridError(f"branch {self.id}: self-loop on bus {self.from_bus}")
        if self.r == 0 and self.x == 0:
            raise GridError(f"branch {self.id}: zero series impedance")
        if not self.tap_ratio > 0:
            raise GridError(f"branch {self.id}: tap ratio must be positive")

    @property
    def y_series(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class GridCase:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    total_generation: float

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        n = len(self.buses)
        for i, bus in enumerate(self.buses):
            if bus.id != i:
                raise GridError(f"bus ids must be dense and ordered, got {bus.id} at position {i}")
        n_slack = sum(b.kind == BusKind.SLACK for b in self.buses)
        if n_slack != 1:
            raise GridError(f"expected exactly one slack bus, found {n_slack}")
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise GridError(f"branch {br.id} references a missing bus")
        if not self.total_generation > 0:
            raise GridError("total generation must be positive")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @cached_property
    def slack(self) -> int:
        return next(b.id for b in self.buses if b.kind == BusKind.SLACK)

    @cached_property
    def pv(self) -> np.ndarray:
        return np.array([b.id for b in self.buses if b.kind == BusKind.PV], dtype=int)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([b.id for b in self.buses if b.kind == BusKind.PQ], dtype=int)

    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([br.from_bus for br in self.branches], dtype=int)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([br.to_bus for br in self.branches], dtype=int)

    def column(self, name: str) -> np.ndarray:
        """Per-bus attribute as a float array, e.g. ``case.column("pd")``."""
        return np.array([getattr(b, name) for b in self.buses], dtype=float)

    def full_topology(self) -> Topology:
        return Topology.all_in_service(self.n_branch)

    def with_injections(self, *, pg=None, pd=None, qd=None, vm=None) -> GridCase:
        """Copy of the case with some per-bus schedules replaced.

        Arrays are per bus; ``vm`` only affects slack and PV setpoints.
        ``total_generation`` is carried over unchanged.
        """
        buses = []
        for i, b in enumerate(self.buses):
            changes = {}
            if pg is not None:
                changes["pg"] = float(pg[i])
            if pd is not None:
                changes["pd"] = float(pd[i])
            if qd is not None:
                changes["qd"] = float(qd[i])
            if vm is not None and b.kind != BusKind.PQ:
                changes["vm_setpoint"] = float(vm[i])
            buses.append(replace(b, **changes) if changes else b)
        return replace(self, buses=tuple(buses))


@dataclass(frozen=True)
class Topology:
    """Per-branch in-service flags."""

    in_service: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "in_service", tuple(bool(v) for v in self.in_service))

    @classmethod
    def all_in_service(cls, n_branch: int) -> Topology:
        return cls((True,) * n_branch)

    def __len__(self) -> int:
        return len(self.in_service)

    def as_array(self) -> np.ndarray:
        return np.array(self.in_service, dtype=bool)

    @property
    def n_in_service(self) -> int:
        return sum(self.in_service)

    def cut_branches(self) -> list[int]:
        return [i for i, on in enumerate(self.in_service) if not on]


@dataclass(frozen=True)
class AdmittanceMatrix:
    y: np.ndarray
    y_series: np.ndarray = field(repr=False)

    @property
    def g(self) -> np.ndarray:
        return self.y.real

    @property
    def b(self) -> np.ndarray:
        return self.y.imag


def _check_topology(case: GridCase, topo: Topology) -> None:
    if len(topo) != case.n_branch:
        raise GridError(f"topology has {len(topo)} entries, case has {case.n_branch} branches")


def branch_admittances(case: GridCase) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Two-port pi-model admittances (yff, yft, ytf, ytt) for every branch.

    Ignores the service status; callers mask out-of-service branches.
    """
    ys = np.array([br.y_series for br in case.branches], dtype=complex)
    bc = np.array([br.b_charging for br in case.branches], dtype=float)
    tap = np.array([br.tap_ratio for br in case.branches], dtype=float)
    shift = np.array([br.phase_shift for br in case.branches], dtype=float)
    ytt = ys + 1j * bc / 2
    yff = ytt / tap**2
    yft = -ys / (tap * np.exp(-1j * shift))
    ytf = -ys / (tap * np.exp(1j * shift))
    return yff, yft, ytf, ytt


def build_ybus(case: GridCase, topo: Topology) -> AdmittanceMatrix:
    _check_topology(case, topo)
    n = case.n_bus
    on = topo.as_array()
    yff, yft, ytf, ytt = branch_admittances(case)
    f, t = case.from_idx[on], case.to_idx[on]

    y = np.zeros((n, n), dtype=complex)
    np.add.at(y, (f, f), yff[on])
    np.add.at(y, (t, t), ytt[on])
    np.add.at(y, (f, t), yft[on])
    np.add.at(y, (t, f), ytf[on])
    y[np.diag_indices(n)] += case.column("gs") + 1j * case.column("bs")

    ys = np.array([br.y_series for br in case.branches], dtype=complex)
    ys[~on] = 0
    return AdmittanceMatrix(y=y, y_series=ys)


def node_degrees(case: GridCase, topo: Topology) -> list[int]:
    _check_topology(case, topo)
    on = topo.as_array()
    deg = np.bincount(case.from_idx[on], minlength=case.n_bus)
    deg += np.bincount(case.to_idx[on], minlength=case.n_bus)
    return deg.tolist()


def adjacency(case: GridCase, topo: Topology) -> list[list[int]]:
    nbrs: list[list[int]] = [[] for _ in range(case.n_bus)]
    for br, on in zip(case.branches, topo.in_service):
        if on:
            nbrs[br.from_bus].append(br.to_bus)
            nbrs[br.to_bus].append(br.from_bus)
    return nbrs


def is_slack_connected(case: GridCase, topo: Topology) -> bool:
    if len(topo) != case.n_branch:
        return False
    nbrs = adjacency(case, topo)
    seen = {case.slack}
    queue = deque([case.slack])
    while queue:
        for k in nbrs[queue.popleft()]:
            if k not in seen:
                seen.add(k)
                queue.append(k)
    return len(seen) == case.n_bus


def apply_line_cut(topo: Topology, branch_id: int) -> Topology:
    if not 0 <= branch_id < len(topo):
        raise GridError(f"branch id {branch_id} out of range for {len(topo)} branches")
    if not topo.in_service[branch_id]:
        raise GridError(f"branch {branch_id} is already out of service")
    flags = list(topo.in_service)
    flags[branch_id] = False
    return Topology(tuple(flags))


def admissible_cuts(case: GridCase, topo: Topology) -> list[int]:
    """In-service branches whose removal keeps every bus reachable from the slack."""
    return [
        i
        for i, on in enumerate(topo.in_service)
        if on and is_slack_connected(case, apply_line_cut(topo, i))
    ]


def degree_reference_nodes(degrees: Sequence[int]) -> tuple[int, int]:
    """Return ``(max_node, median_node)`` for a degree sequence.

    The median degree is the upper median of the sorted sequence. Ties go to
    the lowest bus index.
    """
    deg = np.asarray(degrees)
    d_med = int(np.sort(deg)[len(deg) // 2])
    return int(np.argmax(deg)), int(np.flatnonzero(deg == d_med)[0])
