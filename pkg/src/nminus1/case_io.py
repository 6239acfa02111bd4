"""MATPOWER case ingestion and line-delimited scenario datasets."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .grid import Branch, Bus, BusKind, GridCase, GridError, Topology


class CaseFormatError(ValueError):
    pass


class DatasetError(ValueError):
    pass


BUILTIN_CASES = {"case14": "case14.m", "case118": "case118.m"}

_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([^;\[\n]+);")
_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)

# MATPOWER column positions (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS, VM, VA = 0, 1, 2, 3, 4, 5, 7, 8
GEN_BUS, PG, QG, VG, GEN_STATUS = 0, 1, 2, 5, 7
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10

_MIN_COLS = {"bus": 13, "gen": 8, "branch": 11}


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(name: str, body: str, line0: int) -> np.ndarray:
    rows = []
    lineno = line0
    for chunk in re.split(r"(;|\n)", body):
        if chunk == "\n":
            lineno += 1
            continue
        if chunk == ";" or not chunk.strip():
            continue
        try:
            row = [float(tok) for tok in chunk.split()]
        except ValueError:
            raise CaseFormatError(f"mpc.{name}: malformed row at line {lineno}: {chunk.strip()!r}") from None
        if len(row) < _MIN_COLS[name]:
            raise CaseFormatError(
                f"mpc.{name}: row at line {lineno} has {len(row)} columns, need {_MIN_COLS[name]}"
            )
        if rows and len(row) != len(rows[0]):
            raise CaseFormatError(f"mpc.{name}: ragged row at line {lineno}")
        rows.append(row)
    if not rows:
        raise CaseFormatError(f"mpc.{name} is empty")
    return np.array(rows)


def parse_matpower_case(text: str, name: str = "case") -> GridCase:
    """Build a :class:`GridCase` from MATPOWER version-2 case text.

    Only ``baseMVA``, ``bus``, ``gen`` and ``branch`` are read. Generators on
    one bus are aggregated; the voltage setpoint comes from the first one.
    Out-of-service generators and branches are dropped.
    """
    clean = _strip_comments(text)
    scalars = {m.group(1): m.group(2).strip() for m in _SCALAR.finditer(clean)}
    matrices = {}
    for m in _MATRIX.finditer(clean):
        if m.group(1) in _MIN_COLS:
            line0 = clean.count("\n", 0, m.start(2)) + 1
            matrices[m.group(1)] = _parse_matrix(m.group(1), m.group(2), line0)
    missing = [k for k in ("bus", "gen", "branch") if k not in matrices]
    if "baseMVA" not in scalars:
        missing.insert(0, "baseMVA")
    if missing:
        raise CaseFormatError(f"missing sections: {', '.join('mpc.' + k for k in missing)}")
    try:
        base = float(scalars["baseMVA"])
    except ValueError:
        raise CaseFormatError(f"mpc.baseMVA is not a number: {scalars['baseMVA']!r}") from None

    bus, gen, branch = matrices["bus"], matrices["gen"], matrices["branch"]
    index = {}
    for i, num in enumerate(bus[:, BUS_I].astype(int)):
        if num in index:
            raise CaseFormatError(f"duplicate bus number {num}")
        index[num] = i

    gen = gen[gen[:, GEN_STATUS] > 0]
    pg = np.zeros(len(bus))
    qg = np.zeros(len(bus))
    vg: dict[int, float] = {}
    for row in gen:
        num = int(row[GEN_BUS])
        if num not in index:
            raise CaseFormatError(f"generator at unknown bus {num}")
        i = index[num]
        pg[i] += row[PG] / base
        qg[i] += row[QG] / base
        vg.setdefault(i, row[VG])

    types = bus[:, BUS_TYPE].astype(int)
    n_slack = int(np.sum(types == 3))
    if n_slack == 0:
        raise CaseFormatError("no slack bus (type 3)")
    if n_slack > 1:
        raise CaseFormatError(f"duplicate slack: {n_slack} buses of type 3")
    if np.any((types < 1) | (types > 3)):
        raise CaseFormatError("unsupported bus type (isolated buses are not handled)")

    buses = []
    for i, row in enumerate(bus):
        kind = BusKind(types[i])
        if kind == BusKind.PV and i not in vg:
            kind = BusKind.PQ
        buses.append(
            Bus(
                id=i,
                kind=kind,
                pd=row[PD] / base,
                qd=row[QD] / base,
                pg=pg[i],
                qg=qg[i],
                vm_setpoint=vg.get(i, row[VM]),
                va_slack=math.radians(row[VA]) if kind == BusKind.SLACK else 0.0,
                gs=row[GS] / base,
                bs=row[BS] / base,
                number=int(row[BUS_I]),
            )
        )

    branches = []
    for row in branch[branch[:, BR_STATUS] > 0]:
        f, t = int(row[F_BUS]), int(row[T_BUS])
        if f not in index or t not in index:
            raise CaseFormatError(f"branch {f}-{t} references an unknown bus")
        try:
            branches.append(
                Branch(
                    id=len(branches),
                    from_bus=index[f],
                    to_bus=index[t],
                    r=row[BR_R],
                    x=row[BR_X],
                    b_charging=row[BR_B],
                    tap_ratio=row[TAP] if row[TAP] != 0 else 1.0,
                    phase_shift=math.radians(row[SHIFT]),
                )
            )
        except GridError as exc:
            raise CaseFormatError(str(exc)) from None

    return GridCase(
        name=name,
        base_mva=base,
        buses=tuple(buses),
        branches=tuple(branches),
        total_generation=float(pg.sum()),
    )


def load_case(path: str | Path) -> GridCase:
    """Read a case file; ``case14`` / ``case118`` resolve to the bundled copies."""
    key = str(path)
    if key in BUILTIN_CASES:
        text = resources.files("nminus1.cases").joinpath(BUILTIN_CASES[key]).read_text()
        return parse_matpower_case(text, name=key)
    p = Path(path)
    return parse_matpower_case(p.read_text(encoding="utf-8"), name=p.stem)


@dataclass(eq=False)
class ScenarioRecord:
    """One labelled grid instance.

    ``input_*`` hold the scheduled per-bus values (generator dispatch and
    setpoints, loads); the remaining arrays are the solved state and
    current magnitudes. Everything is per-unit.
    """

    instance_id: int
    topology: Topology
    cut_branch: int | None
    bus_p: np.ndarray
    bus_q: np.ndarray
    bus_vm: np.ndarray
    bus_va: np.ndarray
    inj_current: np.ndarray
    br_i_or: np.ndarray
    br_i_ex: np.ndarray
    input_pg: np.ndarray
    input_vm: np.ndarray
    input_pl: np.ndarray
    input_ql: np.ndarray

    BUS_FIELDS = ("bus_p", "bus_q", "bus_vm", "bus_va", "inj_current", "input_pg", "input_vm", "input_pl", "input_ql")
    BRANCH_FIELDS = ("br_i_or", "br_i_ex")

    @property
    def n_bus(self) -> int:
        return len(self.bus_vm)

    @property
    def n_branch(self) -> int:
        return len(self.topology)

    def to_json(self) -> dict:
        out = {
            "instance_id": self.instance_id,
            "in_service": list(self.topology.in_service),
            "cut_branch": self.cut_branch,
        }
        for name in self.BUS_FIELDS[:5] + self.BRANCH_FIELDS + self.BUS_FIELDS[5:]:
            out[name] = np.asarray(getattr(self, name), dtype=float).tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> ScenarioRecord:
        kwargs = {name: np.array(obj[name], dtype=float) for name in cls.BUS_FIELDS + cls.BRANCH_FIELDS}
        cut = obj["cut_branch"]
        return cls(
            instance_id=int(obj["instance_id"]),
            topology=Topology(tuple(obj["in_service"])),
            cut_branch=None if cut is None else int(cut),
            **kwargs,
        )


def _check_dims(rec: ScenarioRecord) -> tuple[int, int]:
    nb, nl = rec.n_bus, rec.n_branch
    for name in rec.BUS_FIELDS:
        if len(getattr(rec, name)) != nb:
            raise DatasetError(f"record {rec.instance_id}: {name} has length {len(getattr(rec, name))}, expected {nb}")
    for name in rec.BRANCH_FIELDS:
        if len(getattr(rec, name)) != nl:
            raise DatasetError(f"record {rec.instance_id}: {name} has length {len(getattr(rec, name))}, expected {nl}")
    return nb, nl


def write_dataset(records: Iterable[ScenarioRecord], path: str | Path) -> None:
    dims = None
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            d = _check_dims(rec)
            if dims is None:
                dims = d
            elif d != dims:
                raise DatasetError(f"record {rec.instance_id} has dimensions {d}, expected {dims}")
            fh.write(json.dumps(rec.to_json()))
            fh.write("\n")


def read_dataset(path: str | Path) -> list[ScenarioRecord]:
    records = []
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = ScenarioRecord.from_json(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: unreadable record ({exc})") from None
            try:
                d = _check_dims(rec)
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if dims is None:
                dims = d
            elif d != dims:
                raise DatasetError(f"{path}:{lineno}: dimensions {d} differ from first record {dims}")
            records.append(rec)
    return records
