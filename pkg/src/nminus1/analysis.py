"""Evaluation of trained surrogates: N vs N-1 error, degree clustering, mixed-training tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .case_io import ScenarioRecord
from .grid import GridCase, degree_reference_nodes, node_degrees
from .surrogate import FeatureCodec, ModelParams, predict_many

Model = tuple[ModelParams, FeatureCodec]

TABLE_COLUMNS = {
    "table1": ("model", "dataset", "n_mse", "n1_mse"),
    "table2": ("role", "degree", "count", "mse"),
    "table3": ("model", "p", "n1_mse"),
    "breakdown": ("model", "split", "br_i_or", "br_i_ex", "inj_current"),
}


def _squared_errors(params: ModelParams, codec: FeatureCodec, records: Sequence[ScenarioRecord]) -> np.ndarray:
    if not records:
        raise ValueError("cannot evaluate on an empty record list")
    return (predict_many(params, codec, records) - codec.raw_targets(records)) ** 2


def evaluate_mse(params: ModelParams, codec: FeatureCodec, records: Sequence[ScenarioRecord]) -> float:
    """Mean squared error over every current output of every record, in per-unit."""
    return float(_squared_errors(params, codec, records).mean())


def mse_breakdown(params: ModelParams, codec: FeatureCodec, records: Sequence[ScenarioRecord]) -> dict[str, float]:
    se = _squared_errors(params, codec, records)
    nl = codec.n_branch
    return {
        "br_i_or": float(se[:, :nl].mean()),
        "br_i_ex": float(se[:, nl : 2 * nl].mean()),
        "inj_current": float(se[:, 2 * nl :].mean()),
    }


@dataclass(frozen=True)
class DegreeCluster:
    role: str  # "max" or "median"
    node: int
    degree: int
    count: int
    mse: float


def degree_cluster_analysis(
    params: ModelParams,
    codec: FeatureCodec,
    case: GridCase,
    n1_records: Sequence[ScenarioRecord],
) -> list[DegreeCluster]:
    """Group N-1 records by the post-cut degree of the max- and median-degree buses."""
    missing = [r.instance_id for r in n1_records if r.cut_branch is None]
    if missing:
        raise ValueError(f"records without a cut branch: {missing[:10]}")
    node_max, node_med = degree_reference_nodes(node_degrees(case, case.full_topology()))
    per_record = _squared_errors(params, codec, n1_records).mean(axis=1)

    out = []
    for role, node in (("max", node_max), ("median", node_med)):
        after = np.array([node_degrees(case, r.topology)[node] for r in n1_records])
        for d in sorted(set(after.tolist()), reverse=True):
            sel = after == d
            out.append(DegreeCluster(role, node, d, int(sel.sum()), float(per_record[sel].mean())))
    return out


@dataclass
class EvalReport:
    dataset: str
    model: str
    n_mse: float
    n1_mse: float
    clusters: list[DegreeCluster] = field(default_factory=list)
    mix_table: list[tuple[float, float]] = field(default_factory=list)
    breakdown: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def gap_ratio(self) -> float:
        return self.n1_mse / self.n_mse if self.n_mse > 0 else float("inf")


@dataclass
class RobustnessReport:
    reports: list[EvalReport]
    mix_rows: list[tuple[str, float, float]]

    def table1(self) -> list[tuple]:
        return [(r.model, r.dataset, r.n_mse, r.n1_mse) for r in self.reports]

    def table2(self) -> list[tuple]:
        # degree clustering is reported for the first (reference) model
        if not self.reports:
            return []
        return [(c.role, c.degree, c.count, c.mse) for c in self.reports[0].clusters]

    def table3(self) -> list[tuple]:
        return list(self.mix_rows)

    def breakdown(self) -> list[tuple]:
        rows = []
        for r in self.reports:
            for split, b in r.breakdown.items():
                rows.append((r.model, split, b["br_i_or"], b["br_i_ex"], b["inj_current"]))
        return rows


def robustness_report(
    case: GridCase,
    models: Mapping[str, Model],
    n_records: Sequence[ScenarioRecord],
    n1_records: Sequence[ScenarioRecord],
    mix_models: Sequence[tuple[str, float, Model]] = (),
    dataset: str | None = None,
) -> RobustnessReport:
    """Score every model on the N and N-1 sets and every mixed-training model on N-1.

    Order follows the order of ``models`` and ``mix_models``.
    """
    dataset = dataset or case.name
    reports = []
    for name, (params, codec) in models.items():
        reports.append(
            EvalReport(
                dataset=dataset,
                model=name,
                n_mse=evaluate_mse(params, codec, n_records),
                n1_mse=evaluate_mse(params, codec, n1_records),
                clusters=degree_cluster_analysis(params, codec, case, n1_records),
                breakdown={
                    "n": mse_breakdown(params, codec, n_records),
                    "n1": mse_breakdown(params, codec, n1_records),
                },
            )
        )
    by_name = {r.model: r for r in reports}
    mix_rows = []
    for name, p, (params, codec) in mix_models:
        score = evaluate_mse(params, codec, n1_records)
        mix_rows.append((name, float(p), score))
        if name in by_name:
            by_name[name].mix_table.append((float(p), score))
    return RobustnessReport(reports, mix_rows)


def write_report(report: RobustnessReport, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, rows in (
        ("table1", report.table1()),
        ("table2", report.table2()),
        ("table3", report.table3()),
        ("breakdown", report.breakdown()),
    ):
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS[name])
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        paths[name] = path
    return paths


_PARSERS = {
    "table1": (str, str, float, float),
    "table2": (str, int, int, float),
    "table3": (str, float, float),
    "breakdown": (str, str, float, float, float),
}


def read_table(path: str | Path) -> list[tuple]:
    """Parse one of the report CSVs back into typed row tuples."""
    name = Path(path).stem
    types = _PARSERS[name]
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != TABLE_COLUMNS[name]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return [tuple(t(v) for t, v in zip(types, row)) for row in rows[1:]]
