"""Filtered ranking, MRR / Hits@k per query type, and improvement over a baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import CoverageMismatch, DataError, EmptyGroup, TargetFiltered
from .queries import ALL_TYPES, QueryInstance, QueryType

HITS_AT = (1, 3, 10)
METRICS = ("mrr", "hits1", "hits3", "hits10")


def filtered_rank(distances: np.ndarray, target: int, filter_out: Iterable[int]) -> float:
    """Mid-rank of ``target`` among entities not in ``filter_out`` (smaller is better)."""
    filter_out = set(int(x) for x in filter_out)
    if target in filter_out:
        raise TargetFiltered(f"target {target} is in the filter set")
    d = np.asarray(distances)
    keep = np.ones(len(d), dtype=bool)
    if filter_out:
        keep[np.fromiter(filter_out, dtype=np.int64)] = False
    keep[target] = False
    rest = d[keep]
    dt = d[target]
    return 1.0 + float(np.count_nonzero(rest < dt)) + float(np.count_nonzero(rest == dt)) / 2.0


def instance_ranks(distances: np.ndarray, targets: Sequence[int], known: Iterable[int]) -> np.ndarray:
    """Ranks of every target, each filtered by ``known`` minus itself.

    Equivalent to calling :func:`filtered_rank` per target, done with one sort.
    """
    d = np.asarray(distances)
    targets = np.asarray(sorted(targets), dtype=np.int64)
    keep = np.ones(len(d), dtype=bool)
    known = np.fromiter((int(x) for x in known), dtype=np.int64)
    keep[known] = False
    keep[targets] = False
    pool = np.sort(d[keep])
    dt = d[targets]
    lower = np.searchsorted(pool, dt, side="left")
    upper = np.searchsorted(pool, dt, side="right")
    return 1.0 + lower + (upper - lower) / 2.0


@dataclass
class EvalReport:
    per_type: dict
    average: dict
    improvement: Optional[float] = None

    def types(self) -> list[str]:
        return list(self.per_type)

    def to_dict(self) -> dict:
        out = {"per_type": self.per_type, "average": self.average}
        if self.improvement is not None:
            out["improvement"] = self.improvement
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        try:
            return cls(dict(data["per_type"]), dict(data["average"]), data.get("improvement"))
        except (KeyError, TypeError):
            raise DataError("report lacks per_type/average sections") from None

    def table(self) -> str:
        """Text table in percent: one row per metric, one column per type plus Avg (and Imp)."""
        cols = self.types() + ["Avg"]
        header = ["metric"] + cols + (["Imp"] if self.improvement is not None else [])
        rows = [header]
        for m in METRICS:
            row = [m] + [f"{100 * self.per_type[t][m]:.2f}" for t in self.types()]
            row.append(f"{100 * self.average[m]:.2f}")
            if self.improvement is not None:
                row.append(f"{self.improvement:.1f}%" if m == "mrr" else "")
            rows.append(row)
        rows.append(["count"] + [str(self.per_type[t]["count"]) for t in self.types()] + [""] * (len(header) - len(cols)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def aggregate_metrics(ranks_by_type: Mapping) -> EvalReport:
    """Per-type MRR and Hits@k, plus their unweighted mean over types."""
    if not ranks_by_type:
        raise EmptyGroup("no query types to aggregate")
    per_type = {}
    order = [str(t) for t in ALL_TYPES]
    keys = sorted((str(k) for k in ranks_by_type), key=lambda s: (order.index(s) if s in order else len(order), s))
    lookup = {str(k): v for k, v in ranks_by_type.items()}
    for t in keys:
        r = np.sort(np.asarray(lookup[t], dtype=np.float64))
        if r.size == 0:
            raise EmptyGroup(f"no ranks for query type {t}")
        if np.any(r < 1):
            raise ValueError("ranks must be >= 1")
        entry = {"mrr": float(np.mean(1.0 / r))}
        for k in HITS_AT:
            entry[f"hits{k}"] = float(np.mean(r <= k))
        entry["count"] = int(r.size)
        per_type[t] = entry
    average = {m: float(np.mean([per_type[t][m] for t in keys])) for m in METRICS}
    return EvalReport(per_type, average)


def improvement_report(base: EvalReport, ours: EvalReport) -> float:
    """Relative gain in average MRR, in percent."""
    if set(base.per_type) != set(ours.per_type):
        missing = sorted(set(base.per_type) ^ set(ours.per_type))
        raise CoverageMismatch(f"query types differ: {missing}")
    if base.average["mrr"] == 0:
        raise DataError("baseline average MRR is zero")
    return 100.0 * (ours.average["mrr"] - base.average["mrr"]) / base.average["mrr"]


def collect_ranks(model, kg, instances: Sequence[QueryInstance], targets: str = "hard", batch_size: int = 256) -> dict:
    """Ranks grouped by query type.

    ``targets="hard"`` ranks hard answers with everything known filtered;
    ``"all"`` ranks every answer, which suits training-set checks.
    """
    if targets not in ("hard", "all"):
        raise ValueError("targets must be 'hard' or 'all'")
    groups: dict = {}
    for inst in instances:
        goal = inst.hard if targets == "hard" else inst.answers
        if goal:
            groups.setdefault(inst.type, []).append(inst)
    model.check_supported(list(groups))
    ranks: dict = {}
    for t in ALL_TYPES:
        if t not in groups:
            continue
        out = []
        batch = groups[t]
        for s in range(0, len(batch), batch_size):
            chunk = batch[s : s + batch_size]
            scores = model.score_all(kg, t, chunk)
            for row, inst in zip(scores, chunk):
                goal = inst.hard if targets == "hard" else inst.answers
                out.append(instance_ranks(row, goal, inst.answers))
        ranks[str(t)] = np.concatenate(out)
    return ranks


def evaluate(model, kg, instances, targets: str = "hard", baseline: Optional[EvalReport] = None, batch_size: int = 256) -> EvalReport:
    report = aggregate_metrics(collect_ranks(model, kg, instances, targets, batch_size))
    if baseline is not None:
        report.improvement = improvement_report(baseline, report)
    return report
