"""Human triage labels: an append-only log plus report aggregation.

Labels persist as one JSON line per record. The log is never rewritten;
when the same annotator labels the same case again, the newer record
supersedes the older one in reports while the full history stays on disk.
Aggregation is a pure function of the log, so replaying the file from
scratch always reproduces the live report.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .daf import DiscrepancyCase
from .errors import StorageError, ValidationError
from .taxonomy import validate_fault_ids
from .tcac import TcacCase

SOURCES = ("daf", "tcac")


@dataclass(frozen=True)
class CaseRef:
    source: str
    case_id: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValidationError(f"unknown case source {self.source!r}")
        if not self.case_id:
            raise ValidationError("case id is empty")


@dataclass(frozen=True)
class CaseLabel:
    case_ref: CaseRef
    fault_ids: tuple[str, ...]  # empty tuple means "not a failure"
    note: str
    annotator: str
    timestamp: int  # UTC seconds

    def __post_init__(self):
        validate_fault_ids(self.fault_ids)
        if not self.annotator:
            raise ValidationError("annotator is empty")


class CaseRegistry:
    """Loaded DAF and TCAC cases keyed by (source, case id), order-preserving."""

    def __init__(self, daf_cases: Sequence[DiscrepancyCase] = (),
                 tcac_cases: Sequence[TcacCase] = ()):
        self.daf_cases = list(daf_cases)
        self.tcac_cases = list(tcac_cases)
        self._keys: dict[tuple[str, str], object] = {}
        for case in self.daf_cases:
            self._keys[("daf", case.case_id)] = case
        for case in self.tcac_cases:
            self._keys[("tcac", case.case_id)] = case

    def __contains__(self, ref: CaseRef) -> bool:
        return (ref.source, ref.case_id) in self._keys

    def get(self, ref: CaseRef):
        try:
            return self._keys[(ref.source, ref.case_id)]
        except KeyError:
            raise ValidationError(f"unknown case {ref.source}/{ref.case_id}") from None

    def refs(self) -> list[CaseRef]:
        return [CaseRef(source, case_id) for source, case_id in self._keys]

    def transform_of(self, ref: CaseRef) -> str | None:
        case = self._keys.get((ref.source, ref.case_id))
        return case.transform if isinstance(case, TcacCase) else None

    def __len__(self) -> int:
        return len(self._keys)


class LabelStore:
    """Durable append-only label log with serialized writes."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._labels: list[CaseLabel] = []
        if self.path.exists():
            self._labels = list(read_label_log(self.path))

    def record_label(self, label: CaseLabel, registry: CaseRegistry | None = None) -> None:
        """Validate and append. Later labels by the same annotator supersede
        earlier ones in reports; history is retained."""
        if registry is not None and label.case_ref not in registry:
            raise ValidationError(
                f"unknown case {label.case_ref.source}/{label.case_ref.case_id}")
        line = json.dumps({
            "source": label.case_ref.source,
            "case_id": label.case_ref.case_id,
            "fault_ids": list(label.fault_ids),
            "note": label.note,
            "annotator": label.annotator,
            "ts": label.timestamp,
        }, ensure_ascii=False)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.write("\n")
                fh.flush()
            self._labels.append(label)

    def labels(self) -> list[CaseLabel]:
        with self._lock:
            return list(self._labels)

    def history(self, ref: CaseRef) -> list[CaseLabel]:
        return [lb for lb in self.labels() if lb.case_ref == ref]

    def effective(self, ref: CaseRef) -> dict[str, CaseLabel]:
        """Latest label per annotator for one case."""
        return effective_labels(self.labels()).get((ref.source, ref.case_id), {})


def make_label(source: str, case_id: str, fault_ids: Iterable[str], note: str,
               annotator: str, timestamp: int | None = None) -> CaseLabel:
    return CaseLabel(
        case_ref=CaseRef(source=source, case_id=case_id),
        fault_ids=tuple(fault_ids),
        note=note,
        annotator=annotator,
        timestamp=int(time.time()) if timestamp is None else int(timestamp),
    )


def read_label_log(path: str | Path) -> list[CaseLabel]:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"label log not found: {path}")
    labels: list[CaseLabel] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                labels.append(CaseLabel(
                    case_ref=CaseRef(source=obj["source"], case_id=obj["case_id"]),
                    fault_ids=tuple(obj["fault_ids"]),
                    note=str(obj.get("note", "")),
                    annotator=obj["annotator"],
                    timestamp=int(obj["ts"]),
                ))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise StorageError(f"{path}:{lineno}: corrupt label record: {exc}") from exc
    return labels


def effective_labels(labels: Sequence[CaseLabel]) -> dict[tuple[str, str], dict[str, CaseLabel]]:
    """Log order wins: for each (case, annotator) keep the last record."""
    out: dict[tuple[str, str], dict[str, CaseLabel]] = {}
    for label in labels:
        key = (label.case_ref.source, label.case_ref.case_id)
        out.setdefault(key, {})[label.annotator] = label
    return out


@dataclass(frozen=True)
class AuditReport:
    per_fault: dict[str, int]
    per_transform: dict[str, dict[str, int]]
    per_source: dict[str, int]
    total_cases: int
    labeled_cases: int
    unlabeled_cases: int
    disagreements: int
    label_records: int

    def to_json(self) -> dict:
        return {
            "per_fault": dict(sorted(self.per_fault.items())),
            "per_transform": {k: dict(sorted(v.items()))
                              for k, v in sorted(self.per_transform.items())},
            "per_source": dict(sorted(self.per_source.items())),
            "total_cases": self.total_cases,
            "labeled_cases": self.labeled_cases,
            "unlabeled_cases": self.unlabeled_cases,
            "disagreements": self.disagreements,
            "label_records": self.label_records,
        }


def aggregate_report(labels: Sequence[CaseLabel], registry: CaseRegistry) -> AuditReport:
    """Deterministic aggregation over effective labels.

    Fault counts include one increment per (case, annotator, fault).
    A disagreement is a case where two annotators' effective fault-id sets
    differ.
    """
    effective = effective_labels(labels)
    per_fault: dict[str, int] = {}
    per_transform: dict[str, dict[str, int]] = {}
    per_source: dict[str, int] = {}
    labeled = 0
    disagreements = 0
    for key, by_annotator in effective.items():
        source, case_id = key
        ref = CaseRef(source, case_id)
        if ref in registry:
            labeled += 1
        per_source[source] = per_source.get(source, 0) + 1
        fault_sets = {frozenset(lb.fault_ids) for lb in by_annotator.values()}
        if len(fault_sets) > 1:
            disagreements += 1
        transform = registry.transform_of(ref)
        for label in by_annotator.values():
            for fault_id in label.fault_ids:
                per_fault[fault_id] = per_fault.get(fault_id, 0) + 1
                if transform is not None:
                    bucket = per_transform.setdefault(transform, {})
                    bucket[fault_id] = bucket.get(fault_id, 0) + 1
    return AuditReport(
        per_fault=per_fault,
        per_transform=per_transform,
        per_source=per_source,
        total_cases=len(registry),
        labeled_cases=labeled,
        unlabeled_cases=len(registry) - labeled,
        disagreements=disagreements,
        label_records=len(labels),
    )
