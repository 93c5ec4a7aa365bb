"""Triage HTTP API: browse mined cases, persist human labels, report.

Case ordering is whatever the engines wrote to the case files (DAF: by
descending divergence; TCAC: per-transform groups by descending diff_count),
and the list endpoint filters without re-sorting so the UI sees the engine
order. Label writes go through the append-only :class:`LabelStore`.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import daf as daf_mod
from . import tcac as tcac_mod
from .errors import StorageError, ValidationError
from .labels import CaseRef, CaseRegistry, LabelStore, aggregate_report, make_label
from .taxonomy import FAULTS


def build_registry(daf_cases_path: str | None, tcac_cases_path: str | None) -> CaseRegistry:
    daf_cases = daf_mod.load_cases(daf_cases_path) if daf_cases_path else []
    tcac_cases = tcac_mod.load_cases(tcac_cases_path) if tcac_cases_path else []
    return CaseRegistry(daf_cases=daf_cases, tcac_cases=tcac_cases)


def build_registry_from_files(paths: Sequence[str]) -> CaseRegistry:
    """Load a mixed list of case files, sniffing each file's source."""
    daf_cases, tcac_cases = [], []
    for path in paths:
        p = Path(path)
        if not p.exists():
            raise StorageError(f"case file not found: {p}")
        source = None
        with open(p, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    try:
                        source = json.loads(line).get("source")
                    except json.JSONDecodeError as exc:
                        raise ValidationError(f"{p}:1: invalid case line: {exc}") from exc
                    break
        if source == "daf":
            daf_cases.extend(daf_mod.load_cases(p))
        elif source == "tcac":
            tcac_cases.extend(tcac_mod.load_cases(p))
        elif source is None:
            continue  # empty file contributes no cases
        else:
            raise ValidationError(f"{p}: unknown case source {source!r}")
    return CaseRegistry(daf_cases=daf_cases, tcac_cases=tcac_cases)


class LabelSubmission(BaseModel):
    fault_ids: list[str] = []
    note: str = ""
    annotator: str


def _daf_summary(case: daf_mod.DiscrepancyCase) -> dict:
    return {
        "source": "daf",
        "case_id": case.case_id,
        "image_id": case.query_id,
        "transform": None,
        "divergence": case.divergence.primary,
        "jaccard_at_k": case.divergence.jaccard_at_k,
        "rbo": case.divergence.rbo,
        "displacement": case.divergence.displacement,
        "diff_count": None,
    }


def _tcac_summary(case: tcac_mod.TcacCase) -> dict:
    return {
        "source": "tcac",
        "case_id": case.case_id,
        "image_id": case.image_id,
        "transform": case.transform,
        "diff_count": case.diff_count,
        "divergence": None,
    }


def _image_url(kind: str, image_id: str) -> str:
    return f"/images/{kind}/{image_id}.png"


def create_app(registry: CaseRegistry, store: LabelStore,
               images_dir: str | None = None, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="glitchscope triage", docs_url=None, redoc_url=None)

    @app.exception_handler(ValidationError)
    async def _validation_error(_, exc: ValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    summaries: list[dict] = [_daf_summary(c) for c in registry.daf_cases]
    summaries += [_tcac_summary(c) for c in registry.tcac_cases]

    @app.get("/api/taxonomy")
    def taxonomy():
        return [
            {"id": f.id, "name": f.name, "description": f.description, "novel": f.novel}
            for f in FAULTS
        ]

    @app.get("/api/cases")
    def list_cases(source: str | None = None, transform: str | None = None,
                   offset: int = 0, limit: int = 100):
        if offset < 0 or limit < 0:
            raise ValidationError("offset and limit must be >= 0")
        rows = summaries
        if source is not None:
            if source not in ("daf", "tcac"):
                raise ValidationError(f"unknown source {source!r}")
            rows = [r for r in rows if r["source"] == source]
        if transform is not None:
            rows = [r for r in rows if r["transform"] == transform]
        page = rows[offset:offset + limit]
        out = []
        for row in page:
            labels = store.effective(CaseRef(row["source"], row["case_id"]))
            out.append({**row, "labeled_by": sorted(labels)})
        return {"total": len(rows), "cases": out}

    @app.get("/api/cases/{source}/{case_id}")
    def case_detail(source: str, case_id: str):
        ref = CaseRef(source, case_id)
        if ref not in registry:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown case {source}/{case_id}"})
        case = registry.get(ref)
        effective = store.effective(ref)
        labels = [
            {
                "annotator": lb.annotator,
                "fault_ids": list(lb.fault_ids),
                "note": lb.note,
                "ts": lb.timestamp,
            }
            for _, lb in sorted(effective.items())
        ]
        common = {
            "labels": labels,
            "label_history_length": len(store.history(ref)),
        }
        if source == "daf":
            return {
                **_daf_summary(case),
                **common,
                "original_image_url": _image_url("original", case.query_id),
                "transformed_image_url": None,
                "neighbors_a": [
                    {"id": i, "score": s, "caption": case.captions.get(i),
                     "image_url": _image_url("original", i)}
                    for i, s in case.neighbors_a.entries
                ],
                "neighbors_b": [
                    {"id": i, "score": s, "caption": case.captions.get(i),
                     "image_url": _image_url("original", i)}
                    for i, s in case.neighbors_b.entries
                ],
                "query_caption": case.captions.get(case.query_id),
            }
        annotation = None
        if case.daf is not None and case.daf.found and case.daf.divergence is not None:
            annotation = {
                "query_id": case.daf.query_id,
                "divergence": case.daf.divergence.primary,
                "jaccard_at_k": case.daf.divergence.jaccard_at_k,
                "rbo": case.daf.divergence.rbo,
                "displacement": case.daf.divergence.displacement,
                "description": case.daf.describe(),
            }
        return {
            **_tcac_summary(case),
            **common,
            "original_image_url": _image_url("original", case.image_id),
            "transformed_image_url": _image_url(case.transform, case.image_id),
            "top_before": [{"caption": c, "probability": p} for c, p in case.top_before],
            "top_after": [{"caption": c, "probability": p} for c, p in case.top_after],
            "daf": annotation,
        }

    @app.post("/api/cases/{source}/{case_id}/labels")
    def submit_label(source: str, case_id: str, body: LabelSubmission):
        label = make_label(source, case_id, body.fault_ids, body.note, body.annotator)
        store.record_label(label, registry)
        return {
            "source": source,
            "case_id": case_id,
            "fault_ids": list(label.fault_ids),
            "note": label.note,
            "annotator": label.annotator,
            "ts": label.timestamp,
        }

    @app.get("/api/report")
    def report():
        return aggregate_report(store.labels(), registry).to_json()

    if images_dir is not None:
        app.mount("/images", StaticFiles(directory=images_dir), name="images")
    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:
        @app.get("/")
        def root():
            return {"service": "glitchscope triage", "cases": len(registry)}

    return app
