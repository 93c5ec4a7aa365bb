"""Caption-ranking churn under image transformations.

Per image the pipeline builds a candidate caption pool from text-embedding
neighbors of the image's own captions, ranks the pool by softmaxed
image-caption logits before and after each transformation, and keeps the
cases whose top-k caption set changed the most. ``diff_count`` is the number
of original top-k captions evicted from the post-transform top-k; because
both sets have equal size it also equals the number of newcomers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .daf import DiscrepancyCase, DivergenceScore
from .datastore import DatasetManifest, EmbeddingStore, ImageRecord
from .errors import ValidationError
from .simindex import ExactNearestNeighbors

DEFAULT_TOP_K = 10
DEFAULT_PER_CAPTION = 10
DEFAULT_PER_TRANSFORM = 100
DEFAULT_TEMPERATURE = 100.0


@dataclass(frozen=True)
class CaptionPool:
    """Unique candidate captions for one image, with retrieval provenance."""

    image_id: str
    captions: tuple[str, ...]
    # pooled caption -> [(source caption, 1-based retrieval rank), ...]
    provenance: Mapping[str, tuple[tuple[str, int], ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.captions)) != len(self.captions):
            raise ValidationError(f"caption pool for {self.image_id!r} has duplicates")
        if not self.captions:
            raise ValidationError(f"caption pool for {self.image_id!r} is empty")


@dataclass(frozen=True)
class CaptionRanking:
    """Pool captions ordered by predicted probability, best first.

    ``state`` is ``"original"`` or ``"transformed:<kind>"``.
    """

    image_id: str
    state: str
    entries: tuple[tuple[str, float], ...]

    @property
    def transform_kind(self) -> str:
        if self.state.startswith("transformed:"):
            return self.state.split(":", 1)[1]
        return "original"

    def top(self, k: int) -> tuple[tuple[str, float], ...]:
        return self.entries[:k]


@dataclass
class TcacCase:
    image_id: str
    transform: str
    k: int
    top_before: tuple[tuple[str, float], ...]
    top_after: tuple[tuple[str, float], ...]
    diff_count: int
    daf: "DafAnnotation | None" = None

    @property
    def case_id(self) -> str:
        return f"{self.image_id}@{self.transform}"


@dataclass(frozen=True)
class DafAnnotation:
    """Cross-reference from a TCAC case to a DAF finding on the same image."""

    found: bool
    query_id: str | None = None
    divergence: DivergenceScore | None = None

    def describe(self) -> str:
        if not self.found or self.divergence is None:
            return "no DAF finding"
        return (f"DAF divergence {self.divergence.primary:.3f} "
                f"(jaccard@k {self.divergence.jaccard_at_k:.3f}, rbo {self.divergence.rbo:.3f})")


def build_caption_pool(image: ImageRecord, text_store: EmbeddingStore,
                       per_caption: int = DEFAULT_PER_CAPTION) -> CaptionPool:
    """Pool the top ``per_caption`` cosine neighbors of each source caption.

    A caption is its own nearest neighbor and stays in the pool, so the
    ground-truth caption always competes in the ranking. Duplicates keep
    their first occurrence.
    """
    if per_caption < 1:
        raise ValidationError(f"per_caption must be >= 1, got {per_caption}")
    index_of = text_store.index_of()
    missing = [c for c in image.captions if c not in index_of]
    if missing:
        raise ValidationError(
            f"captions of {image.id!r} missing from text store: {missing[:3]}")
    index = ExactNearestNeighbors(metric="cosine", k=per_caption, exclude_self=False)
    index.fit(text_store)
    pooled: list[str] = []
    provenance: dict[str, list[tuple[str, int]]] = {}
    for source in image.captions:
        neighbors = index.kneighbors(source)
        for rank, (caption, _) in enumerate(neighbors.entries, start=1):
            if caption not in provenance:
                pooled.append(caption)
                provenance[caption] = []
            provenance[caption].append((source, rank))
    return CaptionPool(
        image_id=image.id,
        captions=tuple(pooled),
        provenance={c: tuple(v) for c, v in provenance.items()},
    )


def global_caption_pool(manifest: DatasetManifest, image_id: str) -> CaptionPool:
    """Alternate pool scope: every unique caption in the corpus."""
    return CaptionPool(image_id=image_id, captions=tuple(manifest.unique_captions()))


def score_captions(image_id: str, captions: Sequence[str], logits,
                   temperature_scale: float = DEFAULT_TEMPERATURE,
                   state: str = "original") -> CaptionRanking:
    """Softmax the scaled logits into a probability ranking over the pool.

    Probabilities sum to 1 within 1e-9 and the ordering preserves the logit
    argmax for any positive temperature; ties break by ascending caption
    text.
    """
    if temperature_scale <= 0:
        raise ValidationError(f"temperature_scale must be > 0, got {temperature_scale}")
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != len(captions):
        raise ValidationError(
            f"logits shape {arr.shape} does not match {len(captions)} captions")
    if len(captions) == 0:
        raise ValidationError("cannot rank an empty caption pool")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("logits contain non-finite values")
    z = temperature_scale * arr
    z -= z.max()
    exp = np.exp(z)
    probs = exp / exp.sum()
    order = sorted(range(len(captions)), key=lambda i: (-probs[i], captions[i]))
    entries = tuple((captions[i], float(probs[i])) for i in order)
    return CaptionRanking(image_id=image_id, state=state, entries=entries)


def diff_rankings(before: CaptionRanking, after: CaptionRanking,
                  k: int = DEFAULT_TOP_K) -> TcacCase:
    """Count how many of the original top-k captions were evicted."""
    if before.image_id != after.image_id:
        raise ValidationError(
            f"image mismatch: {before.image_id!r} vs {after.image_id!r}")
    pool_before = {c for c, _ in before.entries}
    pool_after = {c for c, _ in after.entries}
    if pool_before != pool_after:
        raise ValidationError(
            f"caption pools differ for {before.image_id!r}; rankings are not comparable")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    top_before = before.top(k)
    top_after = after.top(k)
    evicted = {c for c, _ in top_before} - {c for c, _ in top_after}
    return TcacCase(
        image_id=before.image_id,
        transform=after.transform_kind,
        k=k,
        top_before=top_before,
        top_after=top_after,
        diff_count=len(evicted),
    )


def select_cases(cases: Sequence[TcacCase],
                 per_transform: int = DEFAULT_PER_TRANSFORM) -> list[TcacCase]:
    """Keep the most-changed cases per transform kind.

    Within each kind, cases sort by descending diff_count with ties broken
    by ascending image id, then truncate to ``per_transform``.
    """
    if per_transform < 1:
        raise ValidationError(f"per_transform must be >= 1, got {per_transform}")
    by_kind: dict[str, list[TcacCase]] = {}
    kind_order: list[str] = []
    for case in cases:
        if case.transform not in by_kind:
            by_kind[case.transform] = []
            kind_order.append(case.transform)
        by_kind[case.transform].append(case)
    selected: list[TcacCase] = []
    for kind in kind_order:
        group = sorted(by_kind[kind], key=lambda c: (-c.diff_count, c.image_id))
        selected.extend(group[:per_transform])
    return selected


def cross_check_daf(case: TcacCase, daf_cases: Sequence[DiscrepancyCase]) -> DafAnnotation:
    """Attach the DAF finding for the same image, if any."""
    for daf_case in daf_cases:
        if daf_case.query_id == case.image_id:
            annotation = DafAnnotation(found=True, query_id=daf_case.query_id,
                                       divergence=daf_case.divergence)
            case.daf = annotation
            return annotation
    annotation = DafAnnotation(found=False)
    case.daf = annotation
    return annotation


def annotate_cases(cases: Sequence[TcacCase], daf_cases: Sequence[DiscrepancyCase]) -> None:
    by_id = {c.query_id: c for c in daf_cases}
    for case in cases:
        match = by_id.get(case.image_id)
        if match is None:
            case.daf = DafAnnotation(found=False)
        else:
            case.daf = DafAnnotation(found=True, query_id=match.query_id,
                                     divergence=match.divergence)


def save_pools(pools: Sequence[CaptionPool], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            fh.write(json.dumps({
                "image_id": pool.image_id,
                "captions": list(pool.captions),
                "provenance": {c: [[s, r] for s, r in v] for c, v in pool.provenance.items()},
            }, ensure_ascii=False))
            fh.write("\n")


def load_pools(path: str | Path) -> dict[str, CaptionPool]:
    path = Path(path)
    pools: dict[str, CaptionPool] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid pool line: {exc}") from exc
            pool = CaptionPool(
                image_id=obj["image_id"],
                captions=tuple(obj["captions"]),
                provenance={c: tuple((s, int(r)) for s, r in v)
                            for c, v in obj.get("provenance", {}).items()},
            )
            pools[pool.image_id] = pool
    return pools


def save_cases(cases: Sequence[TcacCase], path: str | Path) -> None:
    """One JSON line per case: both top-k lists, diff_count, DAF annotation."""
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            daf_obj = None
            if case.daf is not None and case.daf.found and case.daf.divergence is not None:
                daf_obj = {
                    "query_id": case.daf.query_id,
                    "jaccard_at_k": case.daf.divergence.jaccard_at_k,
                    "rbo": case.daf.divergence.rbo,
                    "rbo_p": case.daf.divergence.rbo_p,
                    "displacement": case.daf.divergence.displacement,
                }
            fh.write(json.dumps({
                "source": "tcac",
                "image_id": case.image_id,
                "transform": case.transform,
                "k": case.k,
                "top_before": [[c, p] for c, p in case.top_before],
                "top_after": [[c, p] for c, p in case.top_after],
                "diff_count": case.diff_count,
                "daf": daf_obj,
            }, ensure_ascii=False))
            fh.write("\n")


def load_cases(path: str | Path) -> list[TcacCase]:
    path = Path(path)
    cases: list[TcacCase] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid case line: {exc}") from exc
            if obj.get("source") != "tcac":
                raise ValidationError(f"{path}:{lineno}: not a TCAC case line")
            daf = None
            if obj.get("daf"):
                d = obj["daf"]
                daf = DafAnnotation(found=True, query_id=d["query_id"], divergence=DivergenceScore(
                    jaccard_at_k=float(d["jaccard_at_k"]), rbo=float(d["rbo"]),
                    rbo_p=float(d["rbo_p"]), displacement=float(d["displacement"]),
                ))
            case = TcacCase(
                image_id=obj["image_id"],
                transform=obj["transform"],
                k=int(obj["k"]),
                top_before=tuple((c, float(p)) for c, p in obj["top_before"]),
                top_after=tuple((c, float(p)) for c, p in obj["top_after"]),
                diff_count=int(obj["diff_count"]),
                daf=daf,
            )
            cases.append(case)
    return cases
