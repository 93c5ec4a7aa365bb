"""Discrepancy mining between two embedding models' neighbor rankings.

For every image present in both stores, the top-k neighbor lists under each
model are compared with three rank-divergence metrics:

* Jaccard@k — intersection over union of the two top-k id sets. The primary
  divergence statistic is ``1 - jaccard_at_k``.
* Rank-biased overlap (extrapolated form) with persistence ``p``: for two
  equal-length rankings with overlap ``X_d = |A[:d] & B[:d]|``,

      rbo = (X_k / k) * p**k + ((1 - p) / p) * sum_{d=1..k} (X_d / d) * p**d

  which is 1 for identical lists and 0 for lists disjoint at every depth.
* Mean displacement — average absolute rank shift of the shared ids
  (0 when the intersection is empty).

Cases whose primary divergence meets the threshold become
:class:`DiscrepancyCase` records and can be rendered into caption-analysis
prompt files for an external LLM reviewer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .datastore import (
    CaptionPolicy,
    DatasetManifest,
    EmbeddingStore,
    select_primary_caption,
)
from .errors import ValidationError
from .simindex import ExactNearestNeighbors, NeighborList

DEFAULT_RBO_P = 0.9
DEFAULT_THRESHOLD = 0.8

# Instruction text appended verbatim to every emitted prompt file; the golden
# test compares this constant byte-for-byte against tests/golden.
ANALYSIS_PROMPT = (
    "I will provide a series of data for you to remember. Please memorize this data "
    "because I will ask you questions on them afterwards:"
    "\n\n"
    "Data format: The first sentence is the main caption of the image, and the "
    "subsequent sentences are the captions generated by an embedding model on the "
    "same image."
    "\n\n"
    "Task: I am trying to find failures with an embedding model. The above are "
    "sentences of image captions that it encodes very similarly, even though they "
    "are conveying different concepts. Using these specific examples, are there any "
    "general types of failures you notice the embedding is making, or any common "
    "features that the embedding fails to encode? Try to give failures that are "
    "specific enough that someone could reliably produce examples that the embedding "
    "would encode similarly, even though it shouldn't. Please try to give as many "
    "general failures as possible, and please just state each failure without "
    "further explanation. Please focus on differences that are important visually, "
    "as these embeddings are later used to generate images or videos."
    "\n\n"
    'Here is an example for the format: {"Failure Type Heading": "Description: '
    'Describe in few words as to why the failure occurred"}'
    "\n\n"
    "Give the output as Python Dictionary of objects"
)


@dataclass(frozen=True)
class DivergenceScore:
    jaccard_at_k: float
    rbo: float
    rbo_p: float
    displacement: float

    @property
    def primary(self) -> float:
        """The headline divergence, 1 - jaccard_at_k."""
        return 1.0 - self.jaccard_at_k


@dataclass
class DiscrepancyCase:
    query_id: str
    neighbors_a: NeighborList
    neighbors_b: NeighborList
    divergence: DivergenceScore
    # id -> primary caption, covering the query and both neighbor sets;
    # empty when no manifest was supplied to run_daf.
    captions: dict[str, str] = field(default_factory=dict)

    @property
    def case_id(self) -> str:
        return self.query_id


def _jaccard(a: Sequence[str], b: Sequence[str]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


def _rbo(a: Sequence[str], b: Sequence[str], p: float) -> float:
    k = len(a)
    if k == 0:
        return 1.0
    seen_a: set[str] = set()
    seen_b: set[str] = set()
    overlap = 0
    weighted = 0.0
    p_pow = 1.0
    for d in range(1, k + 1):
        xa, xb = a[d - 1], b[d - 1]
        if xa == xb:
            overlap += 1
        else:
            if xa in seen_b:
                overlap += 1
            if xb in seen_a:
                overlap += 1
            seen_a.add(xa)
            seen_b.add(xb)
        p_pow *= p
        weighted += (overlap / d) * p_pow
    return (overlap / k) * p_pow + (1.0 - p) / p * weighted


def _displacement(a: Sequence[str], b: Sequence[str]) -> float:
    pos_b = {id_: i for i, id_ in enumerate(b)}
    shifts = [abs(i - pos_b[id_]) for i, id_ in enumerate(a) if id_ in pos_b]
    if not shifts:
        return 0.0
    return sum(shifts) / len(shifts)


def compare_rankings(a: NeighborList, b: NeighborList, rbo_p: float = DEFAULT_RBO_P) -> DivergenceScore:
    """Score the divergence between two top-k lists for the same query."""
    if a.query_id != b.query_id:
        raise ValidationError(
            f"query mismatch: {a.query_id!r} vs {b.query_id!r}"
        )
    if len(a.entries) != len(b.entries):
        raise ValidationError(
            f"k mismatch for {a.query_id!r}: {len(a.entries)} vs {len(b.entries)}"
        )
    if not (0.0 < rbo_p < 1.0):
        raise ValidationError(f"rbo_p must lie in (0, 1), got {rbo_p!r}")
    ids_a, ids_b = a.ids(), b.ids()
    return DivergenceScore(
        jaccard_at_k=_jaccard(ids_a, ids_b),
        rbo=_rbo(ids_a, ids_b, rbo_p),
        rbo_p=rbo_p,
        displacement=_displacement(ids_a, ids_b),
    )


def run_daf(
    store_a: EmbeddingStore,
    store_b: EmbeddingStore,
    k: int = 10,
    metric: str = "cosine",
    threshold: float = DEFAULT_THRESHOLD,
    rbo_p: float = DEFAULT_RBO_P,
    manifest: DatasetManifest | None = None,
    caption_policy: CaptionPolicy = "longest",
) -> list[DiscrepancyCase]:
    """Mine discrepancy cases between two embedding stores.

    Both stores must cover the identical id set. A case is flagged when its
    primary divergence (1 - jaccard_at_k) is >= ``threshold``; flagged cases
    come back sorted by descending divergence, ties by ascending query id.
    When a manifest is given, primary captions for the query and every
    neighbor are attached to each case.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    set_a, set_b = set(store_a.ids), set(store_b.ids)
    if set_a != set_b:
        only_a = sorted(set_a - set_b)[:5]
        only_b = sorted(set_b - set_a)[:5]
        raise ValidationError(
            f"stores cover different ids; only in A: {only_a}, only in B: {only_b}"
        )
    index_a = ExactNearestNeighbors(metric=metric, k=k, exclude_self=True).fit(store_a)
    index_b = ExactNearestNeighbors(metric=metric, k=k, exclude_self=True).fit(store_b)

    records = manifest.by_id() if manifest is not None else {}
    flagged: list[DiscrepancyCase] = []
    for query_id in store_a.ids:
        nl_a = index_a.kneighbors(query_id)
        nl_b = index_b.kneighbors(query_id)
        score = compare_rankings(nl_a, nl_b, rbo_p=rbo_p)
        if score.primary >= threshold:
            captions: dict[str, str] = {}
            if records:
                for id_ in {query_id, *nl_a.ids(), *nl_b.ids()}:
                    if id_ in records:
                        captions[id_] = select_primary_caption(records[id_], caption_policy)
            flagged.append(DiscrepancyCase(
                query_id=query_id, neighbors_a=nl_a, neighbors_b=nl_b,
                divergence=score, captions=captions,
            ))
    flagged.sort(key=lambda c: (-c.divergence.primary, c.query_id))
    return flagged


def emit_gpt_prompt(
    case_batch: Sequence[DiscrepancyCase],
    caption_policy: CaptionPolicy = "longest",
    manifest: DatasetManifest | None = None,
) -> str:
    """Render a batch of cases into one analysis prompt.

    The data block lists, per case, the query's primary caption first and the
    captions of the audited model's neighbors after it, one sentence per
    line. The instruction text follows the data block verbatim. Captions are
    taken from the manifest when given, otherwise from the captions embedded
    in each case.
    """
    if not case_batch:
        raise ValidationError("prompt batch is empty")
    records = manifest.by_id() if manifest is not None else {}

    def caption_for(case: DiscrepancyCase, id_: str) -> str:
        if id_ in records:
            return select_primary_caption(records[id_], caption_policy)
        if id_ in case.captions:
            return case.captions[id_]
        raise ValidationError(f"missing caption for id {id_!r}")

    blocks = []
    for case in case_batch:
        lines = [caption_for(case, case.query_id)]
        lines.extend(caption_for(case, nid) for nid in case.neighbors_a.ids())
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n\n" + ANALYSIS_PROMPT + "\n"


def write_prompt_files(
    cases: Sequence[DiscrepancyCase],
    out_dir: str | Path,
    batch_size: int = 10,
    caption_policy: CaptionPolicy = "longest",
    manifest: DatasetManifest | None = None,
) -> list[Path]:
    """Split cases into batches and write one ``prompt_<i>.txt`` per batch."""
    if batch_size < 1:
        raise ValidationError(f"batch size must be >= 1, got {batch_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for batch_index in range(0, (len(cases) + batch_size - 1) // batch_size):
        batch = cases[batch_index * batch_size:(batch_index + 1) * batch_size]
        text = emit_gpt_prompt(batch, caption_policy=caption_policy, manifest=manifest)
        path = out_dir / f"prompt_{batch_index}.txt"
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths


def save_cases(cases: Sequence[DiscrepancyCase], path: str | Path, k: int, metric: str) -> None:
    """One JSON line per case: ids, divergence fields, both rankings, captions."""
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(json.dumps({
                "source": "daf",
                "query_id": case.query_id,
                "k": k,
                "metric": metric,
                "divergence": {
                    "jaccard_at_k": case.divergence.jaccard_at_k,
                    "rbo": case.divergence.rbo,
                    "rbo_p": case.divergence.rbo_p,
                    "displacement": case.divergence.displacement,
                },
                "neighbors_a": [[i, s] for i, s in case.neighbors_a.entries],
                "neighbors_b": [[i, s] for i, s in case.neighbors_b.entries],
                "captions": case.captions,
            }, ensure_ascii=False))
            fh.write("\n")


def load_cases(path: str | Path) -> list[DiscrepancyCase]:
    path = Path(path)
    cases: list[DiscrepancyCase] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid case line: {exc}") from exc
            if obj.get("source") != "daf":
                raise ValidationError(f"{path}:{lineno}: not a discrepancy-case line")
            div = obj["divergence"]
            metric = obj["metric"]
            cases.append(DiscrepancyCase(
                query_id=obj["query_id"],
                neighbors_a=NeighborList(obj["query_id"], metric,
                                         tuple((str(i), float(s)) for i, s in obj["neighbors_a"])),
                neighbors_b=NeighborList(obj["query_id"], metric,
                                         tuple((str(i), float(s)) for i, s in obj["neighbors_b"])),
                divergence=DivergenceScore(
                    jaccard_at_k=float(div["jaccard_at_k"]),
                    rbo=float(div["rbo"]),
                    rbo_p=float(div["rbo_p"]),
                    displacement=float(div["displacement"]),
                ),
                captions={str(k_): str(v) for k_, v in obj.get("captions", {}).items()},
            ))
    return cases
