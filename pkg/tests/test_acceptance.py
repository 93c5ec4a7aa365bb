"""Acceptance gate: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the
explicit PASS lines as well as pytest's own).
"""

import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from conftest import make_random_image, make_random_store
from oracles import brute_displacement, brute_jaccard, brute_rbo, replay_report

from glitchscope.cli import cli
from glitchscope.daf import ANALYSIS_PROMPT, compare_rankings, emit_gpt_prompt, run_daf
from glitchscope.datastore import EmbeddingStore, ImageRecord
from glitchscope.errors import ValidationError
from glitchscope.images import png_bytes
from glitchscope.labels import CaseRegistry, LabelStore, aggregate_report, make_label
from glitchscope.scorer import ScorerBinding, embed_texts, score_image_captions
from glitchscope.service import create_app
from glitchscope.simindex import NeighborList, query_topk
from glitchscope.taxonomy import FAULT_IDS
from glitchscope.tcac import (
    TcacCase,
    build_caption_pool,
    diff_rankings,
    score_captions,
    select_cases,
)
from glitchscope.transforms import TransformSpec, apply

GOLDEN_PROMPT = Path(__file__).parent / "golden" / "analysis_prompt.txt"


def report_pass(name):
    print(f"\nACCEPTANCE {name}: PASS")


# --------------------------------------------------------------------------
# Hermetic end-to-end on the bundled mini-dataset


def _pipeline(runner, manifest, workdir):
    workdir.mkdir(parents=True, exist_ok=True)
    steps = [
        ["ingest", "--manifest", manifest, "--out", str(workdir / "ingested")],
        ["embed", "--scorer", "toy:seed=1,dim=32", "--modality", "image",
         "--manifest", manifest, "--out", str(workdir / "emb_a.gseb")],
        ["embed", "--scorer", "toy:seed=2,dim=32", "--modality", "image",
         "--manifest", manifest, "--out", str(workdir / "emb_b.gseb")],
        ["embed", "--scorer", "toy:seed=1,dim=32", "--modality", "text",
         "--manifest", manifest, "--out", str(workdir / "text.gseb")],
        ["daf", "run", "--emb-a", str(workdir / "emb_a.gseb"),
         "--emb-b", str(workdir / "emb_b.gseb"), "--k", "10", "--metric", "cosine",
         "--threshold", "0.2", "--manifest", manifest,
         "--out", str(workdir / "daf_cases.jsonl")],
        ["tcac", "pool", "--manifest", manifest, "--text-emb", str(workdir / "text.gseb"),
         "--per-caption", "10", "--out", str(workdir / "pools.jsonl")],
        ["tcac", "run", "--manifest", manifest, "--pools", str(workdir / "pools.jsonl"),
         "--scorer", "toy:seed=1,dim=32", "--seed", "11", "--k", "10", "--select", "100",
         "--temperature", "100", "--daf-cases", str(workdir / "daf_cases.jsonl"),
         "--out", str(workdir / "tcac_cases.jsonl")],
        ["report", "--labels", str(workdir / "labels.jsonl"),
         "--cases", str(workdir / "daf_cases.jsonl"),
         "--cases", str(workdir / "tcac_cases.jsonl"),
         "--out", str(workdir / "report.json")],
    ]
    (workdir / "labels.jsonl").write_text("", encoding="utf-8")
    for step in steps:
        result = runner.invoke(cli, step, catch_exceptions=False)
        assert result.exit_code == 0, f"{step}: {result.output}"
    return [workdir / "daf_cases.jsonl", workdir / "tcac_cases.jsonl",
            workdir / "report.json"]


def test_hermetic_end_to_end_under_sixty_seconds(mini_manifest_path, tmp_path):
    runner = CliRunner()
    started = time.monotonic()
    first = _pipeline(runner, str(mini_manifest_path), tmp_path / "run1")
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"pipeline took {elapsed:.1f}s"

    second = _pipeline(runner, str(mini_manifest_path), tmp_path / "run2")
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), f"{a.name} differs between runs"

    tcac_lines = (tmp_path / "run1" / "tcac_cases.jsonl").read_text().splitlines()
    assert len(tcac_lines) == 32 * 6
    report_pass(f"hermetic end-to-end ({elapsed:.1f}s, byte-identical rerun)")


# --------------------------------------------------------------------------
# k-NN oracle equivalence


def _full_scan_order(store, metric):
    """Pure-python exhaustive scan; returns query -> ids best-first."""
    rows = [[float(x) for x in vec] for vec in store.vectors]
    norms = [math.sqrt(math.fsum(x * x for x in row)) for row in rows]
    order = {}
    for qi, query_id in enumerate(store.ids):
        q = rows[qi]
        scored = []
        for ri, id_ in enumerate(store.ids):
            if ri == qi:
                continue
            if metric == "cosine":
                dot = math.fsum(x * y for x, y in zip(q, rows[ri]))
                scored.append((-dot / (norms[qi] * norms[ri]), id_))
            else:
                scored.append((math.sqrt(math.fsum(
                    (x - y) ** 2 for x, y in zip(q, rows[ri]))), id_))
        scored.sort()
        order[query_id] = [id_ for _, id_ in scored]
    return order


@pytest.mark.parametrize("metric", ["cosine", "l2"])
def test_knn_matches_exhaustive_scan(metric):
    store = make_random_store(500, 12, seed=20240601)
    oracle = _full_scan_order(store, metric)
    for k in (1, 5, 10):
        for query_id in store.ids:
            got = list(query_topk(store, query_id, k=k, metric=metric).ids())
            assert got == oracle[query_id][:k], f"{metric} k={k} query={query_id}"
    report_pass(f"k-NN oracle equivalence ({metric}, n=500, k in {{1,5,10}})")


# --------------------------------------------------------------------------
# Divergence metrics vs brute force


def test_divergence_metrics_match_brute_force():
    rng = random.Random(777)
    pool = [f"item{i}" for i in range(40)]
    for _ in range(1000):
        k = rng.randint(1, 15)
        ids_a = rng.sample(pool, k)
        ids_b = rng.sample(pool, k)
        a = NeighborList("q", "cosine", tuple((i, 1.0 - 0.01 * r) for r, i in enumerate(ids_a)))
        b = NeighborList("q", "cosine", tuple((i, 1.0 - 0.01 * r) for r, i in enumerate(ids_b)))
        score = compare_rankings(a, b, rbo_p=0.9)
        assert score.jaccard_at_k == pytest.approx(brute_jaccard(ids_a, ids_b), abs=1e-12)
        assert score.rbo == pytest.approx(brute_rbo(ids_a, ids_b, 0.9), abs=1e-12)
        assert score.displacement == pytest.approx(brute_displacement(ids_a, ids_b), abs=1e-12)
        assert 0.0 <= score.jaccard_at_k <= 1.0
        assert 0.0 <= score.rbo <= 1.0 + 1e-12
        assert score.displacement >= 0.0
    report_pass("divergence metrics vs brute force (1000 pairs, bounds held)")


def test_identical_store_daf_flags_nothing():
    store = make_random_store(64, 8, seed=5)
    cases = run_daf(store, store, k=10, threshold=1e-9)
    assert cases == []
    all_cases = run_daf(store, store, k=10, threshold=0.0)
    assert all(c.divergence.primary == 0.0 for c in all_cases)
    report_pass("identical-store DAF run flags zero cases (divergence exactly 0)")


# --------------------------------------------------------------------------
# Transform properties


def test_transform_properties():
    img = make_random_image(37, 23, seed=61)

    flip = TransformSpec(kind="horizontal_flip", seed=0)
    assert apply(flip, apply(flip, img, "x"), "x").same_bytes(img)

    invert = TransformSpec(kind="random_inversion", seed=3,
                           params={"apply_probability": 1.0})
    assert apply(invert, apply(invert, img, "x"), "x").same_bytes(img)

    gray = TransformSpec(kind="grayscale", seed=0)
    once = apply(gray, img, "x")
    assert apply(gray, once, "x").same_bytes(once)

    identities = [
        TransformSpec(kind="random_rotation", seed=9, params={"max_degrees": 0.0}),
        TransformSpec(kind="random_affine", seed=9, params={
            "max_translate_fraction": 0.0, "max_degrees": 0.0,
            "scale_range": (1.0, 1.0), "max_shear_degrees": 0.0}),
        TransformSpec(kind="random_perspective", seed=9,
                      params={"distortion_scale": 0.0, "apply_probability": 1.0}),
        TransformSpec(kind="elastic", seed=9, params={"alpha": 0.0}),
    ]
    for spec in identities:
        assert apply(spec, img, "x").same_bytes(img), spec.kind

    for kind in ("random_rotation", "random_affine", "random_perspective",
                 "random_inversion", "elastic", "grayscale", "horizontal_flip"):
        spec = TransformSpec(kind=kind, seed=1234)
        png_a = png_bytes(apply(spec, img, "image-42"))
        png_b = png_bytes(apply(spec, img, "image-42"))
        assert png_a == png_b, kind
    report_pass("transform involutions, idempotence, identities, seeded reruns")


# --------------------------------------------------------------------------
# TCAC null results and counts


def test_tcac_nulls_and_counts(mini_manifest, mini_images):
    binding = ScorerBinding(kind="toy", seed=1, dim=16)
    text_store = embed_texts(binding, mini_manifest.unique_captions())
    images = dict(mini_images)

    identity = TransformSpec(kind="random_rotation", seed=0, params={"max_degrees": 0.0})
    for record in mini_manifest.records:
        pool = build_caption_pool(record, text_store, per_caption=10)
        assert len(pool.captions) <= 50, record.id
        image = images[record.id]
        logits = score_image_captions(binding, (record.id, image), pool.captions)
        before = score_captions(record.id, pool.captions, logits)
        unchanged = apply(identity, image, record.id)
        logits2 = score_image_captions(binding, (record.id, unchanged), pool.captions)
        after = score_captions(record.id, pool.captions, logits2,
                               state="transformed:random_rotation")
        assert diff_rankings(before, after, k=10).diff_count == 0, record.id

    # Constructed all-disjoint fixture: 5 source captions on orthogonal axes.
    texts, vectors = [], []
    for group in range(5):
        for i in range(10):
            texts.append(f"group{group} sentence {i}")
            vec = np.zeros(8, dtype=np.float32)
            vec[group] = 1.0 + 0.001 * i
            vectors.append(vec)
    disjoint_store = EmbeddingStore(model_id="disjoint", ids=tuple(texts),
                                    vectors=np.array(vectors))
    record = ImageRecord(id="fixture", image_path="p",
                         captions=tuple(f"group{g} sentence 0" for g in range(5)))
    assert len(build_caption_pool(record, disjoint_store, per_caption=10).captions) == 50

    rng = np.random.RandomState(8)
    for temperature in (1.0, 100.0):
        for _ in range(25):
            n = rng.randint(1, 50)
            logits = rng.uniform(-1, 1, size=n)
            captions = [f"c{i:02d}" for i in range(n)]
            ranking = score_captions("img", captions, logits, temperature_scale=temperature)
            assert abs(sum(p for _, p in ranking.entries) - 1.0) < 1e-9
            assert ranking.entries[0][0] == captions[int(np.argmax(logits))]
    report_pass("TCAC identity nulls, pool caps (<=50, ==50 disjoint), softmax properties")


# --------------------------------------------------------------------------
# Selection rule


def test_selection_matches_replay_sort():
    rng = random.Random(13)
    kinds = ["grayscale", "horizontal_flip", "random_rotation",
             "random_affine", "random_perspective", "random_inversion"]
    cases = [
        TcacCase(image_id=f"img{i:04d}", transform=rng.choice(kinds), k=10,
                 top_before=(), top_after=(), diff_count=rng.randint(0, 10))
        for i in range(900)
    ]
    selected = select_cases(cases, per_transform=100)
    by_kind = {}
    for case in selected:
        by_kind.setdefault(case.transform, []).append(case)
    for kind, group in by_kind.items():
        assert len(group) <= 100
        replay = sorted((c for c in cases if c.transform == kind),
                        key=lambda c: (-c.diff_count, c.image_id))[:100]
        assert [(c.image_id, c.diff_count) for c in group] == \
            [(c.image_id, c.diff_count) for c in replay]
        counts = [c.diff_count for c in group]
        assert counts == sorted(counts, reverse=True)
    report_pass("selection: <=100 per transform, descending diff_count, replay-sorted")


# --------------------------------------------------------------------------
# Prompt golden text


def test_prompt_instruction_text_is_golden():
    golden = GOLDEN_PROMPT.read_text(encoding="utf-8")
    assert ANALYSIS_PROMPT + "\n" == golden
    assert golden.rstrip("\n").endswith("Give the output as Python Dictionary of objects")

    from glitchscope.daf import DiscrepancyCase, DivergenceScore

    case = DiscrepancyCase(
        query_id="q",
        neighbors_a=NeighborList("q", "cosine", (("n1", 0.9),)),
        neighbors_b=NeighborList("q", "cosine", (("n2", 0.8),)),
        divergence=DivergenceScore(0.0, 0.0, 0.9, 0.0),
        captions={"q": "main", "n1": "neighbor one", "n2": "neighbor two"},
    )
    output = emit_gpt_prompt([case])
    assert output.endswith("\n\n" + golden)
    report_pass("prompt instruction text byte-identical to checked-in transcription")


# --------------------------------------------------------------------------
# Taxonomy via the API


def test_taxonomy_endpoint_and_label_validation(tmp_path):
    registry = CaseRegistry(tcac_cases=[
        TcacCase(image_id="img", transform="grayscale", k=10,
                 top_before=(), top_after=(), diff_count=1)])
    store = LabelStore(tmp_path / "labels.jsonl")
    client = TestClient(create_app(registry, store))

    taxonomy = client.get("/api/taxonomy").json()
    assert len(taxonomy) == 14
    assert sum(1 for f in taxonomy if f["novel"]) == 4
    names = [f["name"] for f in taxonomy]
    assert "Action vs. Stillness confusion" in names
    assert "Hallucination of Water-like Features" in names
    assert "Misattribution of Geographic Context" in names
    assert ("Failure to identify the direction of movement or positioning of "
            "objects in the image") in names

    resp = client.post("/api/cases/tcac/img@grayscale/labels", json={
        "fault_ids": ["not-a-real-slug"], "note": "", "annotator": "x"})
    assert resp.status_code == 400
    with pytest.raises(ValidationError):
        make_label("tcac", "img@grayscale", ["not-a-real-slug"], "", "x")
    report_pass("taxonomy: 14 entries, 4 novel, unknown slugs rejected")


# --------------------------------------------------------------------------
# Label-log replay


def test_label_log_replay_after_200_randomized_operations(tmp_path):
    registry = CaseRegistry(tcac_cases=[
        TcacCase(image_id=f"img{i:02d}", transform=kind, k=10,
                 top_before=(), top_after=(), diff_count=i)
        for i in range(12) for kind in ("grayscale", "elastic", "random_rotation")
    ])
    path = tmp_path / "labels.jsonl"
    store = LabelStore(path)
    rng = random.Random(2024)
    refs = registry.refs()
    faults = sorted(FAULT_IDS)
    annotators = ["alice", "bob", "carol", "dan"]
    for step in range(200):
        ref = rng.choice(refs)  # repeats guarantee supersessions
        store.record_label(
            make_label(ref.source, ref.case_id, rng.sample(faults, rng.randint(0, 4)),
                       f"step {step}", rng.choice(annotators), timestamp=step),
            registry)
    live = aggregate_report(store.labels(), registry)
    replayed_store = LabelStore(path)
    from_disk = aggregate_report(replayed_store.labels(), registry)
    assert live == from_disk

    oracle = replay_report(
        path,
        {(r.source, r.case_id) for r in refs},
        {(r.source, r.case_id): registry.transform_of(r) for r in refs},
    )
    assert live.per_fault == oracle["per_fault"]
    assert live.per_transform == oracle["per_transform"]
    assert live.per_source == oracle["per_source"]
    assert live.labeled_cases == oracle["labeled_cases"]
    assert live.unlabeled_cases == oracle["unlabeled_cases"]
    assert live.disagreements == oracle["disagreements"]
    assert live.label_records == oracle["label_records"] == 200
    report_pass("label-log replay equals live aggregation after 200 operations")
