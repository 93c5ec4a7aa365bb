import numpy as np
import pytest

from oracles import naive_topk

from glitchscope.daf import DiscrepancyCase, DivergenceScore
from glitchscope.datastore import EmbeddingStore, ImageRecord
from glitchscope.errors import ValidationError
from glitchscope.scorer import ScorerBinding, ToyTextEmbedder, embed_texts, score_image_captions
from glitchscope.simindex import NeighborList
from glitchscope.tcac import (
    CaptionRanking,
    TcacCase,
    annotate_cases,
    build_caption_pool,
    cross_check_daf,
    diff_rankings,
    global_caption_pool,
    load_cases,
    load_pools,
    save_cases,
    save_pools,
    score_captions,
    select_cases,
)
from glitchscope.transforms import TransformSpec, apply


def store_from_texts(texts, seed=1, dim=16):
    return embed_texts(ScorerBinding(kind="toy", seed=seed, dim=dim), texts)


def orthogonal_text_store(groups, per_group):
    """A store where each group's captions occupy a dedicated axis, making
    cross-group similarity exactly zero."""
    texts, vectors = [], []
    dim = max(groups, 8)
    for g in range(groups):
        for i in range(per_group):
            texts.append(f"group{g} caption {i}")
            vec = np.zeros(dim, dtype=np.float32)
            vec[g] = 1.0
            vec[g] += 0.001 * i  # distinct norms keep ordering deterministic
            vectors.append(vec)
    return EmbeddingStore(model_id="ortho", ids=tuple(texts), vectors=np.array(vectors))


class TestBuildCaptionPool:
    def test_disjoint_neighborhoods_reach_fifty(self):
        store = orthogonal_text_store(groups=5, per_group=12)
        captions = tuple(f"group{g} caption 0" for g in range(5))
        record = ImageRecord(id="img", image_path="p", captions=captions)
        pool = build_caption_pool(record, store, per_caption=10)
        assert len(pool.captions) == 50

    def test_identical_captions_collapse(self):
        texts = [f"caption number {i}" for i in range(12)]
        store = store_from_texts(texts)
        record = ImageRecord(id="img", image_path="p",
                             captions=(texts[0],) * 5)
        pool = build_caption_pool(record, store, per_caption=10)
        assert len(pool.captions) == 10

    def test_self_caption_is_rank_one(self):
        texts = [f"unique sentence {i} about scenery" for i in range(8)]
        store = store_from_texts(texts)
        record = ImageRecord(id="img", image_path="p", captions=(texts[3],))
        pool = build_caption_pool(record, store, per_caption=4)
        assert pool.captions[0] == texts[3]
        assert pool.provenance[texts[3]][0] == (texts[3], 1)

    def test_pool_size_bounded(self, mini_manifest):
        store = store_from_texts(mini_manifest.unique_captions())
        for record in mini_manifest.records[:8]:
            pool = build_caption_pool(record, store, per_caption=10)
            assert len(pool.captions) <= len(record.captions) * 10

    def test_matches_brute_force_recomputation(self, mini_manifest):
        store = store_from_texts(mini_manifest.unique_captions())
        for record in mini_manifest.records[:6]:
            pool = build_caption_pool(record, store, per_caption=7)
            expected, seen = [], set()
            for source in record.captions:
                for caption in naive_topk(store, source, 7, "cosine", exclude_self=False):
                    if caption not in seen:
                        seen.add(caption)
                        expected.append(caption)
            assert list(pool.captions) == expected

    def test_missing_caption_rejected(self):
        store = store_from_texts(["present caption"])
        record = ImageRecord(id="img", image_path="p", captions=("absent caption",))
        with pytest.raises(ValidationError, match="missing"):
            build_caption_pool(record, store)

    def test_deterministic(self, mini_manifest):
        store = store_from_texts(mini_manifest.unique_captions())
        record = mini_manifest.records[0]
        assert build_caption_pool(record, store) == build_caption_pool(record, store)

    def test_global_scope_uses_whole_corpus(self, mini_manifest):
        pool = global_caption_pool(mini_manifest, "mini_000")
        assert list(pool.captions) == mini_manifest.unique_captions()


class TestScoreCaptions:
    def test_equal_logits_give_uniform_probabilities(self):
        ranking = score_captions("img", ["a", "b", "c", "d"], [2.0, 2.0, 2.0, 2.0])
        for _, p in ranking.entries:
            assert p == pytest.approx(0.25, abs=1e-12)

    def test_single_caption_probability_one(self):
        ranking = score_captions("img", ["only"], [0.3])
        assert ranking.entries == (("only", 1.0),)

    def test_worked_sigmoid_example(self):
        ranking = score_captions("img", ["low", "high"], [0.1, 0.2], temperature_scale=100.0)
        by_caption = dict(ranking.entries)
        assert by_caption["high"] == pytest.approx(0.9999546, abs=1e-7)
        assert by_caption["low"] == pytest.approx(4.54e-5, abs=1e-7)

    def test_probabilities_sum_to_one(self):
        rng = np.random.RandomState(0)
        for _ in range(50):
            n = rng.randint(1, 60)
            logits = rng.uniform(-1, 1, size=n)
            ranking = score_captions("img", [f"c{i}" for i in range(n)], logits)
            assert abs(sum(p for _, p in ranking.entries) - 1.0) < 1e-9

    @pytest.mark.parametrize("temperature", [1.0, 100.0])
    def test_ordering_preserves_logit_argmax(self, temperature):
        rng = np.random.RandomState(1)
        for _ in range(30):
            logits = rng.uniform(-1, 1, size=12)
            captions = [f"c{i}" for i in range(12)]
            ranking = score_captions("img", captions, logits, temperature_scale=temperature)
            assert ranking.entries[0][0] == captions[int(np.argmax(logits))]
            # full ordering matches descending logits (all values distinct)
            expected = [captions[i] for i in np.argsort(-logits)]
            assert [c for c, _ in ranking.entries] == expected

    def test_ties_break_by_caption_text(self):
        ranking = score_captions("img", ["zebra", "apple"], [0.5, 0.5])
        assert [c for c, _ in ranking.entries] == ["apple", "zebra"]

    def test_non_finite_logit_rejected(self):
        with pytest.raises(ValidationError, match="finite"):
            score_captions("img", ["a"], [float("nan")])

    def test_non_positive_temperature_rejected(self):
        with pytest.raises(ValidationError, match="temperature"):
            score_captions("img", ["a"], [0.1], temperature_scale=0.0)

    def test_state_carries_transform_kind(self):
        ranking = score_captions("img", ["a"], [0.1], state="transformed:grayscale")
        assert ranking.transform_kind == "grayscale"


def ranking(image_id, ordered_captions, state="original"):
    n = len(ordered_captions)
    entries = tuple((c, (n - i) / (n * (n + 1) / 2)) for i, c in enumerate(ordered_captions))
    return CaptionRanking(image_id=image_id, state=state, entries=entries)


class TestDiffRankings:
    def test_identical_rankings_diff_zero(self):
        r = ranking("img", [f"c{i}" for i in range(15)])
        case = diff_rankings(r, r, k=10)
        assert case.diff_count == 0

    def test_disjoint_top_ten(self):
        caps = [f"c{i}" for i in range(20)]
        before = ranking("img", caps)
        after = ranking("img", caps[10:] + caps[:10], state="transformed:grayscale")
        case = diff_rankings(before, after, k=10)
        assert case.diff_count == 10
        assert case.transform == "grayscale"

    def test_shifted_window_diff_five(self):
        caps = [f"c{i}" for i in range(1, 16)]
        before = ranking("img", caps)  # top10 = c1..c10
        after = ranking("img", caps[5:] + caps[:5], state="transformed:elastic")
        case = diff_rankings(before, after, k=10)  # top10 = c6..c15
        assert case.diff_count == 5

    def test_diff_symmetry(self):
        caps = [f"c{i}" for i in range(25)]
        rng = np.random.RandomState(3)
        for _ in range(20):
            before = ranking("img", list(rng.permutation(caps)))
            after = ranking("img", list(rng.permutation(caps)))
            case = diff_rankings(before, after, k=10)
            before_set = {c for c, _ in case.top_before}
            after_set = {c for c, _ in case.top_after}
            assert case.diff_count == len(before_set - after_set) == len(after_set - before_set)

    def test_pool_mismatch_rejected(self):
        before = ranking("img", ["a", "b"])
        after = ranking("img", ["a", "c"])
        with pytest.raises(ValidationError, match="pools differ"):
            diff_rankings(before, after)

    def test_image_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="image mismatch"):
            diff_rankings(ranking("x", ["a"]), ranking("y", ["a"]))

    def test_truncates_to_pool_size(self):
        before = ranking("img", ["a", "b", "c"])
        after = ranking("img", ["c", "b", "a"], state="transformed:elastic")
        case = diff_rankings(before, after, k=10)
        assert len(case.top_before) == len(case.top_after) == 3
        assert case.diff_count == 0


class TestSelectCases:
    def make_case(self, image_id, transform, diff_count):
        return TcacCase(image_id=image_id, transform=transform, k=10,
                        top_before=(), top_after=(), diff_count=diff_count)

    def test_sorts_descending_by_diff(self):
        cases = [self.make_case("a", "grayscale", 2),
                 self.make_case("b", "grayscale", 9),
                 self.make_case("c", "grayscale", 5)]
        assert [c.diff_count for c in select_cases(cases)] == [9, 5, 2]

    def test_ties_break_by_image_id(self):
        cases = [self.make_case("z", "grayscale", 5), self.make_case("a", "grayscale", 5)]
        assert [c.image_id for c in select_cases(cases)] == ["a", "z"]

    def test_truncates_per_transform(self):
        cases = [self.make_case(f"i{n:03d}", "grayscale", n) for n in range(150)]
        cases += [self.make_case(f"i{n:03d}", "elastic", n) for n in range(30)]
        selected = select_cases(cases, per_transform=100)
        assert len(selected) == 130
        grayscale = [c for c in selected if c.transform == "grayscale"]
        assert len(grayscale) == 100
        assert grayscale[0].diff_count == 149

    def test_fewer_than_limit_returns_all_sorted(self):
        cases = [self.make_case("a", "g", 1), self.make_case("b", "g", 3)]
        selected = select_cases(cases, per_transform=100)
        assert [c.diff_count for c in selected] == [3, 1]


class TestCrossCheckDaf:
    def daf_case(self, query_id):
        nl = NeighborList(query_id, "cosine", (("other", 0.5),))
        return DiscrepancyCase(
            query_id=query_id, neighbors_a=nl, neighbors_b=nl,
            divergence=DivergenceScore(jaccard_at_k=0.2, rbo=0.3, rbo_p=0.9, displacement=1.0),
        )

    def test_match_carries_divergence(self):
        case = TcacCase("img1", "grayscale", 10, (), (), 4)
        annotation = cross_check_daf(case, [self.daf_case("img1")])
        assert annotation.found
        assert annotation.divergence.jaccard_at_k == 0.2
        assert case.daf is annotation
        assert "DAF divergence" in annotation.describe()

    def test_no_finding(self):
        case = TcacCase("img1", "grayscale", 10, (), (), 4)
        annotation = cross_check_daf(case, [self.daf_case("other")])
        assert not annotation.found
        assert annotation.describe() == "no DAF finding"

    def test_empty_daf_list(self):
        cases = [TcacCase(f"i{n}", "grayscale", 10, (), (), n) for n in range(3)]
        annotate_cases(cases, [])
        assert all(c.daf is not None and not c.daf.found for c in cases)


class TestEndToEndNulls:
    def test_identity_transform_yields_zero_diff(self, mini_manifest, mini_images):
        binding = ScorerBinding(kind="toy", seed=1, dim=16)
        text_store = store_from_texts(mini_manifest.unique_captions(), seed=1)
        identity = TransformSpec(kind="random_rotation", seed=0,
                                 params={"max_degrees": 0.0})
        images = dict(mini_images)
        for record in mini_manifest.records[:5]:
            pool = build_caption_pool(record, text_store, per_caption=5)
            image = images[record.id]
            logits = score_image_captions(binding, (record.id, image), pool.captions)
            before = score_captions(record.id, pool.captions, logits)
            same = apply(identity, image, record.id)
            logits_after = score_image_captions(binding, (record.id, same), pool.captions)
            after = score_captions(record.id, pool.captions, logits_after,
                                   state="transformed:random_rotation")
            assert diff_rankings(before, after, k=10).diff_count == 0


def test_pool_file_round_trip(tmp_path, mini_manifest):
    store = store_from_texts(mini_manifest.unique_captions())
    pools = [build_caption_pool(r, store, per_caption=5) for r in mini_manifest.records[:4]]
    path = tmp_path / "pools.jsonl"
    save_pools(pools, path)
    again = load_pools(path)
    assert set(again) == {p.image_id for p in pools}
    for pool in pools:
        assert again[pool.image_id] == pool


def test_case_file_round_trip(tmp_path):
    case = TcacCase(
        image_id="img", transform="grayscale", k=10,
        top_before=(("a", 0.6), ("b", 0.4)), top_after=(("b", 0.7), ("a", 0.3)),
        diff_count=0,
    )
    annotate_cases([case], [])
    path = tmp_path / "cases.jsonl"
    save_cases([case], path)
    again = load_cases(path)
    assert again[0].image_id == "img"
    assert again[0].top_before == case.top_before
    assert again[0].daf is None  # "no finding" serializes as null
    assert again[0].case_id == "img@grayscale"
