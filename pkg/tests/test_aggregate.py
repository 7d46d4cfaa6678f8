from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathdecode.aggregate import (
    AggregationConfig,
    HashEmbedder,
    cosine,
    greedy_cluster,
    majority_vote,
    maxpath,
    representative_variant,
    select_answer,
)


def test_cosine_identities():
    v = np.array([0.3, 0.4, 0.5])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine(np.array([1.0, 1.0, 0.0]),
                  np.array([1.0, 0.0, 0.0])) == pytest.approx(1 / math.sqrt(2))


def test_cosine_zero_vector_is_zero():
    assert cosine(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0


def test_cosine_dimension_mismatch():
    with pytest.raises(ValueError):
        cosine(np.zeros(3), np.zeros(4))


class FixedEmbedder:
    """Unit vectors with hand-set pairwise cosines."""

    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    def embed(self, text):
        return self.table[text]


@pytest.fixture
def abc_embedder():
    # cos(A, A') = 0.95, cos(A, B) = 0.3
    return FixedEmbedder({
        "A": [1.0, 0.0],
        "A'": [0.95, math.sqrt(1 - 0.95 ** 2)],
        "B": [0.3, math.sqrt(1 - 0.3 ** 2)],
    })


def test_greedy_cluster_joins_by_threshold(abc_embedder):
    cfg = AggregationConfig(tau=0.8)
    clusters = greedy_cluster(["A", "A'", "B"], [0.2, 0.3, 0.4], cfg, abc_embedder)
    assert [c.representative for c in clusters] == ["A", "B"]
    assert clusters[0].cumulative == pytest.approx(0.5)
    assert clusters[1].cumulative == pytest.approx(0.4)
    assert [i for _, _, i in clusters[0].members] == [0, 1]


def test_greedy_cluster_single_answer(abc_embedder):
    clusters = greedy_cluster(["A"], [0.9], AggregationConfig(), abc_embedder)
    assert len(clusters) == 1
    assert clusters[0].representative == "A"


def test_greedy_cluster_tau_one_separates_distinct_hashes():
    embedder = HashEmbedder()
    answers = ["paris", "london", "rome", "madrid"]
    clusters = greedy_cluster(answers, [0.1] * 4, AggregationConfig(tau=1.0), embedder)
    assert len(clusters) == 4


def test_greedy_cluster_representative_is_immutable(abc_embedder):
    cfg = AggregationConfig(tau=0.8)
    clusters = greedy_cluster(["A", "A'"], [0.1, 99.0], cfg, abc_embedder)
    assert clusters[0].representative == "A"  # not replaced by the stronger member


def test_select_answer_max_cumulative(abc_embedder):
    cfg = AggregationConfig(tau=0.8)
    clusters = greedy_cluster(["A", "A'", "B"], [0.2, 0.3, 0.4], cfg, abc_embedder)
    assert select_answer(clusters) == "A"


def test_select_answer_tie_goes_to_earliest(abc_embedder):
    clusters = greedy_cluster(["A", "B"], [0.4, 0.4], AggregationConfig(), abc_embedder)
    assert select_answer(clusters) == "A"
    only = greedy_cluster(["B"], [0.1], AggregationConfig(), abc_embedder)
    assert select_answer(only) == "B"


def test_maxpath():
    assert maxpath(["a", "b", "c"], [0.2, 0.9, 0.1]) == "b"
    assert maxpath(["a", "b"], [0.5, 0.5]) == "a"
    assert maxpath(["solo"], [0.0]) == "solo"


def test_majority_vote():
    assert majority_vote(["24", "24", "25"]) == "24"
    assert majority_vote(["x", "y", "z"]) == "x"
    assert majority_vote(["a", "A"]) == "a"
    assert majority_vote(["  two  words ", "two words", "other"]) == "  two  words "


def test_representative_variants(abc_embedder):
    cfg = AggregationConfig(tau=0.8)
    singleton = greedy_cluster(["B"], [0.5], cfg, abc_embedder)[0]
    for mode in ("first", "centroid", "max-conf"):
        assert representative_variant(singleton, mode, abc_embedder) == "B"
    pair = greedy_cluster(["A", "A'"], [0.1, 0.9], cfg, abc_embedder)[0]
    assert representative_variant(pair, "max-conf", abc_embedder) == "A'"
    assert representative_variant(pair, "first", abc_embedder) == "A"


def test_representative_centroid_hand_computed():
    emb = FixedEmbedder({
        "p": [1.0, 0.0],
        "q": [math.cos(0.2), math.sin(0.2)],
        "r": [math.cos(1.2), math.sin(1.2)],
    })
    # mean direction sits between p and q; q is nearest to it
    cluster = greedy_cluster(["p", "q", "r"], [1.0, 1.0, 1.0],
                             AggregationConfig(tau=0.01), emb)[0]
    assert len(cluster.members) == 3
    assert representative_variant(cluster, "centroid", emb) == "q"


def test_clustering_replay_determinism():
    embedder = HashEmbedder()
    rng = random.Random(3)
    answers = [rng.choice(["a", "b", "a b", "c"]) for _ in range(10)]
    confs = [rng.random() for _ in range(10)]
    first = greedy_cluster(answers, confs, AggregationConfig(), embedder)
    second = greedy_cluster(answers, confs, AggregationConfig(), embedder)
    assert [(c.representative, c.members) for c in first] == \
           [(c.representative, c.members) for c in second]


@given(st.lists(st.tuples(st.sampled_from(["x", "y", "z", "same words"]),
                          st.integers(min_value=0, max_value=2 ** 20)),
                min_size=1, max_size=12))
def test_cluster_mass_conservation_and_threshold(items):
    embedder = HashEmbedder()
    answers = [a for a, _ in items]
    confs = [c / 2 ** 20 for _, c in items]  # dyadic: all partial sums exact
    cfg = AggregationConfig(tau=0.8)
    clusters = greedy_cluster(answers, confs, cfg, embedder)
    assert sum(len(c.members) for c in clusters) == len(answers)
    assert math.fsum(c.cumulative for c in clusters) == math.fsum(confs)
    for c in clusters:
        assert all(sim >= cfg.tau for sim in c.member_similarities)


def test_unreachable_tau_reduces_to_maxpath():
    embedder = HashEmbedder()
    answers = ["alpha", "beta", "gamma", "delta"]
    confs = [0.1, 0.7, 0.3, 0.2]
    clusters = greedy_cluster(answers, confs, AggregationConfig(tau=0.999), embedder)
    assert select_answer(clusters) == maxpath(answers, confs)


def test_confidence_scaling_never_changes_selection():
    embedder = HashEmbedder()
    rng = random.Random(11)
    pool = ["a", "b", "c", "a b", "b c", "longer answer here"]
    for _ in range(50):
        n = rng.randint(1, 10)
        answers = [rng.choice(pool) for _ in range(n)]
        confs = [rng.random() for _ in range(n)]
        base = select_answer(greedy_cluster(answers, confs, AggregationConfig(), embedder))
        for c in (0.5, 3.0, 100.0):
            scaled = select_answer(greedy_cluster(answers, [v * c for v in confs],
                                                  AggregationConfig(), embedder))
            assert scaled == base


def test_hash_embedder_properties():
    embedder = HashEmbedder()
    v1 = embedder.embed("The Answer")
    v2 = embedder.embed("the answer")
    assert np.allclose(v1, v2)  # casefolded bag of tokens
    assert np.linalg.norm(v1) == pytest.approx(1.0)
    assert not np.any(embedder.embed(""))
    assert cosine(embedder.embed("paris"), embedder.embed("london")) < 1.0


def test_aggregation_config_validation():
    with pytest.raises(ValueError):
        AggregationConfig(tau=0.0).validate()
    with pytest.raises(ValueError):
        AggregationConfig(strategy="average").validate()
    with pytest.raises(ValueError):
        AggregationConfig(representative="median").validate()
