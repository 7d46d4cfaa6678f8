from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from pathdecode.lm import ToyLm
from pathdecode.oracles import lcs_length_bruteforce, rightmost_terminal
from pathdecode.scoring import (
    MissingLogitsError,
    ReasoningSplit,
    binary_token_span,
    cot_span_confidence,
    gcot_confidence,
    lcs_align,
    length_factor,
    normalize_for_lcs,
    numeric_token_span,
    spanalign_confidence,
    split_answer,
    variant_confidence,
)

from conftest import make_path


SPLIT_SCRIPT = """\
Q: t\tthree:0.9,four:0.05
Q: t three\ttimes:0.8,plus:0.1
Q: t three times\teight:0.7,two:0.2
Q: t three times eight\t</s>:0.9,more:0.05
Q: t three times eight So the answer is:\t24:0.8,25:0.1
Q: t three times eight So the answer is: 24\t</s>:1.0
Q: t three times eight Final answer:\t24:0.7,25:0.2
Q: t three times eight Final answer: 24\t</s>:1.0
Q: t three times eight Stop here:\t</s>:0.9,24:0.05
"""


@pytest.fixture
def split_lm():
    return ToyLm.from_text(SPLIT_SCRIPT)


def _rollout(lm, max_tokens=8):
    from pathdecode.lm import greedy_rollout

    return greedy_rollout(lm, lm.encode("Q: t"), max_tokens)


def test_split_answer_reads_template_continuation(split_lm):
    path = _rollout(split_lm)
    split = split_answer(split_lm.encode("Q: t"), path, "So the answer is:", split_lm)
    assert [t.text for t in split.gen2.tokens] == ["24"]
    assert split.gen2.top2_gaps == pytest.approx([0.7])
    assert split.gen1 is path


def test_split_answer_alternate_template_is_a_different_key(split_lm):
    path = _rollout(split_lm)
    split = split_answer(split_lm.encode("Q: t"), path, "Final answer:", split_lm)
    assert [t.text for t in split.gen2.tokens] == ["24"]
    assert split.gen2.top2_gaps == pytest.approx([0.5])


def test_split_answer_immediate_eos_scores_zero(split_lm):
    path = _rollout(split_lm)
    split = split_answer(split_lm.encode("Q: t"), path, "Stop here:", split_lm)
    assert split.gen2.tokens == []
    assert gcot_confidence(split, [len(path.tokens)]).value == 0.0


def test_length_factor_examples():
    assert length_factor(9, [9, 99]) == pytest.approx(0.5, abs=1e-12)
    assert length_factor(99, [9, 99]) == 1.0
    assert length_factor(7, [7]) == 1.0
    assert length_factor(0, [0, 0]) == 1.0  # all-empty cohort ranks purely by gap


def test_length_factor_requires_membership():
    with pytest.raises(ValueError):
        length_factor(3, [9, 99])


def test_gcot_confidence_single_path():
    split = ReasoningSplit(make_path(["a", "b"]), make_path(["24", "x"], gaps=[0.8, 0.4]), "t")
    score = gcot_confidence(split, [2])
    assert score.value == pytest.approx(0.6)
    assert score.components == (1.0, pytest.approx(0.6))


def test_gcot_confidence_zero_gaps():
    split = ReasoningSplit(make_path(["a"]), make_path(["x", "y"], gaps=[0.0, 0.0]), "t")
    assert gcot_confidence(split, [1]).value == 0.0


def test_gcot_confidence_combines_length_and_gap():
    gen1 = make_path([f"w{i}" for i in range(9)])
    split = ReasoningSplit(gen1, make_path(["24", "x"], gaps=[0.8, 0.4]), "t")
    assert gcot_confidence(split, [9, 99]).value == pytest.approx(0.3, abs=1e-12)


def test_normalize_for_lcs_drops_pure_punctuation():
    normed, ptr = normalize_for_lcs(["The", "answer", "is", "Paris", "."])
    assert normed == ["the", "answer", "is", "paris"]
    assert ptr == [0, 1, 2, 3]


def test_normalize_for_lcs_all_punctuation():
    assert normalize_for_lcs([".", ",", "?!"]) == ([], [])


def test_normalize_for_lcs_keeps_mixed_tokens():
    normed, _ = normalize_for_lcs(["U.S."])
    assert normed == ["u.s."]


@given(st.lists(st.sampled_from(["The", "cat", ".", ",", "U.S.", "24", "?!"]), max_size=10))
def test_normalize_for_lcs_idempotent(tokens):
    normed, _ = normalize_for_lcs(tokens)
    again, ptr = normalize_for_lcs(normed)
    assert again == normed
    assert ptr == list(range(len(normed)))


def test_lcs_align_basic():
    align = lcs_align(["the", "answer", "is", "paris"], ["paris"])
    assert align.pairs == [(3, 0)]
    assert align.length == 1
    assert align.terminal == (3, 0)


def test_lcs_align_disjoint():
    align = lcs_align(["a", "b"], ["c", "d"])
    assert align.length == 0
    assert align.terminal is None


def test_lcs_align_rightmost_tie():
    align = lcs_align(["a", "b", "a"], ["a"])
    assert align.terminal == (2, 0)


def test_lcs_align_matches_bruteforce_small():
    import random as _random

    rng = _random.Random(5)
    for _ in range(150):
        a = [rng.choice("abcd") for _ in range(rng.randint(0, 7))]
        b = [rng.choice("abcd") for _ in range(rng.randint(0, 7))]
        align = lcs_align(a, b)
        assert align.length == lcs_length_bruteforce(a, b)
        assert align.terminal == rightmost_terminal(a, b)
        # pairs strictly increasing in both coordinates
        for (i1, j1), (i2, j2) in zip(align.pairs, align.pairs[1:]):
            assert i1 < i2 and j1 < j2


def test_spanalign_last_single_pair():
    gen1 = make_path(["the", "answer", "paris"], gaps=[0.1, 0.2, 0.6])
    gen2 = make_path(["paris"], gaps=[0.8])
    score = spanalign_confidence(ReasoningSplit(gen1, gen2, "t"), "last")
    assert score.value == pytest.approx(1.4)
    assert score.method == "spanalign"


def test_spanalign_no_alignment_scores_zero():
    split = ReasoningSplit(make_path(["aa"]), make_path(["bb"]), "t")
    assert spanalign_confidence(split, "last").value == 0.0


def test_spanalign_mean_averages_all_pairs():
    # aligned pairs: (it, it) gap-sum 0.5+0.9=1.4 and (rains, rains) 0.2+0.4=0.6
    gen1 = make_path(["it", "x", "rains"], gaps=[0.5, 0.3, 0.2])
    gen2 = make_path(["it", "rains"], gaps=[0.9, 0.4])
    score = spanalign_confidence(ReasoningSplit(gen1, gen2, "t"), "mean")
    assert score.value == pytest.approx((1.4 + 0.6) / 2)
    assert score.method == "spanalign-mean"


def test_spanalign_last_equals_mean_when_single_pair():
    gen1 = make_path(["x", "paris"], gaps=[0.3, 0.55])
    gen2 = make_path(["paris"], gaps=[0.25])
    split = ReasoningSplit(gen1, gen2, "t")
    last = spanalign_confidence(split, "last").value
    mean = spanalign_confidence(split, "mean").value
    assert last == mean


def test_spanalign_terminal_run_sums_consecutive_pairs():
    # alignment: (a b) as a consecutive run at the end; stray pair (x) earlier
    gen1 = make_path(["x", "q", "a", "b"], gaps=[0.1, 0.0, 0.2, 0.3])
    gen2 = make_path(["x", "a", "b"], gaps=[0.4, 0.5, 0.6])
    score = spanalign_confidence(ReasoningSplit(gen1, gen2, "t"), "last")
    # L = 3; terminal run covers (a,a) and (b,b): (0.2+0.5) + (0.3+0.6) = 1.6
    assert score.value == pytest.approx(1.6 / 3)


def test_spanalign_reads_gaps_through_punctuation_backpointers():
    gen1 = make_path(["paris", "."], gaps=[0.6, 0.0])
    gen2 = make_path([",", "paris"], gaps=[0.0, 0.8])
    score = spanalign_confidence(ReasoningSplit(gen1, gen2, "t"), "last")
    assert score.value == pytest.approx(1.4)


def test_entropy_variant_extremes():
    one_hot = make_path(["x"], ents=[0.0])
    uniform = make_path(["x"], ents=[1.0])
    assert variant_confidence(ReasoningSplit(make_path(["r"]), one_hot, "t"), "entropy").value == 1.0
    assert variant_confidence(ReasoningSplit(make_path(["r"]), uniform, "t"), "entropy").value == 0.0


def test_logit_variant_mean():
    gen2 = make_path(["x", "y"], lgaps=[2.0, 1.0])
    score = variant_confidence(ReasoningSplit(make_path(["r"]), gen2, "t"), "logit")
    assert score.value == pytest.approx(1.5)


def test_logit_variant_requires_raw_scores():
    gen2 = make_path(["x", "y"])  # no raw scores recorded
    with pytest.raises(MissingLogitsError):
        variant_confidence(ReasoningSplit(make_path(["r"]), gen2, "t"), "logit")


def test_every_method_scores_zero_on_empty_answer():
    empty = make_path([])
    split = ReasoningSplit(make_path(["r", "s"]), empty, "t")
    assert gcot_confidence(split, [2]).value == 0.0
    assert spanalign_confidence(split, "last").value == 0.0
    assert spanalign_confidence(split, "mean").value == 0.0
    assert variant_confidence(split, "entropy").value == 0.0
    assert variant_confidence(split, "logit").value == 0.0


def test_cot_span_confidence_examples():
    path = make_path(["a", "b", "c"], gaps=[0.9, 0.7, 0.8])
    assert cot_span_confidence(path, (1, 2)).value == pytest.approx(0.7)
    assert cot_span_confidence(path, (0, 3)).value == pytest.approx(0.8)
    single = make_path(["x"], gaps=[0.84])
    assert cot_span_confidence(single, (0, 1)).value == pytest.approx(0.84)


def test_cot_span_confidence_flags_missing_span():
    score = cot_span_confidence(make_path(["a"]), None)
    assert score.value == 0.0
    assert score.flagged is True


def test_cot_span_confidence_validates_bounds():
    with pytest.raises(ValueError):
        cot_span_confidence(make_path(["a"]), (0, 2))


def test_numeric_token_span():
    path = make_path(["3", "times", "8", "=", "24."])
    span = numeric_token_span(path.tokens)
    assert (span.start, span.end, span.text) == (4, 5, "24")
    assert numeric_token_span(make_path(["no", "digits"]).tokens) is None
    comma = numeric_token_span(make_path(["costs", "1,234.5", "total"]).tokens)
    assert comma.text == "1234.5"


def test_binary_token_span():
    path = make_path(["Yes", "and", "no."])
    span = binary_token_span(path.tokens)
    assert (span.start, span.text) == (2, "no")
    assert binary_token_span(make_path(["maybe"]).tokens) is None
