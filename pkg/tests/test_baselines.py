from __future__ import annotations

import random

import pytest

from pathdecode.baselines import (
    SamplerConfig,
    beam_search,
    cot_decoding,
    greedy_decode,
    greedy_path,
    self_consistency,
    temperature_sample,
    topk_sample,
    topp_sample,
)
from pathdecode.harness import extract_numeric_answer
from pathdecode.lm import ToyLm
from pathdecode.scenarios import sampling_scenario, span_rank4_scenario
from pathdecode.scoring import numeric_token_span


@pytest.fixture
def sampling_lm():
    table, _ = sampling_scenario()
    return ToyLm(table)


def test_greedy_decode_verbatim_chain(tiny_lm):
    assert greedy_decode(tiny_lm.encode("Q:"), tiny_lm) == "A is good"


def test_greedy_decode_truncation_flagged(tiny_lm):
    path = greedy_path(tiny_lm.encode("Q:"), tiny_lm, max_tokens=2)
    assert path.finished is False
    assert path.texts() == ("A", "is")


def test_near_zero_temperature_collapses_to_greedy(tiny_lm):
    cfg = SamplerConfig(temperature=0.01)
    rng = random.Random(123)
    greedy = greedy_decode(tiny_lm.encode("Q:"), tiny_lm)
    for _ in range(100):
        assert temperature_sample(tiny_lm.encode("Q:"), cfg, tiny_lm, rng) == greedy


def test_topk_one_is_greedy(tiny_lm):
    cfg = SamplerConfig(top_k=1)
    rng = random.Random(7)
    assert topk_sample(tiny_lm.encode("Q:"), cfg, tiny_lm, rng) == "A is good"


def test_fixed_seed_reproduces_sample_sequence(sampling_lm):
    q = sampling_lm.encode("Q: s")
    cfg = SamplerConfig()
    run1 = [temperature_sample(q, cfg, sampling_lm, random.Random(42)) for _ in range(3)]
    run2 = [temperature_sample(q, cfg, sampling_lm, random.Random(42)) for _ in range(3)]
    assert run1 == run2


def test_topp_restricts_to_nucleus(sampling_lm):
    q = sampling_lm.encode("Q: s")
    cfg = SamplerConfig(top_p=0.5)  # only the rank-1 token survives at each step
    rng = random.Random(1)
    assert topp_sample(q, cfg, sampling_lm, rng) == "go 24"


BEAM_TRAP = """\
Q: t\tA:0.55,B:0.45
Q: t A\tC:0.5,X:0.5
Q: t B\tE:0.95
Q: t A C\t</s>:1.0
Q: t B E\t</s>:1.0
"""


def test_beam_width_one_is_greedy(tiny_lm):
    cfg = SamplerConfig(beam_width=1)
    assert beam_search(tiny_lm.encode("Q:"), cfg, tiny_lm) == "A is good"


def test_beam_recovers_higher_probability_sequence():
    # greedy takes A then C (0.55 * 0.5 = 0.275); the B branch scores 0.4275
    lm = ToyLm.from_text(BEAM_TRAP)
    q = lm.encode("Q: t")
    assert greedy_decode(q, lm) == "A C"
    assert beam_search(q, SamplerConfig(beam_width=2), lm) == "B E"


def test_beam_all_hypotheses_finish_immediately():
    lm = ToyLm.from_text("Q: u\ta:0.6,b:0.4\nQ: u a\t</s>:1.0\nQ: u b\t</s>:1.0\n")
    assert beam_search(lm.encode("Q: u"), SamplerConfig(beam_width=2), lm) == "a"


def test_self_consistency_majority(sampling_lm):
    q = sampling_lm.encode("Q: s")
    cfg = SamplerConfig()
    # seed 3 draws 8 samples ending in 24 and 2 in 25
    answer = self_consistency(q, cfg, sampling_lm, random.Random(3),
                              extractor=extract_numeric_answer)
    assert answer == "24"


def test_self_consistency_single_sample_is_one_temperature_draw(sampling_lm):
    q = sampling_lm.encode("Q: s")
    cfg = SamplerConfig(sc_samples=1)
    voted = self_consistency(q, cfg, sampling_lm, random.Random(9))
    drawn = temperature_sample(q, cfg, sampling_lm, random.Random(9))
    assert voted == drawn


def test_self_consistency_free_form_tie_breaks_to_first_sample(sampling_lm):
    q = sampling_lm.encode("Q: s")
    cfg = SamplerConfig(sc_samples=2)
    # with two free-form samples the winner is always the first draw:
    # either both agree or the tie rule picks the first-seen answer
    voted = self_consistency(q, cfg, sampling_lm, random.Random(5))
    first = temperature_sample(q, cfg, sampling_lm, random.Random(5))
    assert voted == first


@pytest.fixture
def span_lm():
    table, _ = span_rank4_scenario()
    return ToyLm(table)


def test_cot_decoding_sums_span_confidence(span_lm):
    q = span_lm.encode("Q: toys")
    answer = cot_decoding(q, SamplerConfig(top_k=10), span_lm, numeric_token_span)
    assert answer == "24"  # 0.85 from the rank-4 path beats 3 x 0.05 for "25"


def test_cot_decoding_k1_returns_greedy_span(span_lm):
    q = span_lm.encode("Q: toys")
    answer = cot_decoding(q, SamplerConfig(top_k=1), span_lm, numeric_token_span)
    assert answer == "25"


def test_cot_decoding_single_shared_span_wins_regardless_of_gaps(span_lm):
    q = span_lm.encode("Q: toys")
    answer = cot_decoding(q, SamplerConfig(top_k=3), span_lm, numeric_token_span)
    assert answer == "25"  # ranks 1-3 all end in 25


def test_cot_decoding_no_span_falls_back_to_rank1_text(span_lm):
    q = span_lm.encode("Q: toys")
    answer = cot_decoding(q, SamplerConfig(top_k=3), span_lm, lambda tokens: None)
    assert answer == "a gives 25"


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(temperature=0.0).validate()
    with pytest.raises(ValueError):
        SamplerConfig(top_k=0).validate()
    with pytest.raises(ValueError):
        SamplerConfig(beam_width=0).validate()
