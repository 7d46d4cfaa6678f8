"""Multi-path decoding strategies for language models.

Fibonacci-seeded first-step branching with local-minima backtracking,
length-aware answer-gap confidence (plus an LCS SpanAlign variant), greedy
semantic clustering over answer strings, the standard decoding baselines, and
a benchmark harness that ties them together.
"""
from .aggregate import (
    AggregationConfig,
    AnswerCluster,
    HashEmbedder,
    HttpEmbedder,
    cosine,
    greedy_cluster,
    majority_vote,
    maxpath,
    representative_variant,
    select_answer,
)
from .baselines import SamplerConfig, beam_search, cot_decoding, greedy_decode, self_consistency
from .explorer import (
    BranchConfig,
    ExplorationResult,
    explore,
    fibonacci_indices,
    find_backtrack_point,
    rebranch,
    seed_paths,
)
from .harness import QaExample, RunConfig, bleu, load_dataset, match_metric, run_benchmark
from .lm import (
    DecodedPath,
    HttpLm,
    HttpLmConfig,
    JsonlCache,
    StepDistribution,
    Token,
    ToyLm,
    candidate_at_rank,
    greedy_rollout,
)
from .scoring import (
    LcsAlignment,
    PathScore,
    ReasoningSplit,
    gcot_confidence,
    lcs_align,
    length_factor,
    normalize_for_lcs,
    spanalign_confidence,
    split_answer,
)

__version__ = "0.1.0"
