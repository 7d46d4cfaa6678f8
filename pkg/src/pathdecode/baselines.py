"""Reference decoding strategies for head-to-head comparison.

Single-path: greedy, temperature, top-k, top-p. Multi-path: length-normalized
beam search, self-consistency (temperature samples + majority vote), and
first-step top-k branching scored by answer-span probability gaps.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .aggregate import majority_vote
from .explorer import BranchConfig, seed_paths
from .lm import DecodedPath, LmBackend, StepDistribution, Token
from .scoring import SpanMatch, cot_span_confidence


@dataclass
class SamplerConfig:
    temperature: float = 0.7
    top_k: int = 10
    top_p: float = 0.9
    beam_width: int = 10
    sc_samples: int = 10
    rng_seed: int = 0
    max_tokens: int = 256

    def validate(self) -> None:
        if self.temperature <= 0.0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.sc_samples < 1:
            raise ValueError("sc_samples must be >= 1")


def greedy_path(question: Sequence[Token], backend: LmBackend,
                max_tokens: int = 256) -> DecodedPath:
    from .lm import greedy_rollout

    return greedy_rollout(backend, question, max_tokens)


def greedy_decode(question: Sequence[Token], backend: LmBackend,
                  max_tokens: int = 256) -> str:
    """Rank-1 token at every step until EOS or the length cap."""
    return backend.render(greedy_path(question, backend, max_tokens).tokens)


def _step_weights(dist: StepDistribution, mode: str, cfg: SamplerConfig) -> list[float]:
    probs = [p for _, p in dist.candidates]
    if mode == "temperature":
        # Dividing log-probabilities by t == raising probabilities to 1/t.
        return [p ** (1.0 / cfg.temperature) if p > 0.0 else 0.0 for p in probs]
    if mode == "topk":
        cut = min(cfg.top_k, len(probs))
        return probs[:cut] + [0.0] * (len(probs) - cut)
    if mode == "topp":
        weights = [0.0] * len(probs)
        acc = 0.0
        for i, p in enumerate(probs):
            weights[i] = p
            acc += p
            if acc >= cfg.top_p:
                break
        return weights
    raise ValueError(f"unknown sampling mode {mode!r}")


def sample_path(
    question: Sequence[Token],
    cfg: SamplerConfig,
    backend: LmBackend,
    rng: random.Random,
    mode: str,
) -> DecodedPath:
    """Per-step stochastic decoding; bit-reproducible for a fixed rng."""
    cfg.validate()
    context = list(question)
    tokens: list[Token] = []
    probs_out: list[float] = []
    gaps: list[float] = []
    ents: list[float] = []
    lgaps: list[float | None] = []
    finished = False
    for _ in range(cfg.max_tokens):
        dist = backend.next_distribution(context)
        weights = _step_weights(dist, mode, cfg)
        total = sum(weights)
        if total <= 0.0:
            idx = 0
        else:
            idx = rng.choices(range(len(weights)), weights=weights, k=1)[0]
        tok, p = dist.candidates[idx]
        if tok.is_eos:
            finished = True
            break
        tokens.append(tok)
        probs_out.append(p)
        gaps.append(dist.top2_gap())
        ents.append(dist.norm_entropy())
        lgaps.append(dist.logit_gap())
        context.append(tok)
    return DecodedPath(tokens, probs_out, gaps, ents, lgaps, finished)


def temperature_sample(question: Sequence[Token], cfg: SamplerConfig,
                       backend: LmBackend, rng: random.Random) -> str:
    return backend.render(sample_path(question, cfg, backend, rng, "temperature").tokens)


def topk_sample(question: Sequence[Token], cfg: SamplerConfig,
                backend: LmBackend, rng: random.Random) -> str:
    return backend.render(sample_path(question, cfg, backend, rng, "topk").tokens)


def topp_sample(question: Sequence[Token], cfg: SamplerConfig,
                backend: LmBackend, rng: random.Random) -> str:
    return backend.render(sample_path(question, cfg, backend, rng, "topp").tokens)


@dataclass
class _Beam:
    tokens: list[Token]
    chosen_probs: list[float]
    top2_gaps: list[float]
    norm_entropies: list[float]
    logit_gaps: list[float | None]
    sum_logp: float
    finished: bool
    order: int

    def score(self) -> float:
        return self.sum_logp / max(1, len(self.tokens))


def beam_search_path(question: Sequence[Token], cfg: SamplerConfig,
                     backend: LmBackend) -> DecodedPath:
    """Length-normalized log-probability beam over the visible candidates.

    Finished hypotheses stay in the beam and compete for slots; EOS
    probability itself is not scored. Ties resolve by creation order.
    """
    cfg.validate()
    counter = 0
    beams = [_Beam([], [], [], [], [], 0.0, False, counter)]
    for _ in range(cfg.max_tokens):
        if all(b.finished for b in beams):
            break
        expanded: list[_Beam] = []
        for beam in beams:
            if beam.finished:
                expanded.append(beam)
                continue
            dist = backend.next_distribution(list(question) + beam.tokens)
            for tok, p in dist.candidates:
                counter += 1
                if tok.is_eos:
                    done = _Beam(beam.tokens, beam.chosen_probs, beam.top2_gaps,
                                 beam.norm_entropies, beam.logit_gaps,
                                 beam.sum_logp, True, counter)
                    expanded.append(done)
                    continue
                if p <= 0.0:
                    continue
                expanded.append(_Beam(
                    beam.tokens + [tok],
                    beam.chosen_probs + [p],
                    beam.top2_gaps + [dist.top2_gap()],
                    beam.norm_entropies + [dist.norm_entropy()],
                    beam.logit_gaps + [dist.logit_gap()],
                    beam.sum_logp + math.log(p),
                    False,
                    counter,
                ))
        expanded.sort(key=lambda b: (-b.score(), b.order))
        beams = expanded[:cfg.beam_width]
    best = min(beams, key=lambda b: (-b.score(), b.order))
    return DecodedPath(best.tokens, best.chosen_probs, best.top2_gaps,
                       best.norm_entropies, best.logit_gaps, best.finished)


def beam_search(question: Sequence[Token], cfg: SamplerConfig,
                backend: LmBackend) -> str:
    return backend.render(beam_search_path(question, cfg, backend).tokens)


def self_consistency(
    question: Sequence[Token],
    cfg: SamplerConfig,
    backend: LmBackend,
    rng: random.Random,
    extractor: Callable[[str], str | None] | None = None,
) -> str:
    """Majority vote over temperature samples.

    Fixed-answer tasks pass a rule-based extractor; free-form tasks vote over
    whole responses, where exact-match voting frequently tie-breaks to the
    first sample. Samples whose extraction fails vote as the empty string.
    """
    answers = []
    for _ in range(cfg.sc_samples):
        text = temperature_sample(question, cfg, backend, rng)
        if extractor is not None:
            answers.append(extractor(text) or "")
        else:
            answers.append(text)
    return majority_vote(answers)


def cot_decoding_paths(question: Sequence[Token], k: int, backend: LmBackend,
                       max_tokens: int = 256) -> list[DecodedPath]:
    """First-step branching over ranks 1..k (index order), greedy rollouts."""
    cfg = BranchConfig(k=k, k_prime=0, seeding="sequential", backtracking="none")
    return seed_paths(question, cfg, backend, max_tokens)


def cot_decoding(
    question: Sequence[Token],
    cfg: SamplerConfig,
    backend: LmBackend,
    span_finder: Callable[[Sequence[Token]], SpanMatch | None],
    max_tokens: int = 256,
) -> str:
    """Answer-span confidence aggregation over first-step top-k branches.

    Each path's confidence is the mean top-2 probability gap over its
    rule-extracted answer span; confidence is summed over paths sharing an
    identical span string and the max-sum span wins. Paths without a span
    contribute nothing; if no path yields a span, the rank-1 response is
    returned as-is.
    """
    cfg.validate()
    paths = cot_decoding_paths(question, cfg.top_k, backend, max_tokens)
    sums: dict[str, float] = {}
    for path in paths:
        span = span_finder(path.tokens)
        if span is None:
            continue
        score = cot_span_confidence(path, (span.start, span.end))
        sums[span.text] = sums.get(span.text, 0.0) + score.value
    if not sums:
        return backend.render(paths[0].tokens)
    return max(sums, key=lambda s: sums[s])  # insertion order breaks ties
