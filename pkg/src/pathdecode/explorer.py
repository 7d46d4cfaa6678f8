"""Two-stage path exploration: seeded first-step branching plus confidence backtracking.

The first stage spreads a fixed path budget over the ranked first-step
candidates (Fibonacci indices by default, so seeds are roughly log-spaced
along the rank axis) and completes each seed greedily. The second stage
watches each path's token-confidence trajectory for a dip below threshold
and re-branches just before the first such valley.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Sequence

from .lm import (
    DecodedPath,
    LmBackend,
    StepDistribution,
    Token,
    candidate_at_rank,
    greedy_rollout,
)

SEEDINGS = ("fibonacci", "sequential", "one-branch")
BACKTRACKINGS = ("local-minima", "random", "late", "none")
OVERFLOW_POLICIES = ("skip", "clamp")

DEFAULT_MAX_PATH_TOKENS = 256


class EmptyExplorationError(Exception):
    """No decodable path survived seeding for this question."""


@dataclass
class BranchConfig:
    k: int = 10
    k_prime: int = 2
    delta: float = 0.2
    seeding: str = "fibonacci"
    backtracking: str = "local-minima"
    max_backtracks_per_path: int = 1
    rank_overflow_policy: str = "skip"
    # Triggered paths are replaced by their re-branched children; set this to
    # also keep the original alongside them.
    keep_original_on_backtrack: bool = False

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.k_prime < 0:
            raise ValueError(f"k_prime must be >= 0, got {self.k_prime}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.seeding not in SEEDINGS:
            raise ValueError(f"unknown seeding {self.seeding!r}")
        if self.backtracking not in BACKTRACKINGS:
            raise ValueError(f"unknown backtracking {self.backtracking!r}")
        if self.max_backtracks_per_path < 0:
            raise ValueError("max_backtracks_per_path must be >= 0")
        if self.rank_overflow_policy not in OVERFLOW_POLICIES:
            raise ValueError(f"unknown rank overflow policy {self.rank_overflow_policy!r}")


@dataclass
class ExplorationResult:
    paths: list[DecodedPath]
    trigger_count: int


def fibonacci_indices(k: int) -> list[int]:
    """First k Fibonacci numbers under the convention F_1 = 1, F_2 = 2."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = [1, 2]
    while len(out) < k:
        out.append(out[-1] + out[-2])
    return out[:k]


def seeding_ranks(cfg: BranchConfig) -> list[int]:
    if cfg.seeding == "fibonacci":
        return fibonacci_indices(cfg.k)
    if cfg.seeding == "sequential":
        return list(range(1, cfg.k + 1))
    return [1]  # one-branch


def _resolve_ranks(ranks: Sequence[int], dist: StepDistribution,
                   max_visible: int, policy: str) -> list[int]:
    """Apply the rank-overflow policy, preserving order and dropping duplicates."""
    available = min(max_visible, len(dist.candidates))
    resolved: list[int] = []
    for rank in ranks:
        if rank > available:
            if policy == "skip":
                continue
            rank = available
        if rank not in resolved:
            resolved.append(rank)
    return resolved


def seed_paths(
    question: Sequence[Token],
    cfg: BranchConfig,
    backend: LmBackend,
    max_tokens: int = DEFAULT_MAX_PATH_TOKENS,
) -> list[DecodedPath]:
    """First-stage branching: one path per seeding rank, completed greedily."""
    cfg.validate()
    dist = backend.next_distribution(question)
    ranks = _resolve_ranks(seeding_ranks(cfg), dist, backend.max_visible_rank,
                           cfg.rank_overflow_policy)
    paths: list[DecodedPath] = []
    for rank in ranks:
        tok = candidate_at_rank(dist, rank)
        prob = dist.candidates[rank - 1][1]
        if tok.is_eos:
            path = DecodedPath([], [], [], [], [], finished=True, seed_rank=rank)
        else:
            cont = greedy_rollout(backend, list(question) + [tok], max(1, max_tokens - 1))
            path = DecodedPath(
                tokens=[tok] + cont.tokens,
                chosen_probs=[prob] + cont.chosen_probs,
                top2_gaps=[dist.top2_gap()] + cont.top2_gaps,
                norm_entropies=[dist.norm_entropy()] + cont.norm_entropies,
                logit_gaps=[dist.logit_gap()] + cont.logit_gaps,
                finished=cont.finished,
                seed_rank=rank,
            )
        paths.append(path)
    return paths


def find_backtrack_point(confidences: Sequence[float], delta: float) -> int:
    """Earliest strict local confidence minimum below ``delta``, or -1.

    Positions are 1-indexed. A position t qualifies when 3 <= t <= T,
    s_t < s_{t-1}, s_t < s_{t+1} whenever t < T, and s_t < delta. All
    comparisons are strict; ties never trigger.
    """
    T = len(confidences)
    for t in range(3, T + 1):
        s = confidences[t - 1]
        if s >= delta or s >= confidences[t - 2]:
            continue
        if t < T and s >= confidences[t]:
            continue
        return t
    return -1


def _last_backtrack_point(confidences: Sequence[float], delta: float) -> int:
    """Latest qualifying local minimum, falling back to the final position."""
    T = len(confidences)
    best = -1
    for t in range(3, T + 1):
        s = confidences[t - 1]
        if s < delta and s < confidences[t - 2] and (t == T or s < confidences[t]):
            best = t
    if best == -1 and T >= 3:
        best = T
    return best


def rebranch(
    question: Sequence[Token],
    path: DecodedPath,
    b: int,
    cfg: BranchConfig,
    backend: LmBackend,
    max_tokens: int = DEFAULT_MAX_PATH_TOKENS,
) -> list[DecodedPath]:
    """Re-branch ``path`` at position b-1 over the second-stage rank schedule.

    The path is truncated to its first b-2 tokens, the position-(b-1) token is
    replaced by candidates at Fibonacci ranks F_1..F_{k'}, and each prefix is
    completed greedily. Children token-identical to the original path are
    dropped (the rank-1 alternate re-selects the greedy token, so it normally
    reproduces the original).
    """
    if b < 3 or b > len(path.tokens):
        raise ValueError(f"backtrack index {b} outside valid range [3, {len(path.tokens)}]")
    if cfg.k_prime == 0:
        return []
    prefix_len = b - 2
    prefix_context = list(question) + path.tokens[:prefix_len]
    dist = backend.next_distribution(prefix_context)
    ranks = _resolve_ranks(fibonacci_indices(cfg.k_prime), dist,
                           backend.max_visible_rank, cfg.rank_overflow_policy)
    original = path.texts()
    children: list[DecodedPath] = []
    seen: set[tuple[str, ...]] = set()
    for rank in ranks:
        tok = candidate_at_rank(dist, rank)
        prob = dist.candidates[rank - 1][1]
        if tok.is_eos:
            cont = DecodedPath([], [], [], [], [], finished=True)
        else:
            budget = max_tokens - prefix_len - 1
            if budget < 1:
                cont = DecodedPath([], [], [], [], [], finished=False)
            else:
                cont = greedy_rollout(backend, prefix_context + [tok], budget)
        child_tokens = path.tokens[:prefix_len] + ([] if tok.is_eos else [tok]) + cont.tokens
        child = DecodedPath(
            tokens=child_tokens,
            chosen_probs=path.chosen_probs[:prefix_len]
            + ([] if tok.is_eos else [prob]) + cont.chosen_probs,
            top2_gaps=path.top2_gaps[:prefix_len]
            + ([] if tok.is_eos else [dist.top2_gap()]) + cont.top2_gaps,
            norm_entropies=path.norm_entropies[:prefix_len]
            + ([] if tok.is_eos else [dist.norm_entropy()]) + cont.norm_entropies,
            logit_gaps=path.logit_gaps[:prefix_len]
            + ([] if tok.is_eos else [dist.logit_gap()]) + cont.logit_gaps,
            finished=cont.finished,
            seed_rank=path.seed_rank,
            backtrack_at=b,
        )
        key = child.texts()
        if key == original or key in seen:
            continue
        seen.add(key)
        children.append(child)
    return children


def _pick_backtrack(path: DecodedPath, cfg: BranchConfig, rng: random.Random) -> int:
    T = len(path.tokens)
    if cfg.backtracking == "local-minima":
        return find_backtrack_point(path.chosen_probs, cfg.delta)
    if cfg.backtracking == "random":
        return rng.randint(3, T) if T >= 3 else -1
    if cfg.backtracking == "late":
        return _last_backtrack_point(path.chosen_probs, cfg.delta)
    return -1


def explore(
    question: Sequence[Token],
    cfg: BranchConfig,
    backend: LmBackend,
    rng: random.Random | None = None,
    max_tokens: int = DEFAULT_MAX_PATH_TOKENS,
) -> ExplorationResult:
    """Seed paths, apply the configured backtracking rule, deduplicate.

    A triggered path is replaced by its re-branched children (a trigger whose
    alternates all collapse back into the original keeps the original). With
    ``max_backtracks_per_path`` > 1 the rule re-applies to children until the
    budget is spent. The result never contains two token-identical paths.
    """
    cfg.validate()
    rng = rng if rng is not None else random.Random(0)
    seeds = seed_paths(question, cfg, backend, max_tokens)
    if not seeds:
        raise EmptyExplorationError("no seed path could be decoded for this question")
    backtracking_on = cfg.backtracking != "none" and cfg.k_prime > 0
    results: list[DecodedPath] = []
    triggers = 0
    work: deque[tuple[DecodedPath, int]] = deque((p, 0) for p in seeds)
    while work:
        path, depth = work.popleft()
        b = -1
        if backtracking_on and depth < cfg.max_backtracks_per_path:
            b = _pick_backtrack(path, cfg, rng)
        if b == -1:
            results.append(path)
            continue
        triggers += 1
        children = rebranch(question, path, b, cfg, backend, max_tokens)
        if cfg.keep_original_on_backtrack or not children:
            results.append(path)
        # Children take the original's place in the traversal order.
        for child in reversed(children):
            work.appendleft((child, depth + 1))
    deduped: list[DecodedPath] = []
    seen: set[tuple[str, ...]] = set()
    for path in results:
        key = path.texts()
        if key in seen:
            continue
        seen.add(key)
        deduped.append(path)
    if not deduped:
        raise EmptyExplorationError("exploration produced no paths")
    return ExplorationResult(paths=deduped, trigger_count=triggers)
