"""Path confidence scoring.

Each explored path is split into a reasoning segment (the path itself) and a
short answer continuation decoded greedily after an extraction template such
as "So the answer is:". The default confidence multiplies a length factor over
reasoning segments by the mean top-2 probability gap over the answer segment.
The SpanAlign variant instead scores only the terminal span shared (via LCS)
between the two segments.
"""
from __future__ import annotations

import math
import re
import unicodedata
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .lm import DecodedPath, LmBackend, Token, greedy_rollout

DEFAULT_TEMPLATE = "So the answer is:"
DEFAULT_TEMPLATES = (
    "So the answer is:",
    "Therefore, the answer is:",
    "Final answer:",
)
DEFAULT_MAX_ANSWER_TOKENS = 32

SCORE_METHODS = ("gcot", "spanalign", "spanalign-mean", "entropy", "logit", "cot-span")


class MissingLogitsError(Exception):
    """The raw-score confidence variant was requested on a probability-only backend."""


@dataclass
class ReasoningSplit:
    """A path split into its reasoning trace and templated answer continuation."""

    gen1: DecodedPath
    gen2: DecodedPath
    template: str


@dataclass
class PathScore:
    value: float
    method: str
    components: tuple[float, float] | None = None  # (length_factor, gap_factor)
    flagged: bool = False


def split_answer(
    question: Sequence[Token],
    path: DecodedPath,
    template: str,
    backend: LmBackend,
    max_answer_tokens: int = DEFAULT_MAX_ANSWER_TOKENS,
) -> ReasoningSplit:
    """Decode the answer continuation for ``path`` behind the extraction template.

    The template is a post-hoc extractor only: it never alters the reasoning
    trace. The continuation stops at EOS, at a newline-bearing token, or at
    ``max_answer_tokens``. An immediately empty continuation is legal and
    scores 0 downstream.
    """
    context = list(question) + list(path.tokens) + backend.encode(template)
    gen2 = greedy_rollout(backend, context, max_answer_tokens,
                          stop_fn=lambda tok: "\n" in tok.text)
    return ReasoningSplit(gen1=path, gen2=gen2, template=template)


def length_factor(len_k: int, cohort_lens: Sequence[int]) -> float:
    """log(1+len_k) normalized by the largest log(1+len) in the cohort.

    An all-empty cohort is defined to have factor 1, so such cohorts rank
    purely by gap.
    """
    if len_k not in cohort_lens:
        raise ValueError("len_k must be a member of cohort_lens")
    if any(n < 0 for n in cohort_lens):
        raise ValueError("lengths must be non-negative")
    max_log = max(math.log1p(n) for n in cohort_lens)
    if max_log == 0.0:
        return 1.0
    return math.log1p(len_k) / max_log


def gcot_confidence(split: ReasoningSplit, cohort_lens: Sequence[int]) -> PathScore:
    """Length factor times mean top-2 probability gap over the answer segment."""
    lf = length_factor(len(split.gen1.tokens), cohort_lens)
    if not split.gen2.tokens:
        return PathScore(0.0, "gcot", components=(lf, 0.0))
    gap = sum(split.gen2.top2_gaps) / len(split.gen2.top2_gaps)
    return PathScore(lf * gap, "gcot", components=(lf, gap))


def _is_pure_punctuation(text: str) -> bool:
    return bool(text) and all(unicodedata.category(ch).startswith("P") for ch in text)


def normalize_for_lcs(texts: Sequence[str]) -> tuple[list[str], list[int]]:
    """Lowercase tokens and drop pure-punctuation ones.

    A token is pure punctuation iff every character is in a Unicode
    punctuation category; any letter or digit exempts it. Returns the
    normalized texts plus 0-based back-pointers into the original sequence
    (needed to read per-token gaps for the aligned positions). Idempotent.
    """
    normed: list[str] = []
    pointers: list[int] = []
    for i, text in enumerate(texts):
        if _is_pure_punctuation(text):
            continue
        normed.append(text.lower())
        pointers.append(i)
    return normed, pointers


@dataclass
class LcsAlignment:
    """An LCS alignment as 0-based strictly increasing position pairs."""

    pairs: list[tuple[int, int]]

    @property
    def length(self) -> int:
        return len(self.pairs)

    @property
    def terminal(self) -> tuple[int, int] | None:
        return self.pairs[-1] if self.pairs else None


def lcs_align(a: Sequence[str], b: Sequence[str]) -> LcsAlignment:
    """Token-level LCS with a rightmost-preferring backtrace.

    Among equal-length alignments, each pair (starting from the last) is
    chosen as late as possible, first in ``a`` then in ``b``; the terminal
    pair is therefore the last shared phrase rather than the first.
    """
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        ai = a[i - 1]
        for j in range(1, m + 1):
            if ai == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = prev[j] if prev[j] >= row[j - 1] else row[j - 1]
    total = dp[n][m]
    pairs: list[tuple[int, int]] = []
    need, bound_i, bound_j = total, n, m
    while need > 0:
        found = False
        for i in range(bound_i, 0, -1):
            if found:
                break
            ai = a[i - 1]
            for j in range(bound_j, 0, -1):
                if ai == b[j - 1] and dp[i - 1][j - 1] >= need - 1:
                    pairs.append((i - 1, j - 1))
                    bound_i, bound_j = i - 1, j - 1
                    need -= 1
                    found = True
                    break
    pairs.reverse()
    return LcsAlignment(pairs)


def _terminal_run(pairs: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Maximal run of consecutive aligned pairs ending at the terminal pair."""
    run = [pairs[-1]]
    for prev, cur in zip(reversed(pairs[:-1]), reversed(pairs)):
        if prev[0] + 1 == cur[0] and prev[1] + 1 == cur[1]:
            run.append(prev)
        else:
            break
    run.reverse()
    return run


def spanalign_confidence(split: ReasoningSplit, mode: str = "last") -> PathScore:
    """Score only LCS-aligned answer spans between the two segments.

    ``last`` sums the paired gaps over the terminal aligned run; ``mean`` sums
    them over all aligned pairs. Either sum is divided by the total alignment
    length L, so the value can exceed 1 (each pair contributes two gaps). An
    empty alignment scores 0.
    """
    if mode not in ("last", "mean"):
        raise ValueError(f"unknown spanalign mode {mode!r}")
    method = "spanalign" if mode == "last" else "spanalign-mean"
    g1, bp1 = normalize_for_lcs([t.text for t in split.gen1.tokens])
    g2, bp2 = normalize_for_lcs([t.text for t in split.gen2.tokens])
    align = lcs_align(g1, g2)
    if align.length == 0:
        return PathScore(0.0, method)
    selected = _terminal_run(align.pairs) if mode == "last" else align.pairs
    paired = sum(split.gen1.top2_gaps[bp1[i]] + split.gen2.top2_gaps[bp2[j]]
                 for i, j in selected)
    return PathScore(paired / align.length, method)


def variant_confidence(split: ReasoningSplit, method: str) -> PathScore:
    """Ablation confidences over the answer segment: entropy- or raw-score-based."""
    if method not in ("entropy", "logit"):
        raise ValueError(f"unknown confidence variant {method!r}")
    if not split.gen2.tokens:
        return PathScore(0.0, method)
    if method == "entropy":
        vals = [1.0 - e for e in split.gen2.norm_entropies]
        return PathScore(sum(vals) / len(vals), "entropy")
    gaps = [g for g in split.gen2.logit_gaps if g is not None]
    if not gaps:
        raise MissingLogitsError("backend exposes no raw scores for the logit variant")
    return PathScore(sum(gaps) / len(gaps), "logit")


def cot_span_confidence(path: DecodedPath, span: tuple[int, int] | None) -> PathScore:
    """Mean top-2 probability gap over a rule-extracted answer span.

    ``span`` is a half-open 0-based token range; None (extractor found no
    span) scores 0 and is flagged.
    """
    if span is None:
        return PathScore(0.0, "cot-span", flagged=True)
    start, end = span
    if not (0 <= start < end <= len(path.tokens)):
        raise ValueError(f"span {span} outside path of length {len(path.tokens)}")
    gaps = path.top2_gaps[start:end]
    return PathScore(sum(gaps) / len(gaps), "cot-span")


class SpanMatch(NamedTuple):
    start: int
    end: int
    text: str


# Optionally signed runs of digits with thousands commas and a decimal part.
NUMBER_RE = re.compile(r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?")
BINARY_RE = re.compile(r"\b(yes|no)\b")


def numeric_token_span(tokens: Sequence[Token]) -> SpanMatch | None:
    """Last token carrying a number, as a one-token span with its comma-free value."""
    for i in range(len(tokens) - 1, -1, -1):
        matches = NUMBER_RE.findall(tokens[i].text)
        if matches:
            return SpanMatch(i, i + 1, matches[-1].replace(",", ""))
    return None


def binary_token_span(tokens: Sequence[Token]) -> SpanMatch | None:
    """Last yes/no token, as a one-token span with its casefolded value."""
    for i in range(len(tokens) - 1, -1, -1):
        matches = BINARY_RE.findall(tokens[i].text.casefold())
        if matches:
            return SpanMatch(i, i + 1, matches[-1])
    return None
