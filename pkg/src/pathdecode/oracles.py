"""Brute-force verification suites.

Every function here re-derives a result by enumeration or plain scanning,
independently of the production implementations, so the two can be checked
against each other. Keep these deliberately naive; do not share logic with
the modules they verify.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

from .aggregate import AggregationConfig, HashEmbedder, cosine, greedy_cluster
from .explorer import find_backtrack_point
from .harness import bleu, bleu_tokenize
from .scoring import lcs_align


# -- backtracking ------------------------------------------------------------


def backtrack_point_scan(confidences: Sequence[float], delta: float) -> int:
    """Literal evaluation of the local-minima set over all positions, then min."""
    T = len(confidences)
    qualifying = []
    for t in range(1, T + 1):
        if t < 3:
            continue
        s = confidences[t - 1]
        is_min = s < confidences[t - 2]
        if t < T:
            is_min = is_min and s < confidences[t]
        if is_min and s < delta:
            qualifying.append(t)
    return min(qualifying) if qualifying else -1


# -- LCS ---------------------------------------------------------------------


def lcs_length_bruteforce(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence by enumerating subsequences of the shorter list."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for length in range(len(short), 0, -1):
        for idxs in combinations(range(len(short)), length):
            seq = [short[i] for i in idxs]
            pos = 0
            for tok in long_:
                if pos < len(seq) and tok == seq[pos]:
                    pos += 1
            if pos == len(seq):
                return length
    return 0


def _increasing_matches(seq: Sequence[str], b: Sequence[str], start: int) -> list[list[int]]:
    if not seq:
        return [[]]
    out = []
    for j in range(start, len(b)):
        if b[j] == seq[0]:
            for rest in _increasing_matches(seq[1:], b, j + 1):
                out.append([j] + rest)
    return out


def all_optimal_alignments(a: Sequence[str], b: Sequence[str]) -> list[list[tuple[int, int]]]:
    """Every maximum-length alignment as a list of strictly increasing pairs."""
    best = lcs_length_bruteforce(a, b)
    if best == 0:
        return []
    alignments = []
    for idxs in combinations(range(len(a)), best):
        seq = [a[i] for i in idxs]
        for jdxs in _increasing_matches(seq, b, 0):
            alignments.append(list(zip(idxs, jdxs)))
    return alignments


def rightmost_terminal(a: Sequence[str], b: Sequence[str]) -> tuple[int, int] | None:
    """Terminal pair under rightmost preference: max (i, j) over optimal alignments."""
    alignments = all_optimal_alignments(a, b)
    if not alignments:
        return None
    return max(al[-1] for al in alignments)


# -- clustering --------------------------------------------------------------


def simulate_clustering(
    answers: Sequence[str],
    confidences: Sequence[float],
    tau: float,
    embedder,
) -> list[dict]:
    """Straightforward re-simulation of greedy first-fit clustering."""
    groups: list[dict] = []
    for i, answer in enumerate(answers):
        emb = embedder.embed(answer)
        sims = [cosine(emb, g["rep_embedding"]) for g in groups]
        target = None
        for j, sim in enumerate(sims):
            if sim >= tau:
                target = j
                break
        if target is None:
            groups.append({"rep": answer, "rep_embedding": emb,
                           "member_indices": [], "total": 0.0})
            target = len(groups) - 1
        groups[target]["member_indices"].append(i)
        groups[target]["total"] = math.fsum(
            confidences[k] for k in groups[target]["member_indices"])
    return groups


# -- BLEU --------------------------------------------------------------------


def bleu_bruteforce(candidate: str, references: Sequence[str]) -> float:
    """BLEU re-derived with explicit position scans instead of hash counting."""
    cand = bleu_tokenize(candidate)
    refs = [bleu_tokenize(r) for r in references]
    if not cand or not refs:
        return 0.0

    def occurrences(tokens: Sequence[str], gram: Sequence[str]) -> int:
        n = len(gram)
        count = 0
        for i in range(len(tokens) - n + 1):
            if list(tokens[i:i + n]) == list(gram):
                count += 1
        return count

    log_sum = 0.0
    for n in range(1, 5):
        grams = [cand[i:i + n] for i in range(len(cand) - n + 1)]
        total = len(grams)
        distinct: list[list[str]] = []
        for g in grams:
            if g not in distinct:
                distinct.append(g)
        clipped = 0
        for g in distinct:
            in_cand = occurrences(cand, g)
            in_refs = max(occurrences(ref, g) for ref in refs)
            clipped += min(in_cand, in_refs)
        if total > 0 and clipped > 0:
            p = clipped / total
        else:
            p = (clipped + 1) / (total + 1)
        log_sum += math.log(p) / 4.0
    c = len(cand)
    best_r = None
    for ref in refs:
        r = len(ref)
        if best_r is None or (abs(r - c), r) < (abs(best_r - c), best_r):
            best_r = r
    bp = 1.0 if c > best_r else math.exp(1.0 - best_r / c)
    return bp * math.exp(log_sum)


# -- suite runners -----------------------------------------------------------


@dataclass
class OracleReport:
    name: str
    passed: bool
    detail: str


def check_backtrack_points(n: int = 1000, seed: int = 0) -> OracleReport:
    rng = random.Random(seed)
    mismatches = 0
    for _ in range(n):
        length = rng.randint(1, 50)
        seq = [rng.random() for _ in range(length)]
        delta = rng.choice([0.1, 0.2, 0.3])
        if find_backtrack_point(seq, delta) != backtrack_point_scan(seq, delta):
            mismatches += 1
    return OracleReport("backtrack-point", mismatches == 0,
                        f"{n} random sequences, {mismatches} mismatches")


def check_lcs(seed: int = 0) -> OracleReport:
    rng = random.Random(seed)
    alphabet = ["a", "b", "c", "d"]
    checked = 0
    # Exhaustive short cases over a binary sub-alphabet.
    short_lists = [[]]
    for length in range(1, 5):
        short_lists.extend([list(t) for t in _product(alphabet[:2], length)])
    for a in short_lists:
        for b in short_lists:
            if lcs_align(a, b).length != lcs_length_bruteforce(a, b):
                return OracleReport("lcs", False, f"length mismatch on {a} vs {b}")
            checked += 1
    # Random longer cases over the full alphabet.
    tie_cases = 0
    for _ in range(400):
        a = [rng.choice(alphabet) for _ in range(rng.randint(0, 8))]
        b = [rng.choice(alphabet) for _ in range(rng.randint(0, 8))]
        align = lcs_align(a, b)
        if align.length != lcs_length_bruteforce(a, b):
            return OracleReport("lcs", False, f"length mismatch on {a} vs {b}")
        if len(a) <= 7 and len(b) <= 7:
            expected = rightmost_terminal(a, b)
            if align.terminal != expected:
                return OracleReport(
                    "lcs", False,
                    f"terminal {align.terminal} != {expected} on {a} vs {b}")
            if expected is not None and len(all_optimal_alignments(a, b)) > 1:
                tie_cases += 1
        checked += 1
    return OracleReport("lcs", True,
                        f"{checked} pairs checked, {tie_cases} with alignment ties")


def _product(symbols: Sequence[str], length: int):
    if length == 0:
        yield ()
        return
    for rest in _product(symbols, length - 1):
        for s in symbols:
            yield (s,) + rest


def check_clustering(n: int = 1000, seed: int = 0) -> OracleReport:
    rng = random.Random(seed)
    embedder = HashEmbedder()
    pool = ["yes", "no", "paris", "london", "24", "25", "blue whale",
            "the blue whale", "historical wars", "diplomacy"]
    for case in range(n):
        size = rng.randint(1, 12)
        answers = [rng.choice(pool) for _ in range(size)]
        # Dyadic confidences keep every partial sum exact in binary floats.
        confidences = [rng.randrange(0, 2 ** 20) / 2 ** 20 for _ in range(size)]
        tau = rng.choice([0.5, 0.8, 1.0])
        cfg = AggregationConfig(tau=tau)
        clusters = greedy_cluster(answers, confidences, cfg, embedder)
        expected = simulate_clustering(answers, confidences, tau, embedder)
        got = [(c.representative, [i for _, _, i in c.members]) for c in clusters]
        want = [(g["rep"], g["member_indices"]) for g in expected]
        if got != want:
            return OracleReport("clustering", False, f"assignment mismatch on case {case}")
        if math.fsum(c.cumulative for c in clusters) != math.fsum(confidences):
            return OracleReport("clustering", False, f"confidence sum drift on case {case}")
        for c in clusters:
            if any(sim < tau for sim in c.member_similarities):
                return OracleReport("clustering", False,
                                    f"member below threshold on case {case}")
    return OracleReport("clustering", True, f"{n} random instances matched")


def check_bleu(n: int = 200, seed: int = 0) -> OracleReport:
    rng = random.Random(seed)
    vocab = ["the", "cat", "sat", "on", "a", "mat", ",", "."]
    worst = 0.0
    for _ in range(n):
        cand = " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 8)))
        if rng.random() < 0.15:
            ref = cand  # identity pairs must score 1.0
        else:
            ref = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 8)))
        got = bleu(cand, [ref])
        want = bleu_bruteforce(cand, [ref])
        worst = max(worst, abs(got - want))
        if abs(got - want) > 1e-9:
            return OracleReport("bleu", False,
                                f"|{got} - {want}| > 1e-9 on {cand!r} vs {ref!r}")
    return OracleReport("bleu", True, f"{n} pairs, max deviation {worst:.2e}")


def run_all(seed: int = 0) -> list[OracleReport]:
    return [
        check_backtrack_points(seed=seed),
        check_lcs(seed=seed),
        check_clustering(seed=seed),
        check_bleu(seed=seed),
    ]
