"""Answer aggregation: greedy semantic clustering, max-path, and majority vote.

Answers are processed in path index order; each joins the lowest-index
existing cluster whose representative is within cosine threshold tau, else it
starts a new cluster with itself as representative. The final answer is the
representative of the cluster with the greatest cumulative confidence.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import requests

from .lm import JsonlCache, request_key

STRATEGIES = ("cluster", "maxpath", "majority")
REPRESENTATIVES = ("first", "centroid", "max-conf")


@dataclass
class AggregationConfig:
    tau: float = 0.8
    strategy: str = "cluster"
    representative: str = "first"

    def validate(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown aggregation strategy {self.strategy!r}")
        if self.representative not in REPRESENTATIVES:
            raise ValueError(f"unknown representative mode {self.representative!r}")


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector is zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class HashEmbedder:
    """Deterministic bag-of-tokens embedding via signed token hashing.

    Exists so clustering needs no external model: identical texts embed
    identically, distinct texts almost surely fall below any high threshold.
    Vectors are L2-normalized; only empty text maps to the zero vector.
    """

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in text.casefold().split():
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(digest, "big")
            sign = 1.0 if value & 1 else -1.0
            vec[(value >> 1) % self.dim] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0.0 else vec


@dataclass
class HttpEmbedderConfig:
    url: str
    auth_token: str | None = None
    timeout_s: float = 30.0
    max_retries: int = 3
    retry_backoff_s: float = 0.2


class HttpEmbedder:
    """Client for an HTTP+JSON embeddings endpoint: {"input": text} -> {"embedding": [...]}."""

    def __init__(self, config: HttpEmbedderConfig, cache: JsonlCache | None = None):
        self.config = config
        self.cache = cache

    def embed(self, text: str) -> np.ndarray:
        body = {"input": text}
        key = request_key(self.config.url, body)
        payload = self.cache.get(key) if self.cache is not None else None
        if payload is None:
            payload = self._post(body)
            if self.cache is not None:
                self.cache.put(key, body, payload)
        return np.asarray(payload["embedding"], dtype=np.float64)

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        last_err: Exception | None = None
        for attempt in range(self.config.max_retries):
            try:
                resp = requests.post(self.config.url, json=body, headers=headers,
                                     timeout=self.config.timeout_s)
            except requests.RequestException as exc:
                last_err = exc
            else:
                if resp.status_code < 400:
                    return resp.json()
                last_err = RuntimeError(f"HTTP {resp.status_code}")
            if attempt + 1 < self.config.max_retries:
                time.sleep(self.config.retry_backoff_s * (attempt + 1))
        raise ConnectionError(f"embedding endpoint unreachable: {last_err}")


@dataclass
class AnswerCluster:
    """A group of semantically equivalent answers with accumulated confidence."""

    representative: str
    members: list[tuple[str, float, int]] = field(default_factory=list)
    member_similarities: list[float] = field(default_factory=list)
    member_embeddings: list[np.ndarray] = field(default_factory=list)

    @property
    def cumulative(self) -> float:
        return math.fsum(conf for _, conf, _ in self.members)


def greedy_cluster(
    answers: Sequence[str],
    confidences: Sequence[float],
    cfg: AggregationConfig,
    embedder: Embedder,
) -> list[AnswerCluster]:
    """Order-dependent greedy clustering against fixed first-in representatives.

    Every answer joins exactly one cluster; the join-time similarity to the
    representative is recorded so the threshold can be re-asserted later.
    """
    cfg.validate()
    if len(answers) != len(confidences) or not answers:
        raise ValueError("answers and confidences must be equal-length and non-empty")
    embeddings = [embedder.embed(a) for a in answers]
    clusters: list[AnswerCluster] = []
    rep_embeddings: list[np.ndarray] = []
    for idx, (answer, conf, emb) in enumerate(zip(answers, confidences, embeddings)):
        joined = None
        sim_at_join = 1.0
        for j, rep_emb in enumerate(rep_embeddings):
            sim = cosine(emb, rep_emb)
            if sim >= cfg.tau:
                joined, sim_at_join = j, sim
                break
        if joined is None:
            clusters.append(AnswerCluster(representative=answer))
            rep_embeddings.append(emb)
            joined = len(clusters) - 1
        clusters[joined].members.append((answer, conf, idx))
        clusters[joined].member_similarities.append(sim_at_join)
        clusters[joined].member_embeddings.append(emb)
    return clusters


def select_cluster(clusters: Sequence[AnswerCluster]) -> int:
    """Index of the cluster with maximal cumulative confidence (ties: earliest)."""
    if not clusters:
        raise ValueError("no clusters to select from")
    best = 0
    for j in range(1, len(clusters)):
        if clusters[j].cumulative > clusters[best].cumulative:
            best = j
    return best


def select_answer(clusters: Sequence[AnswerCluster]) -> str:
    return clusters[select_cluster(clusters)].representative


def maxpath(answers: Sequence[str], confidences: Sequence[float]) -> str:
    """The single highest-confidence answer, no aggregation (ties: lowest index)."""
    if len(answers) != len(confidences) or not answers:
        raise ValueError("answers and confidences must be equal-length and non-empty")
    best = 0
    for i in range(1, len(answers)):
        if confidences[i] > confidences[best]:
            best = i
    return answers[best]


def _vote_key(text: str) -> str:
    return " ".join(text.split()).casefold()


def majority_vote(answers: Sequence[str]) -> str:
    """Exact-string plurality after trim/whitespace-collapse/casefold normalization.

    Ties go to the answer whose normalized form appeared first; the returned
    string is the first original spelling of the winning form.
    """
    if not answers:
        raise ValueError("no answers to vote over")
    counts: dict[str, int] = {}
    first_original: dict[str, str] = {}
    for answer in answers:
        key = _vote_key(answer)
        counts[key] = counts.get(key, 0) + 1
        first_original.setdefault(key, answer)
    winner = max(counts, key=lambda k: counts[k])  # dict order breaks ties by first seen
    return first_original[winner]


def representative_variant(cluster: AnswerCluster, mode: str, embedder: Embedder) -> str:
    """Alternative representative choices: nearest-to-centroid or highest-confidence."""
    if not cluster.members:
        raise ValueError("cluster has no members")
    if mode == "first":
        return cluster.representative
    if mode == "max-conf":
        best = 0
        for i in range(1, len(cluster.members)):
            if cluster.members[i][1] > cluster.members[best][1]:
                best = i
        return cluster.members[best][0]
    if mode == "centroid":
        embs = cluster.member_embeddings or [embedder.embed(a) for a, _, _ in cluster.members]
        mean = np.mean(np.stack(embs), axis=0)
        best, best_sim = 0, -2.0
        for i, emb in enumerate(embs):
            sim = cosine(emb, mean)
            if sim > best_sim:
                best, best_sim = i, sim
        return cluster.members[best][0]
    raise ValueError(f"unknown representative mode {mode!r}")
