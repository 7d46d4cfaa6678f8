"""Language-model backends: a scripted toy LM for tests and an HTTP completion client.

Both backends expose ranked next-token distributions; everything downstream
(branching, backtracking, scoring) is written against that surface only.
"""
from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

EOS_ID = 0
EOS_TEXT = "</s>"


class LmError(Exception):
    """Base class for backend failures."""


class ScriptMissError(LmError):
    """The toy script has no entry for the queried context."""


class UnknownTokenError(LmError):
    """A word falls outside the toy backend's closed vocabulary."""


class RankExceedsListError(LmError):
    """A candidate rank beyond the visible list was requested."""

    def __init__(self, rank: int, available: int):
        super().__init__(f"rank {rank} exceeds candidate list of length {available}")
        self.rank = rank
        self.available = available


class BackendUnavailableError(LmError):
    """The remote backend could not be reached (retryable failure, retries exhausted)."""


class ContextTooLongError(LmError):
    """The context exceeds the backend's declared limit."""


@dataclass(frozen=True)
class Token:
    id: int
    text: str

    @property
    def is_eos(self) -> bool:
        return self.id == EOS_ID


def eos_token() -> Token:
    return Token(EOS_ID, EOS_TEXT)


@dataclass
class StepDistribution:
    """Ranked candidate tokens with probabilities at one decoding step.

    ``candidates`` is sorted non-increasing by probability. ``logprobs``
    carries the backend's raw scores per candidate when it exposes them
    (the toy backend does not).
    """

    candidates: list[tuple[Token, float]]
    context_length: int
    logprobs: list[float] | None = None

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("a step distribution must list at least one candidate")
        probs = [p for _, p in self.candidates]
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"candidate probability {p} outside [0, 1]")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ValueError("candidate probabilities must be sorted non-increasing")
        if sum(probs) > 1.0 + 1e-6:
            raise ValueError(f"candidate probabilities sum to {sum(probs)} > 1")
        if self.logprobs is not None and len(self.logprobs) != len(self.candidates):
            raise ValueError("logprobs length must match candidates")

    def top2_gap(self) -> float:
        """Probability margin between the two best candidates (second taken as 0 if absent)."""
        p1 = self.candidates[0][1]
        p2 = self.candidates[1][1] if len(self.candidates) > 1 else 0.0
        return p1 - p2

    def logit_gap(self) -> float | None:
        """Raw-score margin between the two best candidates, when raw scores exist."""
        if self.logprobs is None or len(self.logprobs) < 2:
            return None
        return self.logprobs[0] - self.logprobs[1]

    def norm_entropy(self) -> float:
        """Shannon entropy of the visible candidates renormalized to sum 1, divided by log(n).

        Returns a value in [0, 1]; a single-candidate step has entropy 0 by convention.
        """
        n = len(self.candidates)
        if n == 1:
            return 0.0
        total = sum(p for _, p in self.candidates)
        if total <= 0.0:
            return 1.0
        h = 0.0
        for _, p in self.candidates:
            q = p / total
            if q > 0.0:
                h -= q * math.log(q)
        return min(1.0, h / math.log(n))


def candidate_at_rank(dist: StepDistribution, rank: int) -> Token:
    """Return the rank-th candidate (1-indexed); raises RankExceedsListError past the list."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank > len(dist.candidates):
        raise RankExceedsListError(rank, len(dist.candidates))
    return dist.candidates[rank - 1][0]


@dataclass
class DecodedPath:
    """A decoded token sequence with per-step statistics.

    Positions are 1-indexed in the confidence formulas: ``chosen_probs[t-1]``
    is the probability of the token emitted at position t. ``logit_gaps``
    entries are None wherever the backend exposes no raw scores.
    """

    tokens: list[Token]
    chosen_probs: list[float]
    top2_gaps: list[float]
    norm_entropies: list[float]
    logit_gaps: list[float | None]
    finished: bool
    seed_rank: int | None = None
    backtrack_at: int | None = None

    def __post_init__(self):
        n = len(self.tokens)
        for name in ("chosen_probs", "top2_gaps", "norm_entropies", "logit_gaps"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length must equal token count {n}")
        for v in self.chosen_probs + self.top2_gaps + self.norm_entropies:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"per-token statistic {v} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.tokens)

    def texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)


def greedy_rollout(
    backend: "LmBackend",
    prefix: Sequence[Token],
    max_tokens: int,
    stop_fn: Callable[[Token], bool] | None = None,
) -> DecodedPath:
    """Complete ``prefix`` by repeatedly appending the rank-1 candidate.

    Stops on EOS, on ``stop_fn`` returning True for the next token (that token
    is not emitted), or after ``max_tokens`` tokens. ``finished`` is False only
    for max-length truncation.
    """
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
    context = list(prefix)
    tokens: list[Token] = []
    probs: list[float] = []
    gaps: list[float] = []
    ents: list[float] = []
    lgaps: list[float | None] = []
    finished = False
    for _ in range(max_tokens):
        dist = backend.next_distribution(context)
        tok, p = dist.candidates[0]
        if tok.is_eos or (stop_fn is not None and stop_fn(tok)):
            finished = True
            break
        tokens.append(tok)
        probs.append(p)
        gaps.append(dist.top2_gap())
        ents.append(dist.norm_entropy())
        lgaps.append(dist.logit_gap())
        context.append(tok)
    return DecodedPath(tokens, probs, gaps, ents, lgaps, finished)


class LmBackend(Protocol):
    """Capability surface required of any language-model backend."""

    @property
    def max_visible_rank(self) -> int: ...

    def encode(self, text: str) -> list[Token]: ...

    def render(self, tokens: Sequence[Token]) -> str: ...

    def next_distribution(self, context: Sequence[Token]) -> StepDistribution: ...


# ---------------------------------------------------------------------------
# Toy backend
# ---------------------------------------------------------------------------

ScriptTable = dict[str, list[tuple[str, float]]]


def parse_script(text: str) -> ScriptTable:
    """Parse a toy script.

    One record per line: ``context_key<TAB>token:prob,token:prob,...`` with
    probabilities as decimal literals, sorted non-increasing. Blank lines and
    lines starting with ``#`` are ignored. Unlisted contexts are errors at
    query time, never silent fallbacks.
    """
    table: ScriptTable = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise ValueError(f"script line {lineno}: missing tab separator")
        key, spec = line.split("\t", 1)
        if not key:
            raise ValueError(f"script line {lineno}: empty context key")
        if key in table:
            raise ValueError(f"script line {lineno}: duplicate context key {key!r}")
        cands: list[tuple[str, float]] = []
        for part in spec.split(","):
            part = part.strip()
            if not part:
                raise ValueError(f"script line {lineno}: empty candidate entry")
            text_part, _, prob_part = part.rpartition(":")
            if not text_part:
                raise ValueError(f"script line {lineno}: malformed candidate {part!r}")
            try:
                prob = float(prob_part)
            except ValueError as exc:
                raise ValueError(f"script line {lineno}: bad probability {prob_part!r}") from exc
            cands.append((text_part, prob))
        seen = {t for t, _ in cands}
        if len(seen) != len(cands):
            raise ValueError(f"script line {lineno}: duplicate candidate token")
        probs = [p for _, p in cands]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"script line {lineno}: probability outside [0, 1]")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ValueError(f"script line {lineno}: candidates not sorted non-increasing")
        if sum(probs) > 1.0 + 1e-6:
            raise ValueError(f"script line {lineno}: probabilities sum to {sum(probs)}")
        table[key] = cands
    return table


def dump_script(table: ScriptTable) -> str:
    """Render a script table back to the on-disk line format."""
    lines = []
    for key, cands in table.items():
        spec = ",".join(f"{t}:{p:g}" for t, p in cands)
        lines.append(f"{key}\t{spec}")
    return "\n".join(lines) + "\n"


class ToyLm:
    """Deterministic scripted language model over a closed whitespace vocabulary.

    The script maps a context key (space-joined token texts) to an explicit
    ranked candidate list. Immutable after construction, hence safe for
    concurrent read-only queries.
    """

    def __init__(self, table: ScriptTable):
        self._table = {k: list(v) for k, v in table.items()}
        vocab: dict[str, int] = {EOS_TEXT: EOS_ID}
        for key, cands in self._table.items():
            for word in key.split():
                vocab.setdefault(word, len(vocab))
            for text, _ in cands:
                vocab.setdefault(text, len(vocab))
        self._vocab = vocab
        self._tokens = {text: Token(tid, text) for text, tid in vocab.items()}
        self._max_rank = max((len(c) for c in self._table.values()), default=2)

    @classmethod
    def from_text(cls, text: str) -> "ToyLm":
        return cls(parse_script(text))

    @classmethod
    def from_script(cls, path: str | Path) -> "ToyLm":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @property
    def max_visible_rank(self) -> int:
        return max(2, self._max_rank)

    def encode(self, text: str) -> list[Token]:
        out = []
        for word in text.split():
            if word not in self._tokens:
                raise UnknownTokenError(f"word {word!r} not in toy vocabulary")
            out.append(self._tokens[word])
        return out

    def render(self, tokens: Sequence[Token]) -> str:
        return " ".join(t.text for t in tokens)

    def next_distribution(self, context: Sequence[Token]) -> StepDistribution:
        key = self.render(context)
        if key not in self._table:
            raise ScriptMissError(f"no script entry for context {key!r}")
        cands = [(self._tokens[t], p) for t, p in self._table[key]]
        return StepDistribution(cands, context_length=len(context))


# ---------------------------------------------------------------------------
# Record/replay cache
# ---------------------------------------------------------------------------


class JsonlCache:
    """Append-only JSONL store keyed by request hash, for deterministic re-runs."""

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self._path.exists():
            with self._path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["key"]] = rec["response"]

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, request: dict, response: dict) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = response
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "request": request, "response": response},
                                    sort_keys=True, ensure_ascii=False) + "\n")


def request_key(url: str, body: dict) -> str:
    payload = json.dumps({"url": url, "body": body}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------


@dataclass
class HttpLmConfig:
    url: str
    n_alternates: int = 20
    auth_token: str | None = None
    eos_text: str = EOS_TEXT
    timeout_s: float = 30.0
    max_retries: int = 3
    retry_backoff_s: float = 0.2
    max_context_tokens: int | None = None

    def __post_init__(self):
        if self.n_alternates < 2:
            raise ValueError("n_alternates must be >= 2")


class HttpLm:
    """Client for a completion-style HTTP+JSON endpoint exposing ranked alternates.

    Requests one token at a time with ``logprobs`` alternates; the response is
    expected in the common completions shape::

        {"choices": [{"logprobs": {"top_logprobs": [{token: logprob, ...}]},
                      ...}]}

    Log-probabilities are exponentiated to probabilities before any gap is
    computed; the raw values are kept alongside for raw-score ablations.
    Supports concurrent in-flight requests; retry state is per call.
    """

    def __init__(self, config: HttpLmConfig, cache: JsonlCache | None = None):
        self.config = config
        self.cache = cache

    @property
    def max_visible_rank(self) -> int:
        return self.config.n_alternates

    def encode(self, text: str) -> list[Token]:
        # Tokenization is server-side; the prompt travels as one opaque unit.
        return [Token(-1, text)] if text else []

    def render(self, tokens: Sequence[Token]) -> str:
        # Server token strings carry their own spacing.
        return "".join(t.text for t in tokens)

    def next_distribution(self, context: Sequence[Token]) -> StepDistribution:
        limit = self.config.max_context_tokens
        if limit is not None and len(context) > limit:
            raise ContextTooLongError(f"context of {len(context)} tokens exceeds limit {limit}")
        body = {
            "prompt": self.render(context),
            "max_tokens": 1,
            "logprobs": self.config.n_alternates,
            "temperature": 0.0,
        }
        key = request_key(self.config.url, body)
        payload = self.cache.get(key) if self.cache is not None else None
        if payload is None:
            payload = self._post(body)
            if self.cache is not None:
                self.cache.put(key, body, payload)
        return self._parse(payload, context_length=len(context))

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
                if resp.status_code < 500:
                    raise LmError(f"backend rejected request: HTTP {resp.status_code}")
                last_err = LmError(f"HTTP {resp.status_code}")
            if attempt + 1 < self.config.max_retries:
                time.sleep(self.config.retry_backoff_s * (attempt + 1))
        raise BackendUnavailableError(f"backend unreachable after "
                                      f"{self.config.max_retries} attempts: {last_err}")

    def _parse(self, payload: dict, context_length: int) -> StepDistribution:
        try:
            top = payload["choices"][0]["logprobs"]["top_logprobs"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise LmError(f"malformed completion response: {exc}") from exc
        # Sort by logprob descending; token text breaks exact ties deterministically.
        ranked = sorted(top.items(), key=lambda kv: (-kv[1], kv[0]))
        cands: list[tuple[Token, float]] = []
        lps: list[float] = []
        for text, lp in ranked:
            if not text:
                continue
            tok = eos_token() if text == self.config.eos_text else Token(-1, text)
            cands.append((tok, math.exp(lp)))
            lps.append(float(lp))
        if not cands:
            raise LmError("completion response listed no usable candidates")
        return StepDistribution(cands, context_length=context_length, logprobs=lps)
