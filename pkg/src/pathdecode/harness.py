"""Benchmark harness: dataset ingestion, answer extraction, metrics, orchestration.

Datasets are JSONL with fields {id, question, context?, answers: [str],
task: fixed-numeric|fixed-binary|free}. Each (example, seed) pair yields one
prediction record; records go to ``records.jsonl``, per-method means to
``summary.csv``, and wall times to a separate ``timings.csv`` so record files
stay byte-identical across replayed runs.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import random
import re
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .aggregate import (
    AggregationConfig,
    Embedder,
    HashEmbedder,
    HttpEmbedder,
    HttpEmbedderConfig,
    greedy_cluster,
    majority_vote,
    maxpath,
    representative_variant,
    select_cluster,
)
from .baselines import (
    SamplerConfig,
    beam_search_path,
    cot_decoding_paths,
    greedy_path,
    sample_path,
)
from .explorer import BranchConfig, explore
from .lm import DecodedPath, HttpLm, HttpLmConfig, JsonlCache, LmBackend, ToyLm
from .scoring import (
    BINARY_RE,
    NUMBER_RE,
    binary_token_span,
    cot_span_confidence,
    gcot_confidence,
    numeric_token_span,
    spanalign_confidence,
    split_answer,
    variant_confidence,
)

logger = logging.getLogger(__name__)

TASK_KINDS = ("fixed-numeric", "fixed-binary", "free")
METHODS = ("greedy", "temp", "topk", "beam", "self-consistency",
           "cot-decoding", "gcot", "gcot-spanalign")
CONFIDENCES = ("gap", "entropy", "logit")


class DatasetError(Exception):
    """A dataset file is missing, empty, or malformed."""


@dataclass
class QaExample:
    id: str
    question: str
    gold_answers: list[str]
    task_kind: str
    context: str | None = None

    def prompt(self, prefix: str = "") -> str:
        parts = [p for p in (prefix, self.context, self.question) if p]
        return " ".join(parts)


def load_dataset(path: str | Path) -> list[QaExample]:
    """Load and validate a JSONL dataset, reporting malformed lines by number."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    examples: list[QaExample] = []
    seen_ids: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                ex = QaExample(
                    id=str(obj["id"]),
                    question=str(obj["question"]),
                    gold_answers=[str(a) for a in obj["answers"]],
                    task_kind=str(obj["task"]),
                    context=str(obj["context"]) if obj.get("context") else None,
                )
            except KeyError as exc:
                raise DatasetError(f"{path}:{lineno}: missing field {exc}") from exc
            if not ex.gold_answers:
                raise DatasetError(f"{path}:{lineno}: answers must be non-empty")
            if ex.task_kind not in TASK_KINDS:
                raise DatasetError(f"{path}:{lineno}: unknown task {ex.task_kind!r}")
            if ex.id in seen_ids:
                logger.warning("%s:%d: duplicate example id %r (keeping both)",
                               path, lineno, ex.id)
            seen_ids.add(ex.id)
            examples.append(ex)
    if not examples:
        raise DatasetError(f"dataset {path} contains no examples")
    return examples


# ---------------------------------------------------------------------------
# Answer extraction and metrics
# ---------------------------------------------------------------------------


def extract_numeric_answer(text: str) -> str | None:
    """Last number in the text, commas stripped; None when absent."""
    matches = NUMBER_RE.findall(text)
    return matches[-1].replace(",", "") if matches else None


def extract_binary_answer(text: str) -> str | None:
    """Last word-bounded yes/no (casefolded); None when absent."""
    matches = BINARY_RE.findall(text.casefold())
    return matches[-1] if matches else None


def _collapse_ws(text: str) -> str:
    return " ".join(text.split())


def match_metric(response: str, gold_answers: Sequence[str]) -> int:
    """1 iff any gold answer is a substring of the response (casefolded, ws-collapsed)."""
    hay = _collapse_ws(response).casefold()
    return int(any(_collapse_ws(g).casefold() in hay for g in gold_answers))


_BLEU_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def bleu_tokenize(text: str) -> list[str]:
    """Whitespace tokens with punctuation split into separate tokens."""
    return _BLEU_TOKEN_RE.findall(text)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Sequence[str]) -> float:
    """4-gram BLEU with brevity penalty and add-one smoothing for short candidates.

    Orders with no n-grams or no matches use (clipped+1)/(total+1), so an
    exact copy of a reference scores 1.0 at any length. Empty candidates
    score 0.
    """
    cand = bleu_tokenize(candidate)
    refs = [bleu_tokenize(r) for r in references if r is not None]
    if not cand or not refs:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        counts = _ngram_counts(cand, n)
        total = sum(counts.values())
        clipped = 0
        for gram, c in counts.items():
            best = max(_ngram_counts(ref, n).get(gram, 0) for ref in refs)
            clipped += min(c, best)
        if total > 0 and clipped > 0:
            p = clipped / total
        else:
            p = (clipped + 1) / (total + 1)
        log_sum += 0.25 * math.log(p)
    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def answers_equal(pred: str | None, gold: str, task_kind: str) -> bool:
    if pred is None:
        return False
    if task_kind == "fixed-numeric":
        try:
            return float(pred) == float(gold)
        except ValueError:
            pass
    return pred.casefold().strip() == gold.casefold().strip()


def accuracy_metric(selected: str, example: QaExample) -> int:
    """Rule-extracted answer vs ground truth; extraction is evaluation-only."""
    if example.task_kind == "fixed-numeric":
        pred = extract_numeric_answer(selected)
    elif example.task_kind == "fixed-binary":
        pred = extract_binary_answer(selected)
    else:
        raise ValueError("accuracy is defined for fixed-answer tasks only")
    return int(any(answers_equal(pred, g, example.task_kind) for g in example.gold_answers))


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    method: str = "gcot"
    branch: BranchConfig = field(default_factory=BranchConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    confidence: str = "gap"
    spanalign_mode: str = "last"
    template: str = "So the answer is:"
    dataset: str | None = None
    backend: str = ""
    embedder: str = "hash"
    runs: int = 3
    seed: int = 0
    out_dir: str = "runs"
    cache: str | None = None
    max_path_tokens: int = 256
    max_answer_tokens: int = 32
    prompt_prefix: str = ""

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.confidence not in CONFIDENCES:
            raise ValueError(f"unknown confidence {self.confidence!r}")
        if self.spanalign_mode not in ("last", "mean"):
            raise ValueError(f"unknown spanalign mode {self.spanalign_mode!r}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        self.branch.validate()
        self.aggregation.validate()
        self.sampler.validate()

    def config_hash(self, seed: int) -> str:
        payload = asdict(self)
        payload.pop("out_dir")
        payload.pop("cache")
        payload["record_seed"] = seed
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def derive_rng(*parts: object) -> random.Random:
    """Counter-style rng derivation so partial re-runs stay stable."""
    blob = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(blob.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def make_backend(spec: str, cache: JsonlCache | None = None) -> LmBackend:
    if spec.startswith("toy:"):
        return ToyLm.from_script(spec[len("toy:"):])
    if spec.startswith(("http://", "https://")):
        return HttpLm(HttpLmConfig(url=spec), cache=cache)
    if spec.startswith("http:"):
        return HttpLm(HttpLmConfig(url=spec[len("http:"):]), cache=cache)
    raise ValueError(f"unknown backend spec {spec!r} (expected toy:<script> or http:<url>)")


def make_embedder(spec: str, cache: JsonlCache | None = None) -> Embedder:
    if spec == "hash":
        return HashEmbedder()
    if spec.startswith(("http://", "https://")):
        return HttpEmbedder(HttpEmbedderConfig(url=spec), cache=cache)
    if spec.startswith("http:"):
        return HttpEmbedder(HttpEmbedderConfig(url=spec[len("http:"):]), cache=cache)
    raise ValueError(f"unknown embedder spec {spec!r} (expected hash or http:<url>)")


def _span_finder_for(task_kind: str):
    if task_kind == "fixed-numeric":
        return numeric_token_span
    if task_kind == "fixed-binary":
        return binary_token_span
    return None


def _extractor_for(task_kind: str) -> Callable[[str], str | None] | None:
    if task_kind == "fixed-numeric":
        return extract_numeric_answer
    if task_kind == "fixed-binary":
        return extract_binary_answer
    return None


# ---------------------------------------------------------------------------
# Method dispatch
# ---------------------------------------------------------------------------


@dataclass
class MethodOutcome:
    selected: str
    paths: list[dict]
    triggered: bool | None = None
    trigger_count: int = 0
    counterfactual_selected: str | None = None


def _path_info(path: DecodedPath, backend: LmBackend, answer: str | None = None,
               score: float | None = None) -> dict:
    info: dict = {
        "text": backend.render(path.tokens),
        "seed_rank": path.seed_rank,
        "backtrack_at": path.backtrack_at,
        "finished": path.finished,
    }
    if answer is not None:
        info["answer"] = answer
    if score is not None:
        info["score"] = score
    return info


def _score_paths(question, paths, cfg: RunConfig, backend, spanalign: bool):
    splits = [split_answer(question, p, cfg.template, backend, cfg.max_answer_tokens)
              for p in paths]
    cohort = [len(s.gen1.tokens) for s in splits]
    scores = []
    for s in splits:
        if spanalign:
            scores.append(spanalign_confidence(s, cfg.spanalign_mode))
        elif cfg.confidence == "gap":
            scores.append(gcot_confidence(s, cohort))
        else:
            scores.append(variant_confidence(s, cfg.confidence))
    answers = [backend.render(s.gen2.tokens) for s in splits]
    return splits, answers, [sc.value for sc in scores]


def _aggregate(answers: list[str], values: list[float], cfg: RunConfig,
               embedder: Embedder) -> str:
    strategy = cfg.aggregation.strategy
    if strategy == "maxpath":
        return maxpath(answers, values)
    if strategy == "majority":
        return majority_vote(answers)
    clusters = greedy_cluster(answers, values, cfg.aggregation, embedder)
    winner = clusters[select_cluster(clusters)]
    return representative_variant(winner, cfg.aggregation.representative, embedder)


def _gcot_outcome(question, cfg: RunConfig, backend, embedder, rng,
                  spanalign: bool) -> MethodOutcome:
    result = explore(question, cfg.branch, backend, rng=rng,
                     max_tokens=cfg.max_path_tokens)
    _, answers, values = _score_paths(question, result.paths, cfg, backend, spanalign)
    selected = _aggregate(answers, values, cfg, embedder)
    triggered = result.trigger_count > 0
    counterfactual = None
    if triggered:
        # No-backtracking counterfactual for trigger-success accounting.
        plain_cfg = replace(cfg, branch=replace(cfg.branch, backtracking="none"))
        plain = explore(question, plain_cfg.branch, backend, rng=derive_rng("cf"),
                        max_tokens=cfg.max_path_tokens)
        _, cf_answers, cf_values = _score_paths(question, plain.paths, plain_cfg,
                                                backend, spanalign)
        counterfactual = _aggregate(cf_answers, cf_values, plain_cfg, embedder)
    paths = [_path_info(p, backend, answer=a, score=v)
             for p, a, v in zip(result.paths, answers, values)]
    return MethodOutcome(selected=selected, paths=paths, triggered=triggered,
                         trigger_count=result.trigger_count,
                         counterfactual_selected=counterfactual)


def _cot_decoding_outcome(question, example: QaExample, cfg: RunConfig,
                          backend) -> MethodOutcome:
    paths = cot_decoding_paths(question, cfg.sampler.top_k, backend,
                               cfg.max_path_tokens)
    finder = _span_finder_for(example.task_kind)
    sums: dict[str, float] = {}
    infos = []
    if finder is not None:
        for path in paths:
            span = finder(path.tokens)
            if span is None:
                infos.append(_path_info(path, backend, answer=None, score=0.0))
                continue
            score = cot_span_confidence(path, (span.start, span.end))
            sums[span.text] = sums.get(span.text, 0.0) + score.value
            infos.append(_path_info(path, backend, answer=span.text, score=score.value))
    else:
        # Free QA: prompt-based spans via the extraction template.
        for path in paths:
            split = split_answer(question, path, cfg.template, backend,
                                 cfg.max_answer_tokens)
            answer = backend.render(split.gen2.tokens)
            gaps = split.gen2.top2_gaps
            value = sum(gaps) / len(gaps) if gaps else 0.0
            if answer:
                sums[answer] = sums.get(answer, 0.0) + value
            infos.append(_path_info(path, backend, answer=answer, score=value))
    if sums:
        selected = max(sums, key=lambda s: sums[s])
    else:
        selected = backend.render(paths[0].tokens)
    return MethodOutcome(selected=selected, paths=infos)


def decode_example(example: QaExample, cfg: RunConfig, backend: LmBackend,
                   embedder: Embedder, seed: int) -> MethodOutcome:
    """Run the configured decoding method on one example."""
    question = backend.encode(example.prompt(cfg.prompt_prefix))
    rng = derive_rng(seed, cfg.method, example.id)
    method = cfg.method
    if method == "greedy":
        path = greedy_path(question, backend, cfg.max_path_tokens)
        return MethodOutcome(backend.render(path.tokens), [_path_info(path, backend)])
    if method in ("temp", "topk"):
        mode = "temperature" if method == "temp" else "topk"
        path = sample_path(question, cfg.sampler, backend, rng, mode)
        return MethodOutcome(backend.render(path.tokens), [_path_info(path, backend)])
    if method == "beam":
        path = beam_search_path(question, cfg.sampler, backend)
        return MethodOutcome(backend.render(path.tokens), [_path_info(path, backend)])
    if method == "self-consistency":
        extractor = _extractor_for(example.task_kind)
        answers = []
        infos = []
        for _ in range(cfg.sampler.sc_samples):
            path = sample_path(question, cfg.sampler, backend, rng, "temperature")
            text = backend.render(path.tokens)
            answer = (extractor(text) or "") if extractor else text
            answers.append(answer)
            infos.append(_path_info(path, backend, answer=answer))
        return MethodOutcome(majority_vote(answers), infos)
    if method == "cot-decoding":
        return _cot_decoding_outcome(question, example, cfg, backend)
    if method in ("gcot", "gcot-spanalign"):
        return _gcot_outcome(question, cfg, backend, embedder, rng,
                             spanalign=method == "gcot-spanalign")
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Benchmark runs
# ---------------------------------------------------------------------------


@dataclass
class PredictionRecord:
    example_id: str
    method: str
    seed: int
    selected: str
    metrics: dict
    paths: list[dict]
    config_hash: str
    triggered: bool | None
    trigger_count: int
    counterfactual_selected: str | None
    counterfactual_correct: bool | None
    correct: bool
    error: str | None = None
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        payload = {k: v for k, v in self.__dict__.items() if k != "wall_time_s"}
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def _evaluate(selected: str, example: QaExample) -> tuple[dict, bool]:
    if example.task_kind == "free":
        m = match_metric(selected, example.gold_answers)
        metrics = {"match": m, "bleu": bleu(selected, example.gold_answers)}
        return metrics, bool(m)
    acc = accuracy_metric(selected, example)
    return {"accuracy": acc}, bool(acc)


@dataclass
class RunSummary:
    rows: list[dict]
    n_records: int
    n_failures: int
    records_path: Path | None = None
    summary_path: Path | None = None

    @property
    def failure_rate(self) -> float:
        total = self.n_records + self.n_failures
        return self.n_failures / total if total else 0.0


def run_benchmark(cfg: RunConfig) -> RunSummary:
    """Decode, score, and evaluate every (example, seed) pair; persist records.

    Per-example failures are recorded and skipped; the summary flags runs
    where more than 10% of pairs failed.
    """
    cfg.validate()
    if not cfg.dataset:
        raise DatasetError("no dataset configured")
    cache = JsonlCache(cfg.cache) if cfg.cache else None
    backend = make_backend(cfg.backend, cache)
    embedder = make_embedder(cfg.embedder, cache)
    examples = load_dataset(cfg.dataset)
    seeds = [cfg.seed + i for i in range(cfg.runs)]

    records: list[PredictionRecord] = []
    n_failures = 0
    for example in examples:
        for seed in seeds:
            started = time.perf_counter()
            try:
                outcome = decode_example(example, cfg, backend, embedder, seed)
                metrics, correct = _evaluate(outcome.selected, example)
                cf_correct = None
                if outcome.counterfactual_selected is not None:
                    _, cf_correct = _evaluate(outcome.counterfactual_selected, example)
                rec = PredictionRecord(
                    example_id=example.id, method=cfg.method, seed=seed,
                    selected=outcome.selected, metrics=metrics,
                    paths=outcome.paths, config_hash=cfg.config_hash(seed),
                    triggered=outcome.triggered, trigger_count=outcome.trigger_count,
                    counterfactual_selected=outcome.counterfactual_selected,
                    counterfactual_correct=cf_correct, correct=correct,
                    wall_time_s=time.perf_counter() - started,
                )
            except Exception as exc:  # noqa: BLE001 - failures must not abort the run
                logger.warning("example %s seed %d failed: %s", example.id, seed, exc)
                n_failures += 1
                rec = PredictionRecord(
                    example_id=example.id, method=cfg.method, seed=seed,
                    selected="", metrics={}, paths=[],
                    config_hash=cfg.config_hash(seed), triggered=None,
                    trigger_count=0, counterfactual_selected=None,
                    counterfactual_correct=None, correct=False,
                    error=f"{type(exc).__name__}: {exc}",
                    wall_time_s=time.perf_counter() - started,
                )
            records.append(rec)

    dataset_name = Path(cfg.dataset).stem
    rows = summarize(records, cfg.method, dataset_name, seeds)
    summary = RunSummary(rows=rows, n_records=len(records) - n_failures,
                         n_failures=n_failures)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / "records.jsonl"
    with records_path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    with (out / "timings.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "seed", "wall_time_s"])
        for rec in records:
            writer.writerow([rec.example_id, rec.seed, f"{rec.wall_time_s:.6f}"])
    summary_path = out / "summary.csv"
    write_summary(rows, summary_path)
    summary.records_path = records_path
    summary.summary_path = summary_path
    return summary


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.12g}"


def summarize(records: Sequence[PredictionRecord], method: str, dataset: str,
              seeds: Sequence[int]) -> list[dict]:
    """One row per metric: overall mean plus per-seed means and trigger stats."""
    ok = [r for r in records if r.error is None]
    metric_names: list[str] = []
    for r in ok:
        for name in r.metrics:
            if name not in metric_names:
                metric_names.append(name)
    flagged = [r for r in ok if r.triggered is not None]
    trigger_rate = (math.fsum(1.0 for r in flagged if r.triggered) / len(flagged)
                    if flagged else None)
    fired = [r for r in flagged if r.triggered]
    success = None
    if fired:
        fixed = [r for r in fired
                 if r.correct and r.counterfactual_correct is False]
        success = len(fixed) / len(fired)
    rows = []
    for name in metric_names:
        vals = [r.metrics[name] for r in ok if name in r.metrics]
        per_seed = []
        for seed in seeds:
            sv = [r.metrics[name] for r in ok if r.seed == seed and name in r.metrics]
            per_seed.append(math.fsum(sv) / len(sv) if sv else None)
        rows.append({
            "method": method,
            "dataset": dataset,
            "metric": name,
            "mean": math.fsum(vals) / len(vals) if vals else None,
            "per_seed": "|".join(_fmt(v) for v in per_seed),
            "trigger_rate": trigger_rate,
            "success_given_trigger": success,
        })
    return rows


SUMMARY_COLUMNS = ["method", "dataset", "metric", "mean", "per_seed",
                   "trigger_rate", "success_given_trigger"]


def write_summary(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([
                row["method"], row["dataset"], row["metric"], _fmt(row["mean"]),
                row["per_seed"], _fmt(row["trigger_rate"]),
                _fmt(row["success_given_trigger"]),
            ])
