"""Scripted toy-LM scenarios.

Each builder returns a script table (context key -> ranked candidates) plus a
JSONL-ready dataset, exercising one qualitative behaviour at desk scale:
deep-rank recovery, confidence-valley repair, span-confidence aggregation, and
known accuracy gaps between methods.
"""
from __future__ import annotations

import json
import random
from pathlib import Path

from .lm import EOS_TEXT, ScriptTable, dump_script
from .scoring import DEFAULT_TEMPLATE

TPL = DEFAULT_TEMPLATE  # joins scripts as whitespace tokens: "So the answer is:"


def _eos(table: ScriptTable, key: str) -> None:
    table[key] = [(EOS_TEXT, 1.0)]


def _answer_line(table: ScriptTable, path_key: str, answer: str,
                 top: float, runner_up: str, second: float) -> None:
    """Script the templated answer continuation for a finished path."""
    key = f"{path_key} {TPL}"
    table[key] = [(answer, top), (runner_up, second)]
    _eos(table, f"{key} {answer}")


def rank8_scenario() -> tuple[ScriptTable, list[dict]]:
    """Wrong labels cluster at ranks 1-5; the correct path sits at rank 8.

    Fibonacci seeding with k=5 probes ranks {1,2,3,5,8} and reaches the
    correct high-confidence path; sequential seeding with the same budget
    stays inside the error cluster, as does greedy decoding.
    """
    q = "Q: wars"
    t: ScriptTable = {}
    t[q] = [("euro", 0.30), ("dipl", 0.20), ("acts", 0.15), ("pact", 0.10),
            ("deal", 0.08), ("f6", 0.07), ("f7", 0.06), ("hist", 0.04)]
    for wrong in ("euro", "dipl", "acts", "pact", "deal", "f6", "f7"):
        t[f"{q} {wrong}"] = [("led", 0.8), ("saw", 0.1)]
        t[f"{q} {wrong} led"] = [("to", 0.9), ("into", 0.05)]
        t[f"{q} {wrong} led to"] = [("diplomacy", 0.6), ("treaties", 0.3)]
        _eos(t, f"{q} {wrong} led to diplomacy")
        _answer_line(t, f"{q} {wrong} led to diplomacy", "diplomacy", 0.50, "treaties", 0.45)
    t[f"{q} hist"] = [("shows", 0.7), ("told", 0.1)]
    t[f"{q} hist shows"] = [("war", 0.8), ("peace", 0.1)]
    t[f"{q} hist shows war"] = [("themes", 0.75), ("acts", 0.1)]
    t[f"{q} hist shows war themes"] = [("clearly", 0.7), ("f6", 0.1)]
    _eos(t, f"{q} hist shows war themes clearly")
    _answer_line(t, f"{q} hist shows war themes clearly", "wars", 0.95, "peace", 0.03)
    dataset = [{"id": "wars-1", "question": q, "answers": ["wars"], "task": "free"}]
    return t, dataset


def valley_scenario(n_easy: int = 7) -> tuple[ScriptTable, list[dict]]:
    """Ten questions, three with a scripted confidence valley at position 3.

    On valley questions the greedy continuation commits to a wrong answer
    right after a sharp confidence dip; re-branching one step before the dip
    reaches the correct answer with a much larger answer-segment gap.
    """
    t: ScriptTable = {}
    dataset: list[dict] = []
    for i in range(1, 4):
        q = f"Q: valley{i}"
        t[q] = [("the", 0.9), ("a", 0.1)]
        t[f"{q} the"] = [("sum", 0.5), ("diff", 0.5)]
        t[f"{q} the sum"] = [("is", 0.1), ("was", 0.05)]
        t[f"{q} the sum is"] = [("25", 0.7), ("24", 0.25)]
        _eos(t, f"{q} the sum is 25")
        _answer_line(t, f"{q} the sum is 25", "25", 0.70, "24", 0.25)
        t[f"{q} the diff"] = [("is", 0.9), ("was", 0.05)]
        t[f"{q} the diff is"] = [("24", 0.95), ("25", 0.05)]
        _eos(t, f"{q} the diff is 24")
        _answer_line(t, f"{q} the diff is 24", "24", 0.95, "25", 0.05)
        t[f"{q} a"] = [("guess", 0.8), ("stab", 0.1)]
        t[f"{q} a guess"] = [("is", 0.85), ("was", 0.1)]
        t[f"{q} a guess is"] = [("7", 0.6), ("24", 0.3)]
        _eos(t, f"{q} a guess is 7")
        _answer_line(t, f"{q} a guess is 7", "7", 0.60, "24", 0.30)
        dataset.append({"id": f"valley-{i}", "question": q,
                        "answers": ["24"], "task": "fixed-numeric"})
    for j in range(1, n_easy + 1):
        q = f"Q: easy{j}"
        t[q] = [("it", 0.9), ("ah", 0.1)]
        t[f"{q} it"] = [("is", 0.8), ("was", 0.15)]
        t[f"{q} it is"] = [("7", 0.7), ("8", 0.2)]
        _eos(t, f"{q} it is 7")
        _answer_line(t, f"{q} it is 7", "7", 0.80, "8", 0.10)
        t[f"{q} ah"] = [("ok", 0.9), ("no", 0.05)]
        t[f"{q} ah ok"] = [(EOS_TEXT, 0.95), ("7", 0.04)]
        _answer_line(t, f"{q} ah ok", "7", 0.55, "8", 0.25)
        dataset.append({"id": f"easy-{j}", "question": q,
                        "answers": ["7"], "task": "fixed-numeric"})
    return t, dataset


def span_rank4_scenario() -> tuple[ScriptTable, list[dict]]:
    """Ranks 1-3 end in the same wrong number with weak gaps; rank 4 is right.

    Span-confidence aggregation sums the wrong paths' small gaps (0.15 total)
    against the single strong correct path (0.85), so the correct answer wins.
    """
    q = "Q: toys"
    t: ScriptTable = {}
    t[q] = [("a", 0.4), ("b", 0.3), ("c", 0.2), ("d", 0.1)]
    for wrong in ("a", "b", "c"):
        t[f"{q} {wrong}"] = [("gives", 0.9), ("takes", 0.05)]
        t[f"{q} {wrong} gives"] = [("25", 0.5), ("24", 0.45)]
        _eos(t, f"{q} {wrong} gives 25")
        _answer_line(t, f"{q} {wrong} gives 25", "25", 0.50, "24", 0.45)
    t[f"{q} d"] = [("makes", 0.9), ("takes", 0.05)]
    t[f"{q} d makes"] = [("24", 0.9), ("25", 0.05)]
    _eos(t, f"{q} d makes 24")
    _answer_line(t, f"{q} d makes 24", "24", 0.90, "25", 0.05)
    dataset = [{"id": "toys-1", "question": q, "answers": ["24"],
                "task": "fixed-numeric"}]
    return t, dataset


def accuracy_scenario() -> tuple[ScriptTable, list[dict]]:
    """Five questions where multi-path decoding resolves 4/5 but greedy only 2/5."""
    t: ScriptTable = {}
    dataset: list[dict] = []
    for i in (1, 2):  # greedy right, multi-path right
        q = f"Q: both{i}"
        t[q] = [("x", 0.9), ("y", 0.05)]
        t[f"{q} x"] = [("24", 0.8), ("25", 0.1)]
        _eos(t, f"{q} x 24")
        _answer_line(t, f"{q} x 24", "24", 0.90, "25", 0.05)
        t[f"{q} y"] = [("25", 0.6), ("24", 0.2)]
        _eos(t, f"{q} y 25")
        _answer_line(t, f"{q} y 25", "25", 0.50, "24", 0.45)
        dataset.append({"id": f"both-{i}", "question": q,
                        "answers": ["24"], "task": "fixed-numeric"})
    for i in (3, 4):  # greedy wrong, the rank-2 path carries the answer
        q = f"Q: flip{i}"
        t[q] = [("u", 0.6), ("v", 0.4)]
        t[f"{q} u"] = [("25", 0.5), ("24", 0.3)]
        _eos(t, f"{q} u 25")
        _answer_line(t, f"{q} u 25", "25", 0.50, "24", 0.45)
        t[f"{q} v"] = [("24", 0.9), ("23", 0.05)]
        _eos(t, f"{q} v 24")
        _answer_line(t, f"{q} v 24", "24", 0.95, "25", 0.02)
        dataset.append({"id": f"flip-{i}", "question": q,
                        "answers": ["24"], "task": "fixed-numeric"})
    q = "Q: miss5"  # nobody gets this one
    t[q] = [("z", 0.9), ("w", 0.05)]
    t[f"{q} z"] = [("23", 0.8), ("22", 0.1)]
    _eos(t, f"{q} z 23")
    _answer_line(t, f"{q} z 23", "23", 0.80, "22", 0.10)
    t[f"{q} w"] = [("22", 0.7), ("21", 0.1)]
    _eos(t, f"{q} w 22")
    _answer_line(t, f"{q} w 22", "22", 0.60, "21", 0.20)
    dataset.append({"id": "miss-5", "question": q,
                    "answers": ["24"], "task": "fixed-numeric"})
    return t, dataset


def sampling_scenario() -> tuple[ScriptTable, list[dict]]:
    """A fully closed two-step world where every sampled branch is scripted."""
    q = "Q: s"
    t: ScriptTable = {}
    t[q] = [("go", 0.7), ("try", 0.3)]
    t[f"{q} go"] = [("24", 0.9), ("25", 0.1)]
    t[f"{q} try"] = [("25", 0.6), ("24", 0.4)]
    for first in ("go", "try"):
        for num in ("24", "25"):
            _eos(t, f"{q} {first} {num}")
    dataset = [{"id": "s-1", "question": q, "answers": ["24"],
                "task": "fixed-numeric"}]
    return t, dataset


def random_greedy_script(rng: random.Random, question: str = "Q: rand"
                         ) -> tuple[ScriptTable, str]:
    """A random script whose greedy chain (and only that chain) is fully scripted.

    Sufficient for methods that never leave the argmax continuation: greedy,
    rank-1 seeding, single beams, and top-1 sampling.
    """
    words = [f"w{i}" for i in range(10)]
    t: ScriptTable = {}
    key = question
    for _ in range(rng.randint(1, 6)):
        n_cands = rng.randint(2, 4)
        cands = rng.sample(words, n_cands)
        weights = sorted((rng.uniform(0.05, 1.0) for _ in range(n_cands)), reverse=True)
        scale = 0.99 / sum(weights)
        t[key] = [(w, round(p * scale, 6)) for w, p in zip(cands, weights)]
        key = f"{key} {cands[0]}"
    t[key] = [(EOS_TEXT, 0.9), (rng.choice(words), 0.05)]
    return t, question


def write_suite(out_dir: str | Path) -> list[Path]:
    """Materialize every scenario as a script + dataset pair under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, builder in (
        ("rank8", rank8_scenario),
        ("valley", valley_scenario),
        ("span_rank4", span_rank4_scenario),
        ("accuracy5", accuracy_scenario),
        ("sampling", sampling_scenario),
    ):
        table, dataset = builder()
        script_path = out / f"{name}.script.txt"
        data_path = out / f"{name}.dataset.jsonl"
        script_path.write_text(dump_script(table), encoding="utf-8")
        with data_path.open("w", encoding="utf-8") as fh:
            for row in dataset:
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
        written.extend([script_path, data_path])
    return written
