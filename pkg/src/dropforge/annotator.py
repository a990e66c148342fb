"""Weak-supervision search: every labelling that reproduces a gold answer."""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .decoder import SIGN_RANK, evaluate_expression
from .heads import MAX_SPANS, NUM_COUNT_CLASSES
from .ingest import MARKER, TokenizedExample, parse_number, tokenize

ABS_TOL = 1e-5
REL_TOL = 1e-5
KINDS = ("span", "addsub", "count", "negation")


def close(value: float, target: float, abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL) -> bool:
    """Closed tolerance test; passes if either the absolute or relative bound holds."""
    diff = abs(value - target)
    return diff <= abs_tol or diff <= rel_tol * abs(target)


@dataclass
class Annotation:
    matching_spans: List[Tuple[int, int]] = field(default_factory=list)
    expressions: List[Tuple[int, ...]] = field(default_factory=list)
    count_label: Optional[int] = None
    negation_indices: List[int] = field(default_factory=list)
    span_amount: Optional[int] = None

    def is_empty(self) -> bool:
        return not (
            self.matching_spans or self.expressions or self.negation_indices or self.count_label is not None
        )

    def has(self, kind: str) -> bool:
        return {
            "span": bool(self.matching_spans),
            "addsub": bool(self.expressions),
            "count": self.count_label is not None,
            "negation": bool(self.negation_indices),
        }[kind]

    def to_json(self, example_id: str) -> dict:
        return {
            "example_id": example_id,
            "matching_spans": [list(s) for s in self.matching_spans],
            "expressions": [list(e) for e in self.expressions],
            "count_label": self.count_label,
            "negation_indices": list(self.negation_indices),
            "span_amount": self.span_amount,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Annotation":
        return cls(
            [tuple(s) for s in d["matching_spans"]],
            [tuple(e) for e in d["expressions"]],
            d["count_label"],
            list(d["negation_indices"]),
            d["span_amount"],
        )


def normalize_token(text: str) -> str:
    """Lowercase; numbers lose their thousands separators."""
    value = parse_number(text)
    if value is not None:
        return text.replace(",", "")
    return text.lower()


def find_matching_spans(example: TokenizedExample, gold_texts: Iterable[str]) -> List[Tuple[int, int]]:
    """Every occurrence of a gold text inside the question or passage segment."""
    words = [normalize_token(t.text) for t in example.sequence]
    origins = [t.origin for t in example.sequence]
    found = set()
    for gold in gold_texts:
        target = [normalize_token(t.text) for t in tokenize(gold)]
        n = len(target)
        if n == 0:
            continue
        for s in range(len(words) - n + 1):
            seg = origins[s]
            if seg == MARKER or origins[s + n - 1] != seg:
                continue
            if words[s : s + n] == target:
                found.add((s, s + n - 1))
    return sorted(found)


def _ordered(vectors: Iterable[Tuple[int, ...]]) -> List[Tuple[int, ...]]:
    return sorted(vectors, key=lambda v: (sum(1 for s in v if s), tuple(SIGN_RANK[s] for s in v)))


@functools.lru_cache(maxsize=256)
def _index_tables(n: int, k: int):
    combos = np.array(list(itertools.combinations(range(n), k)), dtype=int).reshape(-1, k)
    signs = np.array(list(itertools.product((1, -1), repeat=k)), dtype=int)
    return combos, signs


def search_expressions(
    numbers: Sequence,
    target: float,
    max_terms: int = 3,
    abs_tol: float = ABS_TOL,
    rel_tol: float = REL_TOL,
) -> List[Tuple[int, ...]]:
    """All sign vectors with 1..max_terms nonzero signs that evaluate to ``target``.

    Ordered by number of terms, then lexicographically (zero < plus < minus).
    """
    values = np.array([n.value if hasattr(n, "value") else float(n) for n in numbers], dtype=float)
    N = len(values)
    tol = max(abs_tol, rel_tol * abs(target))
    # loose prefilter; the scalar re-check below decides
    slack = 1e-9 * (float(np.abs(values).sum()) + abs(target)) + 1e-12
    hits = []
    for k in range(1, min(max_terms, N) + 1):
        combos, sign_sets = _index_tables(N, k)
        picked = values[combos]  # (C, k)
        sums = picked @ sign_sets.T  # (C, 2^k)
        ci, si = np.nonzero(np.abs(sums - target) <= tol + slack)
        for c, s in zip(ci, si):
            vec = [0] * N
            for idx, sign in zip(combos[c], sign_sets[s]):
                vec[idx] = int(sign)
            if close(evaluate_expression(vec, values), target, abs_tol, rel_tol):
                hits.append(tuple(vec))
    return _ordered(hits)


def search_negations(numbers: Sequence, target: float, abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL) -> List[int]:
    return [i for i, n in enumerate(numbers) if close(100.0 - n.value, target, abs_tol, rel_tol)]


def search_count(target) -> Optional[int]:
    value = parse_number(target.strip()) if isinstance(target, str) else float(target)
    if value is None or value != int(value):
        return None
    value = int(value)
    return value if 0 <= value < NUM_COUNT_CLASSES else None


def gold_number(text: str) -> Optional[float]:
    text = text.strip()
    if text.startswith("-"):
        value = parse_number(text[1:])
        return None if value is None else -value
    return parse_number(text)


def annotate_example(example: TokenizedExample, max_terms: int = 3) -> Annotation:
    ann = Annotation()
    spans, exprs, negs = set(), set(), set()
    for gold in example.golds:
        spans.update(find_matching_spans(example, gold.texts()))
        if gold.kind == "spans" and ann.span_amount is None:
            ann.span_amount = min(len(set(gold.span_texts)), MAX_SPANS)
        if gold.kind != "number":
            continue
        target = gold_number(gold.number_text)
        if target is None:
            continue
        exprs.update(search_expressions(example.numbers, target, max_terms))
        negs.update(search_negations(example.numbers, target))
        if ann.count_label is None:
            ann.count_label = search_count(gold.number_text)
    ann.matching_spans = sorted(spans)
    ann.expressions = _ordered(exprs)
    ann.negation_indices = sorted(negs)
    return ann


def label_candidates(beam, gold_value: float, tol: float = ABS_TOL) -> List[str]:
    """Mark each beam candidate ``correct`` or ``wrong`` against the gold value."""
    return ["correct" if abs(e.value - gold_value) <= tol else "wrong" for e in beam]


@dataclass
class CorpusStats:
    kept: int = 0
    skipped: int = 0

    @property
    def ratio(self) -> float:
        total = self.kept + self.skipped
        return 100.0 * self.kept / total if total else 0.0

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(self.kept + other.kept, self.skipped + other.skipped)


def corpus_stats(annotations: Iterable[Annotation], kinds: Sequence[str] = KINDS) -> CorpusStats:
    unknown = set(kinds) - set(KINDS)
    if unknown:
        raise ValueError(f"unknown annotation kinds {sorted(unknown)}")
    stats = CorpusStats()
    for ann in annotations:
        if any(ann.has(k) for k in kinds):
            stats.kept += 1
        else:
            stats.skipped += 1
    return stats


# Cumulative configurations reported in the usual annotation-coverage table.
TABLE_CONFIGS = (
    ("Span", ("span",)),
    ("+ Add/Sub", ("span", "addsub")),
    ("+ Add/Sub + Count", ("span", "addsub", "count")),
    ("+ Add/Sub + Count + Negation", KINDS),
)


def format_stats_table(rows) -> str:
    lines = [f"{'Configuration':<30} {'Skipped':>8} {'Kept':>8} {'Ratio (%)':>10}"]
    for label, st in rows:
        lines.append(f"{label:<30} {st.skipped:>8} {st.kept:>8} {st.ratio:>10.1f}")
    return "\n".join(lines)

