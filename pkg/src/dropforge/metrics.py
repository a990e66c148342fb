"""Exact match and bag-aligned F1 with DROP answer semantics.

Answers are bags of entries (one entry per span).  Each entry is a multiset
of normalized tokens plus the set of numbers it mentions; two bags are
compared under the best one-to-one alignment of their entries.
"""

from __future__ import annotations

import itertools
import re
import string
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .decoder import render_number
from .ingest import GoldAnswer, parse_number

ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = frozenset(string.punctuation)
_SPLIT_RE = re.compile(r"[\s\-]+")
_PLAIN_NUMBER_RE = re.compile(r"^\d+(?:\.\d+)?$|^\.\d+$")
EXHAUSTIVE_LIMIT = 8


@dataclass(frozen=True)
class BagEntry:
    tokens: Tuple[str, ...]
    numbers: frozenset

    @property
    def key(self) -> str:
        return " ".join(self.tokens)


EMPTY_ENTRY = BagEntry((), frozenset())


def _as_number(token: str):
    value = parse_number(token)
    if value is None and _PLAIN_NUMBER_RE.match(token):
        value = float(token)
    return value


def normalize_answer(text: str) -> BagEntry:
    tokens, numbers = [], set()
    for raw in _SPLIT_RE.split(text.lower()):
        value = _as_number(raw)
        if value is None:
            raw = "".join(ch for ch in raw if ch not in _PUNCT)
            value = _as_number(raw)
        if value is not None:
            raw = render_number(value)
            numbers.add(raw)
        if raw and raw not in ARTICLES:
            tokens.append(raw)
    return BagEntry(tuple(tokens), frozenset(numbers))


def answer_bag(texts: Iterable[str]) -> List[BagEntry]:
    return [normalize_answer(t) for t in texts]


def gold_bag(gold: GoldAnswer) -> List[BagEntry]:
    # a date collapses to one entry made of its non-empty fields
    return answer_bag(gold.texts())


def pair_f1(pred: BagEntry, gold: BagEntry) -> float:
    if gold.numbers and gold.numbers != pred.numbers:
        return 0.0
    if not pred.tokens and not gold.tokens:
        return 1.0
    if not pred.tokens or not gold.tokens:
        return 0.0
    common = sum((Counter(pred.tokens) & Counter(gold.tokens)).values())
    return 2.0 * common / (len(pred.tokens) + len(gold.tokens))


def _score_matrix(pred: Sequence[BagEntry], gold: Sequence[BagEntry]) -> np.ndarray:
    n = max(len(pred), len(gold))
    pred = list(pred) + [EMPTY_ENTRY] * (n - len(pred))
    gold = list(gold) + [EMPTY_ENTRY] * (n - len(gold))
    # padding pairs with a real entry always score zero
    return np.array(
        [[pair_f1(p, g) if (p is not EMPTY_ENTRY and g is not EMPTY_ENTRY) else 0.0 for g in gold] for p in pred]
    ).reshape(n, n)


@lru_cache(maxsize=EXHAUSTIVE_LIMIT + 1)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=int).reshape(-1, n)


def best_alignment_exhaustive(scores: np.ndarray) -> float:
    n = scores.shape[0]
    if n == 0:
        return 0.0
    perms = _permutations(n)
    return float(scores[np.arange(n), perms].sum(axis=1).max())


def best_alignment_assignment(scores: np.ndarray) -> float:
    if scores.shape[0] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return float(scores[rows, cols].sum())


def align_bags(pred: Sequence[BagEntry], gold: Sequence[BagEntry]) -> float:
    """F1 in [0, 100] under the best one-to-one entry alignment."""
    n = max(len(pred), len(gold))
    if n == 0:
        return 100.0
    scores = _score_matrix(pred, gold)
    total = best_alignment_exhaustive(scores) if n <= EXHAUSTIVE_LIMIT else best_alignment_assignment(scores)
    return 100.0 * total / n


def _exact(pred: Sequence[BagEntry], gold: Sequence[BagEntry]) -> bool:
    # multiset comparison; a plain set would call ["a", "a", "a a"] equal to ["a", "a a", "a a"]
    return Counter(e.key for e in pred) == Counter(e.key for e in gold)


def evaluate_example(pred_texts: Sequence[str], golds: Sequence[GoldAnswer]) -> Tuple[int, float]:
    """Best (EM, F1) of a prediction over all gold answers."""
    pred = answer_bag(pred_texts)
    em, f1 = 0, 0.0
    for gold in golds:
        bag = gold_bag(gold)
        em = max(em, int(_exact(pred, bag)))
        f1 = max(f1, align_bags(pred, bag))
    return em, f1


def gold_category(gold: GoldAnswer) -> str:
    if gold.kind == "spans":
        return "multi-span" if len(gold.span_texts) > 1 else "single-span"
    return gold.kind


def evaluate_corpus(predictions: Mapping[str, Sequence[str]], golds: Mapping[str, Sequence[GoldAnswer]]) -> Dict:
    """Mean EM (as a percentage) and mean F1 over every gold example.

    Examples without a prediction are scored as an empty answer.
    """
    totals: Dict[str, List[float]] = {}
    all_em, all_f1 = [], []
    for example_id, gold_list in golds.items():
        em, f1 = evaluate_example(predictions.get(example_id, []), gold_list)
        all_em.append(em)
        all_f1.append(f1)
        cat = gold_category(gold_list[0])
        bucket = totals.setdefault(cat, [0, 0.0, 0.0])
        bucket[0] += 1
        bucket[1] += em
        bucket[2] += f1
    n = len(all_em)
    return {
        "count": n,
        "em": 100.0 * sum(all_em) / n if n else 0.0,
        "f1": sum(all_f1) / n if n else 0.0,
        "per_type": {
            cat: {"count": c, "em": 100.0 * e / c, "f1": f / c} for cat, (c, e, f) in sorted(totals.items())
        },
    }
