"""Turn head distributions into a final answer.

The entry point is :func:`decode_answer`, which dispatches on the answer type
and then runs one of: non-maximum-suppression multi-span extraction, sign
beam search with reranking, count argmax, or negation ("100 minus x").
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .heads import ANSWER_TYPES, MAX_SIGNED, MAX_SPANS, HeadOutputs
from .ingest import MARKER, Token

# Lexicographic rank of a sign: zero < plus < minus.
SIGN_RANK = {0: 0, 1: 1, -1: 2}
SIGN_COLUMN = {0: 0, 1: 1, -1: 2}
SIGNS = (0, 1, -1)


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 3
    max_signed: int = MAX_SIGNED
    max_spans: int = MAX_SPANS
    top_k: int = 20
    max_span_len: int = 10

    def __post_init__(self):
        if self.top_k < self.max_spans:
            raise ValueError(f"top_k={self.top_k} must be at least max_spans={self.max_spans}")
        if min(self.beam, self.max_signed, self.max_spans, self.max_span_len) < 1:
            raise ValueError("beam, max_signed, max_spans and max_span_len must be positive")


@dataclass(frozen=True)
class SpanPrediction:
    start: int
    end: int
    score: float
    text: str
    words: Tuple[str, ...] = ()


@dataclass(frozen=True)
class SignedExpression:
    signs: Tuple[int, ...]
    cumulative_prob: float
    value: float = float("nan")

    @property
    def num_signed(self) -> int:
        return sum(1 for s in self.signs if s)


@dataclass
class AnswerPrediction:
    answer_type: str
    span_texts: List[str] = field(default_factory=list)
    value: Optional[float] = None
    trace: dict = field(default_factory=dict)

    @property
    def answer_texts(self) -> List[str]:
        if self.answer_type == "span":
            return list(self.span_texts)
        return [render_number(self.value)]

    def to_json(self, example_id: str) -> dict:
        return {
            "example_id": example_id,
            "answer_type": self.answer_type,
            "answer_texts": self.answer_texts,
            "trace": self.trace,
        }


def render_number(value: float) -> str:
    """Integers print without a decimal point; everything else in shortest decimal form."""
    if abs(value - round(value)) <= 1e-6:
        return str(int(round(value)))
    text = f"{value:.10f}".rstrip("0").rstrip(".")
    return text if text not in ("-0", "") else "0"


def detokenize(sequence: Sequence[Token], start: int, end: int) -> str:
    """Rebuild surface text for ``sequence[start..end]`` from character offsets."""
    parts = [sequence[start].text]
    for prev, tok in zip(sequence[start:end], sequence[start + 1 : end + 1]):
        if tok.char_start is not None and prev.char_end is not None and tok.char_start > prev.char_end:
            parts.append(" ")
        parts.append(tok.text)
    return "".join(parts)


def _segments(sequence: Sequence[Token]) -> np.ndarray:
    # segment id per position; markers get -1
    seg = np.empty(len(sequence), dtype=int)
    current = 0
    for i, tok in enumerate(sequence):
        if tok.origin == MARKER:
            seg[i] = -1
            if i > 0:
                current += 1
        else:
            seg[i] = current
    return seg


def top_k_spans(p_start, p_end, K: int, max_len: int, sequence: Sequence[Token]) -> List[SpanPrediction]:
    """The ``K`` best spans by ``p_start[s] * p_end[e]``.

    Valid spans have ``s <= e``, at most ``max_len`` tokens, no marker
    endpoint and stay within one segment.  Ties go to the smaller start,
    then the smaller end.
    """
    if K < 1:
        raise ValueError("K must be positive")
    p_start, p_end = np.asarray(p_start, float), np.asarray(p_end, float)
    T = len(sequence)
    if p_start.shape != (T,) or p_end.shape != (T,):
        raise ValueError("distributions must match the sequence length")
    seg = _segments(sequence)
    s_idx, e_idx = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
    valid = (
        (s_idx <= e_idx)
        & (e_idx - s_idx < max_len)
        & (seg[s_idx] >= 0)
        & (seg[s_idx] == seg[e_idx])
    )
    s, e = s_idx[valid], e_idx[valid]
    if s.size == 0:
        raise ValueError("no valid span in the sequence")
    scores = p_start[s] * p_end[e]
    order = np.lexsort((e, s, -scores))[:K]
    out = []
    for i in order:
        a, b = int(s[i]), int(e[i])
        words = tuple(t.text.lower() for t in sequence[a : b + 1])
        out.append(SpanPrediction(a, b, float(scores[i]), detokenize(sequence, a, b), words))
    return out


def span_text_f1(a: SpanPrediction, b: SpanPrediction) -> float:
    """Bag-of-words F1 between two spans' lowercased tokens."""
    if not a.words or not b.words:
        return 0.0
    common = sum((Counter(a.words) & Counter(b.words)).values())
    return 2.0 * common / (len(a.words) + len(b.words))


def nms_multi_span(
    p_start, p_end, p_span_count, K: int, sequence: Sequence[Token], max_len: int = 10
) -> List[SpanPrediction]:
    """Greedy non-overlapping span selection up to the predicted span amount."""
    candidates = top_k_spans(p_start, p_end, K, max_len, sequence)
    t = int(np.argmax(p_span_count)) + 1
    selected: List[SpanPrediction] = []
    while candidates and len(selected) < t:
        best = candidates.pop(0)
        selected.append(best)
        candidates = [c for c in candidates if span_text_f1(best, c) <= 0]
    return selected


def _lex_key(signs: Sequence[int]) -> Tuple[int, ...]:
    return tuple(SIGN_RANK[s] for s in signs)


def beam_search_signs(p_sign, beam: int = 3, max_signed: int = MAX_SIGNED) -> List[SignedExpression]:
    """Top-``beam`` sign assignments with between 1 and ``max_signed`` nonzero signs.

    Prefixes are bucketed by how many nonzero signs they carry and each
    bucket keeps its own top-``beam``.  A pruned prefix is beaten by
    ``beam`` others with the same count, and each of those extends with the
    same suffix into a better feasible assignment, so the result is exact.
    """
    p_sign = np.asarray(p_sign, float)
    if beam < 1 or max_signed < 1:
        raise ValueError("beam and max_signed must be positive")
    if p_sign.ndim != 2 or len(p_sign) == 0:
        return []
    buckets: List[List[Tuple[float, Tuple[int, ...]]]] = [[] for _ in range(max_signed + 1)]
    buckets[0] = [(1.0, ())]
    for row in p_sign:
        grown: List[List[Tuple[float, Tuple[int, ...]]]] = [[] for _ in range(max_signed + 1)]
        for count, prefixes in enumerate(buckets):
            for prob, signs in prefixes:
                for s in SIGNS:
                    c = count + (s != 0)
                    if c <= max_signed:
                        grown[c].append((prob * row[SIGN_COLUMN[s]], signs + (s,)))
        buckets = [
            sorted(b, key=lambda item: (-item[0], _lex_key(item[1])))[:beam] for b in grown
        ]
    finals = sorted(
        (item for b in buckets[1:] for item in b), key=lambda item: (-item[0], _lex_key(item[1]))
    )[:beam]
    return [SignedExpression(signs, prob) for prob, signs in finals]


def evaluate_expression(expr, numbers) -> float:
    signs = expr.signs if isinstance(expr, SignedExpression) else expr
    values = [n.value if hasattr(n, "value") else float(n) for n in numbers]
    if len(signs) != len(values):
        raise ValueError("sign vector and number list differ in length")
    return float(math.fsum(s * v for s, v in zip(signs, values)))


def select_expression(candidates: Sequence[SignedExpression], rerank_scores: Sequence[float]) -> SignedExpression:
    if not candidates or len(candidates) != len(rerank_scores):
        raise ValueError("need at least one candidate and one score per candidate")
    products = [c.cumulative_prob * r for c, r in zip(candidates, rerank_scores)]
    best = max(range(len(products)), key=lambda i: (products[i], -i))
    return candidates[best]


def decode_negation(p_negation, numbers) -> float:
    p_negation = np.asarray(p_negation, float)
    if len(numbers) == 0:
        raise ValueError("negation needs at least one number")
    i = int(np.argmax(p_negation[:, 1]))
    return 100.0 - numbers[i].value


def decode_count(p_count) -> int:
    # np.argmax returns the first maximum, i.e. the smaller count on ties
    return int(np.argmax(p_count))


Reranker = Callable[[Tuple[int, ...]], float]


def decode_answer(example, heads: HeadOutputs, rerank: Optional[Reranker], config: DecodeConfig = DecodeConfig()) -> AnswerPrediction:
    type_index = int(np.argmax(heads.p_type))
    answer_type = ANSWER_TYPES[type_index]
    trace: dict = {"type_index": type_index, "p_type": [float(x) for x in heads.p_type]}
    numbers = example.numbers

    if answer_type in ("add_sub", "negation") and not numbers:
        trace["fallback"] = f"{answer_type} chosen without passage numbers; decoded as span"
        answer_type = "span"

    if answer_type == "span":
        spans = nms_multi_span(
            heads.p_start, heads.p_end, heads.p_span_count, config.top_k, example.sequence, config.max_span_len
        )
        trace["span_count_index"] = int(np.argmax(heads.p_span_count))
        trace["spans"] = [[s.start, s.end, s.score] for s in spans]
        return AnswerPrediction("span", [s.text for s in spans], None, trace)

    if answer_type == "add_sub":
        beam = beam_search_signs(heads.p_sign, config.beam, config.max_signed)
        beam = [SignedExpression(e.signs, e.cumulative_prob, evaluate_expression(e, numbers)) for e in beam]
        scores = [float(rerank(e.signs)) if rerank is not None else 1.0 for e in beam]
        chosen = select_expression(beam, scores)
        trace["beam"] = [
            {"signs": list(e.signs), "cumulative_prob": e.cumulative_prob, "value": e.value} for e in beam
        ]
        trace["rerank_scores"] = scores
        trace["chosen"] = beam.index(chosen)
        return AnswerPrediction("add_sub", [], chosen.value, trace)

    if answer_type == "count":
        count = decode_count(heads.p_count)
        trace["count_index"] = count
        return AnswerPrediction("count", [], float(count), trace)

    i = int(np.argmax(np.asarray(heads.p_negation)[:, 1]))
    trace["negation_index"] = i
    return AnswerPrediction("negation", [], decode_negation(heads.p_negation, numbers), trace)
