"""Deterministic mock encoder, oracle head outputs and the self-test.

Mock tensors come from splitmix64 so that any implementation can reproduce
them bit for bit.  For matrix ``m``, row ``r`` and column ``c``::

    base    = splitmix64(seed XOR fnv1a64(utf8(example_id)))
    counter = (m << 56) | (r << 24) | c
    z       = splitmix64(base XOR splitmix64(counter))
    value   = 2 * (z >> 11) / 2**53 - 1          # uniform in [-1, 1)

All arithmetic is modulo 2**64.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import annotator, decoder, metrics, numerics
from .annotator import Annotation, annotate_example
from .decoder import AnswerPrediction, DecodeConfig, SignedExpression, decode_answer
from .heads import (
    ANSWER_TYPES,
    MAX_SPANS,
    NUM_COUNT_CLASSES,
    EncoderOutput,
    HeadOutputs,
    HeadWeights,
)
from .ingest import MARKER, TokenizedExample, examples_from_dataset, parse_drop_dataset

MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

DEFAULT_PRIORITY = ("add_sub", "negation", "count", "span")


def splitmix64(x):
    """Vectorized splitmix64 finalizer over uint64 arrays (or a Python int)."""
    scalar = isinstance(x, int)
    z = np.asarray(x & MASK64 if scalar else x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return int(z) if scalar else z


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def uniform_from_key(base: int, counters: np.ndarray) -> np.ndarray:
    z = splitmix64(np.uint64(base) ^ splitmix64(counters.astype(np.uint64)))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53 * 2.0 - 1.0


@dataclass(frozen=True)
class MockConfig:
    seed: int = 0
    D: int = 32
    noise_scale: float = 0.02

    def __post_init__(self):
        if self.D < 4:
            raise ValueError("D must be at least 4")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")


def gen_encoder_output(example: TokenizedExample, cfg: MockConfig = MockConfig()) -> EncoderOutput:
    T, D = len(example.sequence), cfg.D
    base = splitmix64((cfg.seed & MASK64) ^ fnv1a64(example.example_id.encode("utf-8")))
    r, c = np.meshgrid(np.arange(T, dtype=np.uint64), np.arange(D, dtype=np.uint64), indexing="ij")
    mats = []
    for m in range(4):
        counters = (np.uint64(m) << np.uint64(56)) | (r << np.uint64(24)) | c
        mats.append(uniform_from_key(base, counters))
    return EncoderOutput(*mats, sep1_index=example.sep1_index, sep2_index=example.sep2_index)


def mock_head_weights(D: int, seed: int = 0, hidden: Optional[int] = None) -> HeadWeights:
    """Head weights drawn from the same generator, keyed by tensor name."""

    def draw(name, shape):
        base = splitmix64((seed & MASK64) ^ fnv1a64(name.encode("utf-8")))
        values = uniform_from_key(base, np.arange(int(np.prod(shape)), dtype=np.uint64))
        return values.reshape(shape) / math.sqrt(shape[0])

    return HeadWeights.from_generator(D, draw, hidden)


# -- oracle ------------------------------------------------------------------


def _peaked(size: int, peaks: Sequence[int], noise: float, blocked: Sequence[int] = ()) -> np.ndarray:
    """Mass ``1 - noise`` split over ``peaks``, the rest spread over the other free slots."""
    p = np.zeros(size)
    blocked = set(blocked)
    free = [i for i in range(size) if i not in blocked and i not in set(peaks)]
    if free and noise > 0:
        p[free] = noise / len(free)
        p[list(peaks)] = (1.0 - noise) / len(peaks)
    else:
        p[list(peaks)] = 1.0 / len(peaks)
    return p


def _span_choice(example: TokenizedExample, ann: Annotation) -> List[Tuple[int, int]]:
    """One occurrence per answer text, taken from the first fully matched gold."""
    matched = set(ann.matching_spans)
    for gold in example.golds:
        chosen = []
        for text in dict.fromkeys(gold.texts()):
            hits = [s for s in annotator.find_matching_spans(example, [text]) if s in matched]
            if not hits:
                break
            chosen.append(hits[0])
        else:
            if chosen:
                return chosen
    return list(ann.matching_spans[:1])


def oracle_kind(ann: Annotation, priority: Sequence[str] = DEFAULT_PRIORITY) -> str:
    available = {
        "add_sub": bool(ann.expressions),
        "negation": bool(ann.negation_indices),
        "count": ann.count_label is not None,
        "span": bool(ann.matching_spans),
    }
    for kind in priority:
        if available[kind]:
            return kind
    raise ValueError("annotation is empty; nothing for the oracle to encode")


def oracle_head_outputs(
    example: TokenizedExample,
    annotation: Annotation,
    cfg: MockConfig = MockConfig(),
    priority: Sequence[str] = DEFAULT_PRIORITY,
) -> HeadOutputs:
    """Near one-hot head outputs that decode to the annotated answer."""
    eps = cfg.noise_scale
    kind = oracle_kind(annotation, priority)
    T, N, D = len(example.sequence), len(example.numbers), cfg.D
    markers = [i for i, t in enumerate(example.sequence) if t.origin == MARKER]

    spans = _span_choice(example, annotation) if annotation.matching_spans else []
    if spans:
        p_start = _peaked(T, sorted({s for s, _ in spans}), eps, markers)
        p_end = _peaked(T, sorted({e for _, e in spans}), eps, markers)
    else:
        free = [i for i in range(T) if i not in markers]
        p_start = _peaked(T, free, 0.0, markers)
        p_end = p_start.copy()
    amount = max(len(spans), 1)

    p_sign = np.tile(_peaked(3, [0], eps), (N, 1))
    if annotation.expressions:
        for i, s in enumerate(annotation.expressions[0]):
            p_sign[i] = _peaked(3, [decoder.SIGN_COLUMN[s]], eps)

    p_negation = np.tile(_peaked(2, [0], eps), (N, 1))
    if annotation.negation_indices:
        p_negation[annotation.negation_indices[0]] = _peaked(2, [1], eps)

    count = annotation.count_label if annotation.count_label is not None else 0
    return HeadOutputs(
        h_q2=np.zeros(D),
        h_p2=np.zeros(D),
        h_cls=np.zeros(D),
        p_type=_peaked(len(ANSWER_TYPES), [ANSWER_TYPES.index(kind)], eps),
        p_start=p_start,
        p_end=p_end,
        p_sign=p_sign.reshape(N, 3),
        p_count=_peaked(NUM_COUNT_CLASSES, [count], eps),
        p_negation=p_negation.reshape(N, 2),
        p_span_count=_peaked(MAX_SPANS, [min(amount, MAX_SPANS) - 1], eps),
        U=np.zeros((N, 2 * D)),
    )


def oracle_reranker(annotation: Annotation, cfg: MockConfig = MockConfig()):
    good = {tuple(e) for e in annotation.expressions}
    hi, lo = 1.0 - cfg.noise_scale, cfg.noise_scale

    def score(signs):
        return hi if tuple(signs) in good else lo

    return score


def decode_with_oracle(
    example: TokenizedExample,
    annotation: Annotation,
    cfg: MockConfig = MockConfig(),
    config: DecodeConfig = DecodeConfig(),
) -> AnswerPrediction:
    heads = oracle_head_outputs(example, annotation, cfg)
    return decode_answer(example, heads, oracle_reranker(annotation, cfg), config)


# -- brute-force references ---------------------------------------------------


def brute_force_signs(p_sign, beam: int, max_signed: int) -> List[SignedExpression]:
    """Enumerate all 3^N sign vectors; keep the feasible top ``beam``."""
    p_sign = np.asarray(p_sign, float)
    col = {0: 0, 1: 1, -1: 2}
    rank = {0: 0, 1: 1, -1: 2}
    scored = []
    for signs in itertools.product((0, 1, -1), repeat=len(p_sign)):
        k = sum(1 for s in signs if s)
        if not 1 <= k <= max_signed:
            continue
        prob = 1.0
        for row, s in zip(p_sign, signs):
            prob = prob * row[col[s]]
        scored.append((prob, signs))
    scored.sort(key=lambda x: (-x[0], tuple(rank[s] for s in x[1])))
    return [SignedExpression(s, p) for p, s in scored[:beam]]


def brute_force_expressions(values: Sequence[float], target: float, max_terms: int = 3) -> List[Tuple[int, ...]]:
    rank = {0: 0, 1: 1, -1: 2}
    hits = []
    for signs in itertools.product((0, 1, -1), repeat=len(values)):
        k = sum(1 for s in signs if s)
        if 1 <= k <= max_terms and annotator.close(math.fsum(s * v for s, v in zip(signs, values)), target):
            hits.append(signs)
    hits.sort(key=lambda v: (sum(1 for s in v if s), tuple(rank[s] for s in v)))
    return hits


# -- self-test -----------------------------------------------------------------


def bundled_dataset_bytes() -> bytes:
    return resources.files("dropforge").joinpath("data/census_drop.json").read_bytes()


@dataclass
class SelftestReport:
    examples: int = 0
    em: float = 0.0
    f1: float = 0.0
    checks: Dict[str, bool] = field(default_factory=dict)
    predictions: Dict[str, List[str]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        answers_ok = self.examples == 0 or (self.em == 100.0 and self.f1 == 100.0)
        return answers_ok and all(self.checks.values())

    def format(self) -> str:
        lines = [f"examples: {self.examples}", f"EM: {self.em:.1f}", f"F1: {self.f1:.1f}"]
        lines += [f"[{'PASS' if v else 'FAIL'}] {k}" for k, v in self.checks.items()]
        lines.append("selftest " + ("passed" if self.ok else "FAILED"))
        return "\n".join(lines)


def _check_beam(rng) -> bool:
    for _ in range(100):
        n = int(rng.integers(1, 6))
        p = rng.dirichlet(np.ones(3), size=n)
        b, m = int(rng.integers(1, 6)), int(rng.integers(1, n + 1))
        got = decoder.beam_search_signs(p, b, m)
        want = brute_force_signs(p, b, m)
        if [e.signs for e in got] != [e.signs for e in want]:
            return False
    return True


def _check_nms(rng) -> bool:
    from .ingest import make_example

    ex = make_example("nms", "nms", "which ones were named", "alpha beta gamma alpha delta beta epsilon zeta eta")
    T = len(ex.sequence)
    mask = np.array([t.origin == MARKER for t in ex.sequence])
    for _ in range(50):
        ps, pe = rng.random(T), rng.random(T)
        ps[mask] = pe[mask] = 0
        ps, pe = ps / ps.sum(), pe / pe.sum()
        pc = rng.dirichlet(np.ones(MAX_SPANS))
        out = decoder.nms_multi_span(ps, pe, pc, 20, ex.sequence, 4)
        if len(out) > int(np.argmax(pc)) + 1:
            return False
        if any(decoder.span_text_f1(a, b) > 0 for a, b in itertools.combinations(out, 2)):
            return False
        if any(x.score < y.score for x, y in zip(out, out[1:])):
            return False
    return True


def _check_expressions(rng) -> bool:
    for _ in range(30):
        values = list(rng.integers(0, 20, size=int(rng.integers(1, 7))).astype(float))
        signs = rng.choice([0, 1, -1], size=len(values))
        if not signs.any():
            signs[0] = 1
        target = float(np.dot(signs, values))
        if annotator.search_expressions(values, target) != brute_force_expressions(values, target):
            return False
    return True


def _check_kernels(rng) -> bool:
    v = rng.normal(size=16) * 1e4
    p = numerics.softmax(v)
    ok = abs(p.sum() - 1) <= 1e-6 and np.allclose(p, numerics.softmax(v + 123.0), atol=1e-6)
    x = rng.normal(size=32) * 3 + 1
    ln = numerics.layer_norm(x, np.ones(32), np.zeros(32))
    ok &= abs(ln.mean()) <= 1e-6 and abs(ln.var() - 1) <= 1e-4
    ok &= numerics.gelu(0.0) == 0.0 and abs(numerics.gelu(1.0) - 0.84134) <= 1e-4
    X = rng.normal(size=(7, 5))
    _, h = numerics.attention_pool(X, rng.normal(size=5))
    ok &= bool(np.all(h >= X.min(0) - 1e-12) and np.all(h <= X.max(0) + 1e-12))
    return bool(ok)


def _check_alignment(rng) -> bool:
    for _ in range(50):
        n = int(rng.integers(1, 7))
        s = rng.random((n, n))
        if abs(metrics.best_alignment_exhaustive(s) - metrics.best_alignment_assignment(s)) > 1e-9:
            return False
    return True


def selftest(raw: Optional[bytes] = None, cfg: MockConfig = MockConfig(), seed: int = 0) -> SelftestReport:
    """annotate -> oracle -> decode -> eval over a DROP file, plus property checks."""
    raw = bundled_dataset_bytes() if raw is None else raw
    examples = examples_from_dataset(parse_drop_dataset(raw))
    report = SelftestReport(examples=len(examples))
    for ex in examples:
        ann = annotate_example(ex)
        if ann.is_empty():
            report.predictions[ex.example_id] = []
            continue
        report.predictions[ex.example_id] = decode_with_oracle(ex, ann, cfg).answer_texts
    if examples:
        scores = metrics.evaluate_corpus(report.predictions, {ex.example_id: ex.golds for ex in examples})
        report.em, report.f1 = scores["em"], scores["f1"]

    rng = np.random.default_rng(seed)
    report.checks = {
        "beam search equals brute force": _check_beam(rng),
        "multi-span NMS invariants": _check_nms(rng),
        "expression search equals enumeration": _check_expressions(rng),
        "kernel numerics": _check_kernels(rng),
        "exhaustive alignment equals assignment": _check_alignment(rng),
    }
    return report


def load_annotations(path) -> Dict[str, Annotation]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out[d["example_id"]] = Annotation.from_json(d)
    return out
