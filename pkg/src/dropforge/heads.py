"""Prediction heads over the last four encoder blocks.

All heads consume an :class:`EncoderOutput` (four ``T x D`` matrices) and a
:class:`HeadWeights` bundle and return probability distributions; nothing in
here knows about text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .numerics import FFNWeights, attention_pool, ffn, load_tensors, save_tensors, softmax

ANSWER_TYPES = ("span", "add_sub", "count", "negation")
SIGN_ORDER = ("zero", "plus", "minus")
SIGN_TO_ROW = {0: 0, 1: 1, -1: 2}
NUM_COUNT_CLASSES = 10
MAX_SPANS = 8
MAX_SIGNED = 4

# head name -> output width
FFN_HEADS = {
    "type": len(ANSWER_TYPES),
    "sign": len(SIGN_ORDER),
    "count": NUM_COUNT_CLASSES,
    "negation": 2,
    "span_count": MAX_SPANS,
    "rerank": 2,
}


@dataclass
class EncoderOutput:
    M0: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    sep1_index: int
    sep2_index: int
    cls_index: int = 0

    def __post_init__(self):
        mats = [np.asarray(m, dtype=np.float64) for m in (self.M0, self.M1, self.M2, self.M3)]
        self.M0, self.M1, self.M2, self.M3 = mats
        shape = mats[0].shape
        if len(shape) != 2 or any(m.shape != shape for m in mats):
            raise ValueError("M0..M3 must be 2-D with identical shapes")
        if not 0 < self.sep1_index < self.sep2_index == shape[0] - 1:
            raise ValueError(
                f"bad marker indices sep1={self.sep1_index}, sep2={self.sep2_index}, T={shape[0]}"
            )

    @property
    def T(self) -> int:
        return self.M0.shape[0]

    @property
    def D(self) -> int:
        return self.M0.shape[1]

    @property
    def marker_mask(self) -> np.ndarray:
        mask = np.zeros(self.T, dtype=bool)
        mask[[self.cls_index, self.sep1_index, self.sep2_index]] = True
        return mask

    def question_rows(self, m: np.ndarray) -> np.ndarray:
        return m[self.cls_index + 1 : self.sep1_index]

    def passage_rows(self, m: np.ndarray) -> np.ndarray:
        return m[self.sep1_index + 1 : self.sep2_index]

    def save(self, path) -> None:
        save_tensors(
            path,
            {f"M{i}": m for i, m in enumerate((self.M0, self.M1, self.M2, self.M3))},
            {"sep1_index": self.sep1_index, "sep2_index": self.sep2_index},
        )

    @classmethod
    def load(cls, path) -> "EncoderOutput":
        tensors, meta = load_tensors(path)
        return cls(*(tensors[f"M{i}"] for i in range(4)), meta["sep1_index"], meta["sep2_index"])


@dataclass
class HeadWeights:
    D: int
    pool_q: np.ndarray
    pool_p: np.ndarray
    beta_q0: FFNWeights
    beta_q1: FFNWeights
    beta_q2: FFNWeights
    span_start: np.ndarray
    span_end: np.ndarray
    num_pool: np.ndarray
    expr_pool: np.ndarray
    sign_embed: np.ndarray
    ffns: Dict[str, FFNWeights] = field(default_factory=dict)

    def __post_init__(self):
        D = self.D
        checks = {
            "pool_q": (self.pool_q, (D,)),
            "pool_p": (self.pool_p, (D,)),
            "span_start": (self.span_start, (4 * D,)),
            "span_end": (self.span_end, (4 * D,)),
            "num_pool": (self.num_pool, (2 * D,)),
            "expr_pool": (self.expr_pool, (2 * D,)),
            "sign_embed": (self.sign_embed, (3, 2 * D)),
        }
        for name, (arr, shape) in checks.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)
        for b in (self.beta_q0, self.beta_q1, self.beta_q2):
            if (b.d_in, b.d_out) != (D, 1):
                raise ValueError("question gate scorers must map D -> 1")
        for name, width in FFN_HEADS.items():
            f = self.ffns.get(name)
            if f is None:
                raise ValueError(f"missing ffn head {name!r}")
            d_in = 5 * D if name in ("sign", "count", "negation", "rerank") else 3 * D
            if (f.d_in, f.d_out) != (d_in, width):
                raise ValueError(f"ffn.{name} maps {f.d_in}->{f.d_out}, expected {d_in}->{width}")

    # -- construction ------------------------------------------------------

    @classmethod
    def from_generator(cls, D: int, draw, hidden: Optional[int] = None) -> "HeadWeights":
        """Build weights from ``draw(name, shape) -> array``; layer norms start at (1, 0)."""
        H = hidden or D

        def mk_ffn(prefix, d_in, d_out):
            return FFNWeights(
                draw(f"{prefix}.w1", (d_in, H)),
                draw(f"{prefix}.b1", (H,)),
                draw(f"{prefix}.w2", (H, d_out)),
                draw(f"{prefix}.b2", (d_out,)),
                np.ones(H),
                np.zeros(H),
            )

        ffns = {
            name: mk_ffn(f"ffn.{name}", 5 * D if name in ("sign", "count", "negation", "rerank") else 3 * D, w)
            for name, w in FFN_HEADS.items()
        }
        return cls(
            D,
            draw("pool_q.w", (D,)),
            draw("pool_p.w", (D,)),
            mk_ffn("beta_q0", D, 1),
            mk_ffn("beta_q1", D, 1),
            mk_ffn("beta_q2", D, 1),
            draw("span.start.w", (4 * D,)),
            draw("span.end.w", (4 * D,)),
            draw("num.pool.w", (2 * D,)),
            draw("expr.pool.w", (2 * D,)),
            draw("sign.embed", (3, 2 * D)),
            ffns,
        )

    @classmethod
    def zeros(cls, D: int, hidden: Optional[int] = None) -> "HeadWeights":
        return cls.from_generator(D, lambda name, shape: np.zeros(shape), hidden)

    @classmethod
    def random(cls, D: int, seed: int = 0, scale: float = 1.0, hidden: Optional[int] = None) -> "HeadWeights":
        rng = np.random.default_rng(seed)

        def draw(name, shape):
            return rng.normal(0.0, scale / np.sqrt(shape[0]), size=shape)

        return cls.from_generator(D, draw, hidden)

    # -- (de)serialization -------------------------------------------------

    def tensors(self) -> Dict[str, np.ndarray]:
        t = {
            "pool_q.w": self.pool_q,
            "pool_p.w": self.pool_p,
            "span.start.w": self.span_start,
            "span.end.w": self.span_end,
            "num.pool.w": self.num_pool,
            "expr.pool.w": self.expr_pool,
            "sign.embed": self.sign_embed,
        }
        for name in ("beta_q0", "beta_q1", "beta_q2"):
            t.update(getattr(self, name).tensors(name))
        for name, f in self.ffns.items():
            t.update(f.tensors(f"ffn.{name}"))
        return t

    def save(self, path) -> None:
        save_tensors(
            path,
            self.tensors(),
            {"D": self.D, "answer_types": list(ANSWER_TYPES), "sign_order": list(SIGN_ORDER)},
        )

    @classmethod
    def load(cls, path) -> "HeadWeights":
        t, meta = load_tensors(path)
        if tuple(meta.get("sign_order", SIGN_ORDER)) != SIGN_ORDER:
            raise ValueError(f"unsupported sign order {meta['sign_order']}")
        if tuple(meta.get("answer_types", ANSWER_TYPES)) != ANSWER_TYPES:
            raise ValueError(f"unsupported answer type order {meta['answer_types']}")
        D = int(meta.get("D", t["pool_q.w"].shape[0]))
        return cls(
            D,
            t["pool_q.w"],
            t["pool_p.w"],
            FFNWeights.from_tensors(t, "beta_q0"),
            FFNWeights.from_tensors(t, "beta_q1"),
            FFNWeights.from_tensors(t, "beta_q2"),
            t["span.start.w"],
            t["span.end.w"],
            t["num.pool.w"],
            t["expr.pool.w"],
            t["sign.embed"],
            {name: FFNWeights.from_tensors(t, f"ffn.{name}") for name in FFN_HEADS},
        )


@dataclass
class HeadOutputs:
    h_q2: np.ndarray
    h_p2: np.ndarray
    h_cls: np.ndarray
    p_type: np.ndarray
    p_start: np.ndarray
    p_end: np.ndarray
    p_sign: np.ndarray
    p_count: np.ndarray
    p_negation: np.ndarray
    p_span_count: np.ndarray
    U: np.ndarray


def summarize(enc: EncoderOutput, w: HeadWeights):
    """Question/passage summaries, the [CLS] vector and the three question gates."""
    Q2, P2 = enc.question_rows(enc.M2), enc.passage_rows(enc.M2)
    if len(Q2) == 0 or len(P2) == 0:
        raise ValueError("question and passage segments must both be non-empty")
    _, h_q2 = attention_pool(Q2, w.pool_q)
    _, h_p2 = attention_pool(P2, w.pool_p)
    h_cls = enc.M3[enc.cls_index].copy()
    _, g_q0 = attention_pool(enc.question_rows(enc.M0), w.beta_q0)
    _, g_q1 = attention_pool(enc.question_rows(enc.M1), w.beta_q1)
    _, g_q2 = attention_pool(Q2, w.beta_q2)
    return h_q2, h_p2, h_cls, g_q0, g_q1, g_q2


def _context(h_q2, h_p2, h_cls) -> np.ndarray:
    return np.concatenate([np.asarray(h_q2, float), np.asarray(h_p2, float), np.asarray(h_cls, float)])


def predict_type(h_q2, h_p2, h_cls, w: HeadWeights) -> np.ndarray:
    return softmax(ffn(_context(h_q2, h_p2, h_cls), w.ffns["type"]))


def predict_span_boundaries(enc: EncoderOutput, g_q0, g_q1, g_q2, w: HeadWeights):
    # The gate multiplies each token row elementwise.
    start_feats = np.hstack([enc.M2, enc.M0, enc.M2 * g_q2, enc.M0 * g_q0])
    end_feats = np.hstack([enc.M2, enc.M1, enc.M2 * g_q2, enc.M1 * g_q1])
    mask = enc.marker_mask
    start_logits = start_feats @ w.span_start
    end_logits = end_feats @ w.span_end
    start_logits[mask] = -np.inf
    end_logits[mask] = -np.inf
    return softmax(start_logits), softmax(end_logits)


def gather_numbers(enc: EncoderOutput, numbers) -> np.ndarray:
    idx = np.array([n.token_index for n in numbers], dtype=int)
    if idx.size == 0:
        return np.zeros((0, 2 * enc.D))
    if idx.min() < 0 or idx.max() >= enc.T:
        raise IndexError(f"number token index out of range for T={enc.T}")
    return np.hstack([enc.M2[idx], enc.M3[idx]])


def _per_number(U, h_q2, h_p2, h_cls, f: FFNWeights) -> np.ndarray:
    U = np.asarray(U, float)
    if len(U) == 0:
        return np.zeros((0, f.d_out))
    ctx = np.broadcast_to(_context(h_q2, h_p2, h_cls), (len(U), f.d_in - U.shape[1]))
    return softmax(ffn(np.hstack([U, ctx]), f), axis=-1)


def predict_signs(U, h_q2, h_p2, h_cls, w: HeadWeights) -> np.ndarray:
    """``N x 3`` sign distributions, columns ordered (zero, plus, minus)."""
    return _per_number(U, h_q2, h_p2, h_cls, w.ffns["sign"])


def predict_count(U, h_q2, h_p2, h_cls, w: HeadWeights) -> np.ndarray:
    U = np.asarray(U, float)
    # No numbers: the pooled number vector is zero so the head stays defined.
    h_u = attention_pool(U, w.num_pool)[1] if len(U) else np.zeros(2 * w.D)
    return softmax(ffn(np.concatenate([h_u, _context(h_q2, h_p2, h_cls)]), w.ffns["count"]))


def predict_negation(U, h_q2, h_p2, h_cls, w: HeadWeights) -> np.ndarray:
    """``N x 2`` distributions, columns (no, yes)."""
    return _per_number(U, h_q2, h_p2, h_cls, w.ffns["negation"])


def predict_span_count(h_q2, h_p2, h_cls, w: HeadWeights) -> np.ndarray:
    return softmax(ffn(_context(h_q2, h_p2, h_cls), w.ffns["span_count"]))


def rerank_score(
    signs: Sequence[int], U, h_q2, h_p2, h_cls, w: HeadWeights, max_signed: int = MAX_SIGNED
) -> float:
    """Probability that the signed expression is correct.

    Only numbers with a nonzero sign enter the pooled expression vector,
    at most ``max_signed`` of them in mention order.
    """
    signs = list(signs)
    picked = [i for i, s in enumerate(signs) if s != 0][:max_signed]
    if not picked:
        raise ValueError("candidate expression has no signed number")
    U = np.asarray(U, float)
    V = U[picked]
    C = w.sign_embed[[SIGN_TO_ROW[signs[i]] for i in picked]]
    _, h_v = attention_pool(V + C, w.expr_pool)
    probs = softmax(ffn(np.concatenate([h_v, _context(h_q2, h_p2, h_cls)]), w.ffns["rerank"]))
    return float(probs[1])


def compute_heads(enc: EncoderOutput, numbers, w: HeadWeights) -> HeadOutputs:
    h_q2, h_p2, h_cls, g_q0, g_q1, g_q2 = summarize(enc, w)
    p_start, p_end = predict_span_boundaries(enc, g_q0, g_q1, g_q2, w)
    U = gather_numbers(enc, numbers)
    return HeadOutputs(
        h_q2=h_q2,
        h_p2=h_p2,
        h_cls=h_cls,
        p_type=predict_type(h_q2, h_p2, h_cls, w),
        p_start=p_start,
        p_end=p_end,
        p_sign=predict_signs(U, h_q2, h_p2, h_cls, w),
        p_count=predict_count(U, h_q2, h_p2, h_cls, w),
        p_negation=predict_negation(U, h_q2, h_p2, h_cls, w),
        p_span_count=predict_span_count(h_q2, h_p2, h_cls, w),
        U=U,
    )


def make_reranker(heads: HeadOutputs, w: HeadWeights, max_signed: int = MAX_SIGNED):
    """Bind :func:`rerank_score` to one example's representations."""

    def score(signs):
        return rerank_score(signs, heads.U, heads.h_q2, heads.h_p2, heads.h_cls, w, max_signed)

    return score
