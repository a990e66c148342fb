"""Inference-side decoding for multi-type, multi-span discrete reasoning QA."""

from .annotator import Annotation, annotate_example, corpus_stats, search_expressions
from .decoder import (
    AnswerPrediction,
    DecodeConfig,
    SignedExpression,
    SpanPrediction,
    beam_search_signs,
    decode_answer,
    nms_multi_span,
    top_k_spans,
)
from .heads import EncoderOutput, HeadOutputs, HeadWeights, compute_heads
from .ingest import GoldAnswer, TokenizedExample, make_example, parse_drop_dataset, tokenize
from .metrics import evaluate_example

__version__ = "0.1.0"
