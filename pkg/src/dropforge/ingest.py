"""DROP dataset parsing, offset-preserving tokenization and number extraction."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

CLS, SEP = "[CLS]", "[SEP]"
QUESTION, PASSAGE, MARKER = "question", "passage", "marker"
DEFAULT_MAX_LEN = 512

# Alphanumeric runs; "," and "." stay inside a run only between two digits.
_TOKEN_RE = re.compile(r"[^\W_]+(?:(?<=\d)[.,](?=\d)[^\W_]+)*|\S")
_NUMBER_RE = re.compile(r"^(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?$")


@dataclass(frozen=True)
class Token:
    text: str
    char_start: Optional[int]
    char_end: Optional[int]
    origin: str

    def to_json(self) -> dict:
        return {"text": self.text, "start": self.char_start, "end": self.char_end, "origin": self.origin}

    @classmethod
    def from_json(cls, d: dict) -> "Token":
        return cls(d["text"], d["start"], d["end"], d["origin"])


@dataclass(frozen=True)
class NumberMention:
    value: float
    token_index: int
    surface: str

    def to_json(self) -> dict:
        return {"value": self.value, "token_index": self.token_index, "surface": self.surface}

    @classmethod
    def from_json(cls, d: dict) -> "NumberMention":
        return cls(float(d["value"]), int(d["token_index"]), d["surface"])


@dataclass(frozen=True)
class GoldAnswer:
    kind: str  # "number" | "date" | "spans"
    number_text: Optional[str] = None
    date: Optional[Tuple[str, str, str]] = None
    span_texts: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == "number":
            ok = bool(self.number_text) and self.date is None and not self.span_texts
        elif self.kind == "date":
            ok = self.date is not None and any(self.date) and not self.number_text and not self.span_texts
        elif self.kind == "spans":
            ok = len(self.span_texts) > 0 and not self.number_text and self.date is None
        else:
            ok = False
        if not ok:
            raise ValueError(f"inconsistent GoldAnswer: {self!r}")

    def texts(self) -> List[str]:
        """Surface strings of this answer, one per bag entry."""
        if self.kind == "number":
            return [self.number_text]
        if self.kind == "date":
            return [" ".join(p for p in self.date if p)]
        return list(self.span_texts)

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "number":
            d["number"] = self.number_text
        elif self.kind == "date":
            d["date"] = dict(zip(("day", "month", "year"), self.date))
        else:
            d["spans"] = list(self.span_texts)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GoldAnswer":
        if d["kind"] == "number":
            return cls("number", number_text=d["number"])
        if d["kind"] == "date":
            dt = d["date"]
            return cls("date", date=(dt.get("day", ""), dt.get("month", ""), dt.get("year", "")))
        return cls("spans", span_texts=tuple(d["spans"]))


@dataclass
class TokenizedExample:
    example_id: str
    passage_id: str
    question_text: str
    passage_text: str
    sequence: List[Token]
    numbers: List[NumberMention] = field(default_factory=list)
    golds: List[GoldAnswer] = field(default_factory=list)

    @property
    def sep1_index(self) -> int:
        return next(i for i, t in enumerate(self.sequence) if i > 0 and t.origin == MARKER)

    @property
    def sep2_index(self) -> int:
        return len(self.sequence) - 1

    def source_text(self, origin: str) -> str:
        return self.question_text if origin == QUESTION else self.passage_text

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "passage_id": self.passage_id,
            "question_text": self.question_text,
            "passage_text": self.passage_text,
            "sequence": [t.to_json() for t in self.sequence],
            "numbers": [n.to_json() for n in self.numbers],
            "golds": [g.to_json() for g in self.golds],
        }

    @classmethod
    def from_json(cls, d: dict) -> "TokenizedExample":
        return cls(
            d["example_id"],
            d.get("passage_id", ""),
            d.get("question_text", ""),
            d.get("passage_text", ""),
            [Token.from_json(t) for t in d["sequence"]],
            [NumberMention.from_json(n) for n in d["numbers"]],
            [GoldAnswer.from_json(g) for g in d["golds"]],
        )


class DropFormatError(ValueError):
    """Raised for content that is not valid DROP JSON."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class DropDataset(list):
    """List of ``(passage_id, passage_text, qa_list)`` with a skip counter."""

    skipped: int = 0


def _gold_from_answer(answer: dict) -> Optional[GoldAnswer]:
    if not isinstance(answer, dict):
        return None
    number = str(answer.get("number") or "").strip()
    if number:
        return GoldAnswer("number", number_text=number)
    date = answer.get("date") or {}
    parts = tuple(str(date.get(k) or "").strip() for k in ("day", "month", "year"))
    if any(parts):
        return GoldAnswer("date", date=parts)
    spans = tuple(s for s in (str(x).strip() for x in answer.get("spans") or []) if s)
    if spans:
        return GoldAnswer("spans", span_texts=spans)
    return None


def parse_drop_dataset(raw) -> DropDataset:
    """Parse the DROP distribution JSON.

    Each qa pair contributes its ``answer`` and every validated answer as
    separate golds.  Pairs whose ``answer`` has no populated field are
    skipped and counted in ``result.skipped``.
    """
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise DropFormatError(f"malformed JSON: {exc.msg}", offset) from exc
    if not isinstance(data, dict):
        raise DropFormatError("top level must be an object keyed by passage id")

    out = DropDataset()
    for passage_id, record in data.items():
        if not isinstance(record, dict) or "passage" not in record:
            raise DropFormatError(f"passage {passage_id!r} lacks a 'passage' field")
        qas = []
        for qa in record.get("qa_pairs", []):
            primary = _gold_from_answer(qa.get("answer"))
            if primary is None:
                out.skipped += 1
                continue
            golds = [primary]
            for extra in qa.get("validated_answers") or []:
                g = _gold_from_answer(extra)
                if g is not None:
                    golds.append(g)
            qas.append((qa.get("query_id", f"{passage_id}-{len(qas)}"), qa["question"], golds))
        out.append((passage_id, record["passage"], qas))
    if out.skipped:
        logger.warning("skipped %d qa pairs without a populated answer", out.skipped)
    return out


def tokenize(text: str, origin: str = PASSAGE) -> List[Token]:
    return [Token(m.group(), m.start(), m.end(), origin) for m in _TOKEN_RE.finditer(text)]


def parse_number(text: str) -> Optional[float]:
    """Parse digits with optional comma grouping and decimal part."""
    if not _NUMBER_RE.match(text):
        return None
    return float(text.replace(",", ""))


def extract_numbers(sequence: Sequence[Token]) -> List[NumberMention]:
    mentions = []
    for i, tok in enumerate(sequence):
        if tok.origin != PASSAGE:
            continue
        value = parse_number(tok.text)
        if value is not None:
            mentions.append(NumberMention(value, i, tok.text))
    return mentions


def build_sequence(question_tokens, passage_tokens, max_len: int = DEFAULT_MAX_LEN) -> List[Token]:
    if len(question_tokens) > max_len - 3:
        raise ValueError(
            f"question has {len(question_tokens)} tokens; at most {max_len - 3} fit in max_len={max_len}"
        )
    room = max_len - 3 - len(question_tokens)
    marker = lambda text: Token(text, None, None, MARKER)  # noqa: E731
    return [marker(CLS), *question_tokens, marker(SEP), *list(passage_tokens)[:room], marker(SEP)]


def make_example(
    example_id: str,
    passage_id: str,
    question: str,
    passage: str,
    golds: Iterable[GoldAnswer] = (),
    max_len: int = DEFAULT_MAX_LEN,
) -> TokenizedExample:
    seq = build_sequence(tokenize(question, QUESTION), tokenize(passage, PASSAGE), max_len)
    return TokenizedExample(
        example_id, passage_id, question, passage, seq, extract_numbers(seq), list(golds)
    )


def examples_from_dataset(dataset, max_len: int = DEFAULT_MAX_LEN) -> List[TokenizedExample]:
    return [
        make_example(qid, pid, question, passage, golds, max_len)
        for pid, passage, qas in dataset
        for qid, question, golds in qas
    ]


def read_examples_jsonl(path) -> List[TokenizedExample]:
    with open(path, encoding="utf-8") as fh:
        return [TokenizedExample.from_json(json.loads(line)) for line in fh if line.strip()]


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
