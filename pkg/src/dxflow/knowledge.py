"""Guideline document store with deterministic BM25 passage retrieval.

Documents are split into paragraph passages (blank-line separated) and
ranked with BM25 (k1 = 1.2, b = 0.75) over lowercase word tokens. The
IDF variant log(1 + (N - df + 0.5) / (df + 0.5)) keeps scores strictly
positive for any matching term, so a zero score always means "no
overlapping vocabulary" and such passages are never returned.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateDocument, SchemaError
from .serde import canonical_json_bytes, check_fields, get_number, get_str, require_mapping, sha256_hex

BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    title: str
    body: str
    source_tag: str = ""

    def __post_init__(self):
        if not self.doc_id:
            raise SchemaError("DocumentRecord.doc_id must be nonempty")
        if not self.body:
            raise SchemaError(f"document {self.doc_id!r}: body must be nonempty")


@dataclass(frozen=True)
class RetrievedCriterion:
    """One scored guideline passage with its character span in the body."""

    doc_id: str
    passage: str
    score: float
    span: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "passage": self.passage,
            "score": self.score,
            "span": list(self.span),
        }

    @classmethod
    def from_dict(cls, data, *, strict: bool = True) -> "RetrievedCriterion":
        data = require_mapping(data, "RetrievedCriterion")
        check_fields(data, ["doc_id", "passage", "score", "span"], ctx="RetrievedCriterion", strict=strict)
        span = data["span"]
        if not (isinstance(span, list) and len(span) == 2):
            raise SchemaError("RetrievedCriterion.span must be [start, end]")
        return cls(
            doc_id=get_str(data, "doc_id", "RetrievedCriterion"),
            passage=get_str(data, "passage", "RetrievedCriterion"),
            score=get_number(data, "score", "RetrievedCriterion"),
            span=(int(span[0]), int(span[1])),
        )


def split_passages(body: str) -> list[tuple[int, int]]:
    """Character spans of paragraph blocks: maximal runs of non-blank lines."""
    spans: list[tuple[int, int]] = []
    start = None
    offset = 0
    for line in body.splitlines(keepends=True):
        stripped = line.rstrip("\n").rstrip("\r")
        if stripped.strip():
            if start is None:
                start = offset
            end = offset + len(stripped)
        elif start is not None:
            spans.append((start, end))
            start = None
        offset += len(line)
    if start is not None:
        spans.append((start, end))
    return spans


@dataclass(frozen=True)
class _Passage:
    doc_id: str
    span: tuple[int, int]
    text: str
    term_freq: Counter
    length: int


class KnowledgeIndex:
    """Read-only passage index; built once by :func:`ingest`."""

    def __init__(self, passages: list[_Passage]):
        self._passages = passages
        self._avgdl = (
            sum(p.length for p in passages) / len(passages) if passages else 0.0
        )
        df: Counter = Counter()
        for p in passages:
            df.update(p.term_freq.keys())
        n = len(passages)
        self._idf = {
            term: math.log(1.0 + (n - count + 0.5) / (count + 0.5))
            for term, count in df.items()
        }

    def __len__(self) -> int:
        return len(self._passages)

    def checksum(self) -> str:
        payload = [
            {"doc_id": p.doc_id, "span": list(p.span), "text": p.text} for p in self._passages
        ]
        return sha256_hex(canonical_json_bytes(payload))

    def score_passage(self, query_terms: list[str], index: int) -> float:
        """BM25 score of one passage; exposed for oracle cross-checks."""
        p = self._passages[index]
        norm = BM25_K1 * (1.0 - BM25_B + BM25_B * p.length / self._avgdl) if self._avgdl else 0.0
        score = 0.0
        for term in dict.fromkeys(query_terms):  # unique, in query order
            tf = p.term_freq.get(term, 0)
            if tf == 0:
                continue
            score += self._idf[term] * tf * (BM25_K1 + 1.0) / (tf + norm)
        return score

    def retrieve(self, query: str, k: int = 8) -> list[RetrievedCriterion]:
        """Top-k positive-scoring passages, deterministically ordered."""
        if k < 0:
            raise SchemaError(f"k must be >= 0, got {k}")
        if k == 0 or not self._passages:
            return []
        terms = tokenize(query)
        scored = []
        for i, p in enumerate(self._passages):
            s = self.score_passage(terms, i)
            if s > 0.0:
                scored.append((-s, p.doc_id, p.span[0], i))
        scored.sort()
        return [
            RetrievedCriterion(
                doc_id=self._passages[i].doc_id,
                passage=self._passages[i].text,
                score=-neg,
                span=self._passages[i].span,
            )
            for neg, _, _, i in scored[:k]
        ]


def ingest(documents: list[DocumentRecord]) -> KnowledgeIndex:
    """Build a passage index; one entry per paragraph. Idempotent."""
    seen: set[str] = set()
    passages: list[_Passage] = []
    for doc in documents:
        if doc.doc_id in seen:
            raise DuplicateDocument(doc.doc_id)
        seen.add(doc.doc_id)
        for start, end in split_passages(doc.body):
            text = doc.body[start:end]
            tokens = tokenize(text)
            passages.append(
                _Passage(
                    doc_id=doc.doc_id,
                    span=(start, end),
                    text=text,
                    term_freq=Counter(tokens),
                    length=len(tokens),
                )
            )
    return KnowledgeIndex(passages)


def load_corpus(directory: str | Path) -> list[DocumentRecord]:
    """Load a corpus directory: one UTF-8 text file per document.

    The filename without extension is the doc_id. An optional
    ``manifest.json`` maps doc_id to {"title": ..., "source_tag": ...}.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise SchemaError(f"corpus directory not found: {directory}")
    manifest: dict = {}
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        import json

        manifest = require_mapping(json.loads(manifest_path.read_text("utf-8")), "manifest")
    docs = []
    for path in sorted(directory.glob("*.txt")):
        doc_id = path.stem
        meta = require_mapping(manifest.get(doc_id, {}), f"manifest[{doc_id!r}]")
        docs.append(
            DocumentRecord(
                doc_id=doc_id,
                title=str(meta.get("title", doc_id)),
                body=path.read_text("utf-8"),
                source_tag=str(meta.get("source_tag", "")),
            )
        )
    return docs
