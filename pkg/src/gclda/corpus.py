"""Corpus ingestion: tokenizing, vocabulary truncation, time bucketing, covariates.

The pipeline turns raw time-stamped text plus an aligned covariate table into
an immutable, vocabulary-indexed `Corpus` that the samplers consume.
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources

import numpy as np

from . import porter
from .errors import InputError

CORPUS_FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W\d_]+", re.UNICODE)


def load_stopwords(path: str | None = None) -> frozenset[str]:
    """Stopword set from a file (one word per line), or the bundled default."""
    if path is None:
        text = resources.files("gclda.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def tokenize(text: str, stopwords: frozenset[str] | None = None, stem: bool = False) -> list[str]:
    """Lowercase, split on non-alphabetic runs, drop stopwords, optionally stem."""
    if stopwords is None:
        stopwords = _default_stopwords()
    tokens = [t for t in _TOKEN_RE.findall(text.lower()) if t not in stopwords]
    if stem:
        tokens = [porter.stem(t) for t in tokens]
    return tokens


_STOPWORDS_CACHE: frozenset[str] | None = None


def _default_stopwords() -> frozenset[str]:
    global _STOPWORDS_CACHE
    if _STOPWORDS_CACHE is None:
        _STOPWORDS_CACHE = load_stopwords()
    return _STOPWORDS_CACHE


@dataclass(frozen=True)
class RawDocument:
    id: str
    timestamp: datetime
    text: str


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    index: dict[str, int] = field(compare=False)

    @classmethod
    def from_terms(cls, terms) -> "Vocabulary":
        terms = tuple(terms)
        index = {t: i for i, t in enumerate(terms)}
        if len(index) != len(terms):
            raise InputError("vocabulary contains duplicate terms")
        return cls(terms=terms, index=index)

    def __len__(self) -> int:
        return len(self.terms)


def build_vocabulary(token_lists, size: int) -> tuple[Vocabulary, float]:
    """Keep the `size` most frequent tokens (ties lexicographic).

    Returns the vocabulary and the coverage: the fraction of all token
    occurrences that fall inside it.
    """
    if size < 1:
        raise InputError(f"vocabulary size must be >= 1, got {size}")
    counts = Counter()
    for tokens in token_lists:
        counts.update(tokens)
    total = sum(counts.values())
    if len(counts) < size and len(counts) > 0:
        warnings.warn(
            f"requested vocabulary of {size} but only {len(counts)} distinct tokens exist"
        )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:size]
    vocab = Vocabulary.from_terms(t for t, _ in ranked)
    retained = sum(c for _, c in ranked)
    coverage = retained / total if total > 0 else 1.0
    return vocab, coverage


def parse_timestamp(value: str) -> datetime:
    """ISO-8601 parse; aware timestamps are converted to naive UTC."""
    try:
        ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise InputError(f"unparseable timestamp {value!r}: {exc}") from exc
    if ts.tzinfo is not None:
        from datetime import timezone

        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def bucketize(
    documents: list[RawDocument],
    scheme: str = "month",
    boundaries: list[datetime] | None = None,
    boundary_labels: list[str] | None = None,
) -> tuple[list[str], list[list[RawDocument]]]:
    """Assign each document to one chronological period.

    scheme "month"/"day" buckets by the distinct calendar units present in
    the data; scheme "explicit" uses half-open intervals between consecutive
    `boundaries` (T+1 of them) and permits empty periods.
    """
    if scheme in ("month", "day"):
        if not documents:
            raise InputError("cannot derive periods from an empty document set")
        if scheme == "month":
            key = lambda d: f"{d.timestamp.year:04d}-{d.timestamp.month:02d}"
        else:
            key = lambda d: d.timestamp.date().isoformat()
        labels = sorted({key(d) for d in documents})
        pos = {lab: i for i, lab in enumerate(labels)}
        buckets: list[list[RawDocument]] = [[] for _ in labels]
        for d in documents:
            buckets[pos[key(d)]].append(d)
        return labels, buckets
    if scheme == "explicit":
        if boundaries is None or len(boundaries) < 2:
            raise InputError("explicit scheme needs at least 2 boundaries")
        if sorted(boundaries) != list(boundaries):
            raise InputError("period boundaries must be sorted ascending")
        T = len(boundaries) - 1
        if boundary_labels is None:
            boundary_labels = [boundaries[t].isoformat() for t in range(T)]
        buckets = [[] for _ in range(T)]
        for d in documents:
            if d.timestamp < boundaries[0] or d.timestamp >= boundaries[-1]:
                raise InputError(
                    f"document {d.id!r} dated {d.timestamp.isoformat()} falls outside all periods"
                )
            t = int(np.searchsorted([b for b in boundaries], d.timestamp, side="right")) - 1
            buckets[t].append(d)
        empty = [boundary_labels[t] for t in range(T) if not buckets[t]]
        if empty:
            warnings.warn(f"empty periods: {', '.join(empty)}")
        return list(boundary_labels), buckets
    raise InputError(f"unknown period scheme {scheme!r}")


def standardize_covariates(raw: np.ndarray) -> np.ndarray:
    """Center and scale each column to sample mean 0 and sd 1 (ddof=1)."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise InputError("covariate series must be a T x p matrix")
    if raw.shape[0] < 2:
        raise InputError("standardization needs at least 2 periods")
    if not np.all(np.isfinite(raw)):
        raise InputError("covariate series contains missing or non-finite values")
    sd = raw.std(axis=0, ddof=1)
    if np.any(sd == 0.0):
        bad = [int(j) for j in np.where(sd == 0.0)[0]]
        raise InputError(f"covariate columns {bad} are constant (zero variance)")
    return (raw - raw.mean(axis=0)) / sd


@dataclass(frozen=True)
class FlatCorpus:
    """Token- and document-level index arrays used by the samplers."""

    token_word: np.ndarray  # (N,) vocabulary index per token
    token_doc: np.ndarray  # (N,) global document index per token
    doc_period: np.ndarray  # (D,)
    doc_len: np.ndarray  # (D,)
    doc_offset: np.ndarray  # (D+1,) token range per document
    docs_in_period: tuple  # per period, array of global doc indices


@dataclass
class Corpus:
    period_labels: list[str]
    documents: list[list[np.ndarray]]  # [t][i] -> int64 token indices
    doc_ids: list[list[str]]
    covariates: np.ndarray  # (T, p)
    vocabulary: Vocabulary
    coverage: float = 1.0

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=float)
        self._flat: FlatCorpus | None = None

    @property
    def T(self) -> int:
        return len(self.period_labels)

    @property
    def V(self) -> int:
        return len(self.vocabulary)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def num_documents(self) -> int:
        return sum(len(docs) for docs in self.documents)

    @property
    def num_tokens(self) -> int:
        return sum(int(d.size) for docs in self.documents for d in docs)

    def period_sizes(self) -> list[int]:
        return [len(docs) for docs in self.documents]

    def validate(self) -> None:
        if len(self.documents) != self.T or len(self.doc_ids) != self.T:
            raise InputError("document buckets do not match period count")
        if self.covariates.shape[0] != self.T:
            raise InputError("covariate rows do not match period count")
        if not (0.0 <= self.coverage <= 1.0):
            raise InputError(f"coverage {self.coverage} outside [0, 1]")
        V = self.V
        for t, docs in enumerate(self.documents):
            if len(self.doc_ids[t]) != len(docs):
                raise InputError(f"period {t}: ids do not match documents")
            for tokens in docs:
                if tokens.size and (tokens.min() < 0 or tokens.max() >= V):
                    raise InputError(f"period {t}: token index outside [0, {V})")

    def flat(self) -> FlatCorpus:
        if self._flat is None:
            token_word, token_doc, doc_period, doc_len = [], [], [], []
            docs_in_period = []
            d = 0
            for t, docs in enumerate(self.documents):
                ids = []
                for tokens in docs:
                    token_word.append(tokens)
                    token_doc.append(np.full(tokens.size, d, dtype=np.int64))
                    doc_period.append(t)
                    doc_len.append(tokens.size)
                    ids.append(d)
                    d += 1
                docs_in_period.append(np.asarray(ids, dtype=np.int64))
            doc_len = np.asarray(doc_len, dtype=np.int64)
            offsets = np.zeros(d + 1, dtype=np.int64)
            np.cumsum(doc_len, out=offsets[1:])
            self._flat = FlatCorpus(
                token_word=np.concatenate(token_word) if token_word else np.zeros(0, np.int64),
                token_doc=np.concatenate(token_doc) if token_doc else np.zeros(0, np.int64),
                doc_period=np.asarray(doc_period, dtype=np.int64),
                doc_len=doc_len,
                doc_offset=offsets,
                docs_in_period=tuple(docs_in_period),
            )
        return self._flat

    def to_dict(self) -> dict:
        return {
            "format_version": CORPUS_FORMAT_VERSION,
            "kind": "corpus",
            "period_labels": list(self.period_labels),
            "documents": [
                [{"id": i, "tokens": d.tolist()} for i, d in zip(ids, docs)]
                for ids, docs in zip(self.doc_ids, self.documents)
            ],
            "covariates": self.covariates.tolist(),
            "vocabulary": list(self.vocabulary.terms),
            "coverage": self.coverage,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Corpus":
        if data.get("kind") != "corpus":
            raise InputError("not a corpus container")
        if data.get("format_version") != CORPUS_FORMAT_VERSION:
            raise InputError(f"unsupported corpus format version {data.get('format_version')}")
        documents, doc_ids = [], []
        for bucket in data["documents"]:
            documents.append([np.asarray(rec["tokens"], dtype=np.int64) for rec in bucket])
            doc_ids.append([rec["id"] for rec in bucket])
        corpus = cls(
            period_labels=list(data["period_labels"]),
            documents=documents,
            doc_ids=doc_ids,
            covariates=np.asarray(data["covariates"], dtype=float),
            vocabulary=Vocabulary.from_terms(data["vocabulary"]),
            coverage=float(data["coverage"]),
        )
        corpus.validate()
        return corpus


def save_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(corpus.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_corpus(path: str) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return Corpus.from_dict(json.load(fh))


def read_documents_ndjson(path: str) -> tuple[list[RawDocument], list[tuple[int, str]]]:
    """Read newline-delimited {id, timestamp, text} records.

    Malformed lines are skipped and returned as (line number, reason) pairs.
    Duplicate ids are fatal.
    """
    docs: list[RawDocument] = []
    malformed: list[tuple[int, str]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc = RawDocument(
                    id=str(rec["id"]),
                    timestamp=parse_timestamp(str(rec["timestamp"])),
                    text=str(rec["text"]),
                )
            except (json.JSONDecodeError, KeyError, InputError, TypeError) as exc:
                malformed.append((lineno, str(exc)))
                continue
            if doc.id in seen:
                raise InputError(f"duplicate document id {doc.id!r} at line {lineno}")
            seen.add(doc.id)
            docs.append(doc)
    if malformed:
        warnings.warn(
            "skipped malformed lines: "
            + ", ".join(f"{n} ({reason})" for n, reason in malformed[:5])
            + ("..." if len(malformed) > 5 else "")
        )
    return docs, malformed


def read_covariates_csv(path: str) -> tuple[list[str], np.ndarray, list[str]]:
    """Read a covariate table: header, first column period label, numeric rest."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"covariate file {path} is empty") from None
        if len(header) < 2:
            raise InputError("covariate file needs a label column and >= 1 numeric column")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"covariate line {lineno}: expected {len(header)} fields")
            labels.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise InputError(f"covariate line {lineno}: {exc}") from exc
    return labels, np.asarray(rows, dtype=float), header[1:]


def align_covariates(
    period_labels: list[str], cov_labels: list[str], cov_values: np.ndarray
) -> np.ndarray:
    """Reorder covariate rows to match the period order; exact label match required."""
    pos = {lab: i for i, lab in enumerate(cov_labels)}
    missing = [lab for lab in period_labels if lab not in pos]
    if missing:
        raise InputError(f"covariate file has no row for periods: {', '.join(missing)}")
    extra = [lab for lab in cov_labels if lab not in set(period_labels)]
    if extra:
        raise InputError(f"covariate file has rows for unknown periods: {', '.join(extra)}")
    return cov_values[[pos[lab] for lab in period_labels]]


@dataclass
class IngestReport:
    total_documents: int
    retained_documents: int
    dropped_empty_ids: list[str]
    malformed_lines: int
    docs_per_period: list[int]
    empty_periods: list[str]
    coverage: float

    def to_dict(self) -> dict:
        return {
            "total_documents": self.total_documents,
            "retained_documents": self.retained_documents,
            "dropped_empty_ids": list(self.dropped_empty_ids),
            "malformed_lines": self.malformed_lines,
            "docs_per_period": list(self.docs_per_period),
            "empty_periods": list(self.empty_periods),
            "coverage": self.coverage,
        }


def build_corpus(
    documents: list[RawDocument],
    cov_labels: list[str],
    cov_values: np.ndarray,
    vocab_size: int,
    scheme: str = "month",
    boundaries: list[datetime] | None = None,
    stopwords: frozenset[str] | None = None,
    stem: bool = False,
    standardize: bool = True,
    malformed_lines: int = 0,
) -> tuple[Corpus, IngestReport]:
    """Full ingestion: bucket, tokenize, truncate vocabulary, align covariates.

    Documents left with zero in-vocabulary tokens are dropped and reported.
    """
    period_labels, buckets = bucketize(documents, scheme=scheme, boundaries=boundaries)
    token_buckets = [
        [(d.id, tokenize(d.text, stopwords=stopwords, stem=stem)) for d in bucket]
        for bucket in buckets
    ]
    vocab, coverage = build_vocabulary(
        (toks for bucket in token_buckets for _, toks in bucket), vocab_size
    )
    index = vocab.index
    documents_idx: list[list[np.ndarray]] = []
    doc_ids: list[list[str]] = []
    dropped: list[str] = []
    for bucket in token_buckets:
        docs_t, ids_t = [], []
        for doc_id, toks in bucket:
            idx = np.asarray([index[t] for t in toks if t in index], dtype=np.int64)
            if idx.size == 0:
                dropped.append(doc_id)
                continue
            docs_t.append(idx)
            ids_t.append(doc_id)
        documents_idx.append(docs_t)
        doc_ids.append(ids_t)
    cov = align_covariates(period_labels, cov_labels, np.asarray(cov_values, dtype=float))
    if standardize:
        cov = standardize_covariates(cov)
    corpus = Corpus(
        period_labels=period_labels,
        documents=documents_idx,
        doc_ids=doc_ids,
        covariates=cov,
        vocabulary=vocab,
        coverage=coverage,
    )
    corpus.validate()
    empty = [period_labels[t] for t, docs in enumerate(documents_idx) if not docs]
    if empty:
        warnings.warn(f"periods with no retained documents: {', '.join(empty)}")
    report = IngestReport(
        total_documents=len(documents),
        retained_documents=corpus.num_documents,
        dropped_empty_ids=dropped,
        malformed_lines=malformed_lines,
        docs_per_period=corpus.period_sizes(),
        empty_periods=empty,
        coverage=coverage,
    )
    return corpus, report
