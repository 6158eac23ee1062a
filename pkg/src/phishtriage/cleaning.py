"""Text cleaning and corpus-level filtering."""
from __future__ import annotations

import csv
import io
import json
import re
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .ingest import Label, UniformRecord, content_id, normalize_label
from ._io import atomic_write_text

__all__ = [
    "clean_text",
    "load_emoji_ranges",
    "CorpusStats",
    "Corpus",
    "CorpusSummary",
    "filter_corpus",
    "corpus_stats",
    "corpus_to_csv",
    "corpus_to_jsonl",
    "write_corpus",
    "read_corpus",
]

MIN_BODY_CHARS = 500
MAX_BODY_CHARS = 2000


def load_emoji_ranges(path: Optional[Path] = None) -> list[tuple[int, int]]:
    if path is None:
        raw = resources.files("phishtriage.data").joinpath("emoji_ranges.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    return [(int(lo, 16), int(hi, 16)) for lo, hi in json.loads(raw)["ranges"]]


@lru_cache(maxsize=None)
def _strip_pattern(ranges: tuple[tuple[int, int], ...]) -> re.Pattern:
    classes = "".join(
        re.escape(chr(lo)) if lo == hi else f"{re.escape(chr(lo))}-{re.escape(chr(hi))}"
        for lo, hi in ranges
    )
    # C0/C1 controls that are not whitespace, plus the configured emoji blocks
    return re.compile(f"[\x00-\x08\x0e-\x1b\x7f-\x84\x86-\x9f{classes}]+")


_DEFAULT_RANGES = tuple(load_emoji_ranges())
_WS = re.compile(r"\s+")


def clean_text(text: str, emoji_ranges: Optional[Sequence[tuple[int, int]]] = None) -> str:
    """Drop emoji and stray control characters, then collapse whitespace runs to one space."""
    if not text:
        return ""
    ranges = _DEFAULT_RANGES if emoji_ranges is None else tuple(map(tuple, emoji_ranges))
    text = _strip_pattern(ranges).sub("", text)
    # format characters outside the emoji blocks (bidi overrides, BOM) carry no content
    text = "".join(ch for ch in text if unicodedata.category(ch) != "Cf")
    return _WS.sub(" ", text).strip()


@dataclass(frozen=True)
class CorpusStats:
    total: int = 0
    phishing: int = 0
    legit: int = 0
    unlabeled: int = 0

    @classmethod
    def of(cls, records: Iterable[UniformRecord]) -> "CorpusStats":
        phishing = legit = unlabeled = 0
        for rec in records:
            if rec.label is Label.PHISHING:
                phishing += 1
            elif rec.label is Label.LEGIT:
                legit += 1
            else:
                unlabeled += 1
        return cls(phishing + legit + unlabeled, phishing, legit, unlabeled)


@dataclass(frozen=True)
class Corpus:
    records: tuple[UniformRecord, ...]
    stats: CorpusStats

    @classmethod
    def from_records(cls, records: Iterable[UniformRecord]) -> "Corpus":
        records = tuple(records)
        return cls(records, CorpusStats.of(records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def filter_corpus(
    records: Iterable[UniformRecord],
    min_len: int = MIN_BODY_CHARS,
    max_len: int = MAX_BODY_CHARS,
) -> Corpus:
    """Null-drop, then dedup (first occurrence wins), then the inclusive length window.

    Length is the character count of the cleaned body, not of the full
    ``SUBJECT/FROM/EMAIL`` string.
    """
    seen: set[str] = set()
    kept = []
    for rec in records:
        if not rec.body:
            continue
        if rec.email_text in seen:
            continue
        seen.add(rec.email_text)
        if min_len <= len(rec.body) <= max_len:
            kept.append(rec)
    return Corpus.from_records(kept)


@dataclass(frozen=True)
class CorpusSummary:
    total: int
    phishing: int
    legit: int
    unlabeled: int
    length_min: int
    length_max: int
    length_mean: float
    length_deciles: tuple[float, ...]

    @property
    def counts_consistent(self) -> bool:
        return self.phishing + self.legit + self.unlabeled == self.total

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "phishing": self.phishing,
            "legit": self.legit,
            "unlabeled": self.unlabeled,
            "counts_consistent": self.counts_consistent,
            "length": {
                "min": self.length_min,
                "max": self.length_max,
                "mean": self.length_mean,
                "deciles": list(self.length_deciles),
            },
        }

    def line(self) -> str:
        return (
            f"total={self.total} phishing={self.phishing} legit={self.legit} "
            f"unlabeled={self.unlabeled}"
        )


def corpus_stats(corpus: Corpus) -> CorpusSummary:
    records = corpus.records
    stats = CorpusStats.of(records)
    if not records:
        return CorpusSummary(0, 0, 0, 0, 0, 0, 0.0, (0.0,) * 9)
    lengths = np.array([len(r.body) for r in records], dtype=float)
    deciles = np.percentile(lengths, np.arange(10, 100, 10))
    return CorpusSummary(
        total=stats.total,
        phishing=stats.phishing,
        legit=stats.legit,
        unlabeled=stats.unlabeled,
        length_min=int(lengths.min()),
        length_max=int(lengths.max()),
        length_mean=float(lengths.mean()),
        length_deciles=tuple(float(d) for d in deciles),
    )


# ---------------------------------------------------------------------------
# serialization


def corpus_to_csv(records: Iterable[UniformRecord]) -> str:
    """The two-column ``Email,Class`` form."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Email", "Class"])
    for rec in records:
        writer.writerow([rec.email_text, rec.label.value if rec.label else ""])
    return buf.getvalue()


def corpus_to_jsonl(records: Iterable[UniformRecord]) -> str:
    lines = []
    for rec in records:
        lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "source": rec.source,
                    "email": rec.email_text,
                    "class": rec.label.value if rec.label else None,
                    "body": rec.body,
                },
                ensure_ascii=False,
            )
        )
    return "".join(line + "\n" for line in lines)


def write_corpus(records: Iterable[UniformRecord], path) -> None:
    """Write ``.csv`` (two columns) or ``.jsonl`` (with provenance), atomically."""
    path = Path(path)
    records = list(records)
    if path.suffix.lower() == ".csv":
        atomic_write_text(path, corpus_to_csv(records))
    else:
        atomic_write_text(path, corpus_to_jsonl(records))


def read_corpus(path) -> list[UniformRecord]:
    """Read a corpus written by :func:`write_corpus`.

    The two-column CSV form has no separate body, so ``body`` falls back to
    the whole ``email_text`` (which is never split).
    """
    path = Path(path)
    records = []
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                text = row.get("Email") or ""
                records.append(
                    UniformRecord(
                        id=content_id(text.encode("utf-8"), path.stem),
                        email_text=text,
                        label=normalize_label(row.get("Class") or None),
                        source=path.stem,
                        body=text,
                    )
                )
        return records
    with path.open(encoding="utf-8") as fh:
        for number, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if not isinstance(obj, dict) or not isinstance(obj.get("email"), str):
                raise ValueError(f"{path} line {number}: expected an object with an 'email' string")
            text = obj["email"]
            records.append(
                UniformRecord(
                    id=obj.get("id") or content_id(text.encode("utf-8"), path.stem),
                    email_text=text,
                    label=normalize_label(obj.get("class")),
                    source=obj.get("source", ""),
                    body=obj.get("body", text),
                )
            )
    return records
