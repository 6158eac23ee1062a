"""Raw message to uniform record: parse, pick a body, reduce markup, clean, normalize."""
from __future__ import annotations

from dataclasses import dataclass

from .cleaning import clean_text
from .html_reduce import ReducedBody, reduce_html
from .ingest import EmailRecord, UniformRecord, normalize_record, record_from_eml

__all__ = ["PreparedEmail", "prepare_record", "prepare_email"]


@dataclass(frozen=True)
class PreparedEmail:
    record: EmailRecord
    reduced: ReducedBody
    uniform: UniformRecord


def prepare_record(rec: EmailRecord) -> PreparedEmail:
    """Run an already-parsed record through reduction, cleaning and normalization."""
    if rec.body_html is not None:
        reduced = reduce_html(rec.body_html)
    else:
        reduced = ReducedBody.from_text(rec.body_text or "")
    body = clean_text(reduced.text) if not rec.null_body else None
    return PreparedEmail(rec, reduced, normalize_record(rec, body))


def prepare_email(raw: bytes, source: str = "eml", label=None) -> PreparedEmail:
    return prepare_record(record_from_eml(raw, source=source, label=label))

