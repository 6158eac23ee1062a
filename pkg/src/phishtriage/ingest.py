"""Turn raw .eml messages and tabular datasets into email records.

The parser is deliberately tolerant: phishing corpora are full of broken
MIME, bogus charsets and bodies that claim to be base64 but are not.  Only
an empty input is treated as an error; everything else degrades.
"""
from __future__ import annotations

import base64
import binascii
import codecs
import csv
import email
import hashlib
import json
import quopri
import re
import sys
from dataclasses import dataclass, fields
from email.header import decode_header, make_header
from email.policy import compat32
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import EmptyInput, UnknownColumn, UnreadableFile

__all__ = [
    "Label",
    "MimePart",
    "RawEmail",
    "EmailRecord",
    "UniformRecord",
    "ColumnMapping",
    "RowFailure",
    "RecordList",
    "parse_eml",
    "select_body",
    "decode_part",
    "looks_like_base64",
    "decode_header_value",
    "record_from_eml",
    "load_label_synonyms",
    "normalize_label",
    "load_tabular_dataset",
    "normalize_record",
    "content_id",
]


class Label(str, Enum):
    PHISHING = "Phishing"
    LEGIT = "Legit"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class MimePart:
    content_type: str = "text/plain"
    charset: Optional[str] = None
    transfer_encoding: str = "none"  # none | quoted-printable | base64 | other
    payload: bytes = b""
    disposition: Optional[str] = None


@dataclass(frozen=True)
class RawEmail:
    headers: tuple[tuple[str, str], ...]
    parts: tuple[MimePart, ...]

    def get(self, name: str, default: Optional[str] = None) -> Optional[str]:
        name = name.lower()
        for key, value in self.headers:
            if key.lower() == name:
                return value
        return default

    def get_all(self, name: str) -> list[str]:
        name = name.lower()
        return [value for key, value in self.headers if key.lower() == name]

    @property
    def subject(self) -> str:
        return decode_header_value(self.get("subject", ""))

    @property
    def sender(self) -> str:
        return decode_header_value(self.get("from", ""))


@dataclass(frozen=True)
class EmailRecord:
    id: str
    subject: str = ""
    sender: str = ""
    body_text: Optional[str] = None
    body_html: Optional[str] = None
    label: Optional[Label] = None
    source: str = ""
    null_body: bool = False

    def __post_init__(self):
        if self.label is not None and not isinstance(self.label, Label):
            object.__setattr__(self, "label", Label(self.label))
        if self.body_text is None and self.body_html is None:
            object.__setattr__(self, "null_body", True)


@dataclass(frozen=True)
class UniformRecord:
    """One email in the two-column ``Email``/``Class`` form.

    ``body`` keeps the cleaned EMAIL payload so corpus filters can measure it
    without ever splitting ``email_text``.
    """

    id: str
    email_text: str
    label: Optional[Label] = None
    source: str = ""
    body: str = ""

    def __post_init__(self):
        if self.label is not None and not isinstance(self.label, Label):
            object.__setattr__(self, "label", Label(self.label))


def content_id(raw: bytes, source: str = "") -> str:
    digest = hashlib.sha256()
    digest.update(source.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(raw)
    return digest.hexdigest()[:16]


# ---------------------------------------------------------------------------
# .eml parsing

_FOLD = re.compile(r"\r?\n(?=[ \t])")
_ENCODINGS = {
    "": "none",
    "7bit": "none",
    "8bit": "none",
    "binary": "none",
    "quoted-printable": "quoted-printable",
    "base64": "base64",
}


def _to_bytes(text: str) -> bytes:
    return text.encode("utf-8", "surrogateescape")


def _unfold(value) -> str:
    if not isinstance(value, str):
        value = str(value)
    value = _FOLD.sub("", value).rstrip("\r\n")
    # Non-ASCII header bytes arrive as surrogate escapes; surface them as UTF-8.
    return _to_bytes(value).decode("utf-8", "replace")


def _split_raw(raw: bytes) -> bytes:
    for sep in (b"\r\n\r\n", b"\n\n"):
        idx = raw.find(sep)
        if idx >= 0:
            return raw[idx + len(sep):]
    return raw


def _part_from(msg) -> MimePart:
    content_type = msg.get_content_type() or "text/plain"
    try:
        charset = msg.get_content_charset()
    except Exception:
        charset = None
    cte = str(msg.get("Content-Transfer-Encoding", "")).strip().lower()
    # The stored payload keeps 8-bit bytes as surrogate escapes; get_payload()
    # would re-decode them with the declared charset and lose the originals.
    payload = msg._payload
    if isinstance(payload, str):
        data = _to_bytes(payload)
    elif isinstance(payload, bytes):
        data = payload
    else:
        data = b""
    disposition = msg.get_content_disposition() if hasattr(msg, "get_content_disposition") else None
    return MimePart(
        content_type=content_type.lower(),
        charset=charset,
        transfer_encoding=_ENCODINGS.get(cte, "other"),
        payload=data,
        disposition=disposition,
    )


def parse_eml(raw: bytes) -> RawEmail:
    """Parse an RFC 5322 / MIME byte stream.

    Malformed structure never raises; at worst the whole body comes back as
    one opaque ``application/octet-stream`` part.
    """
    if not raw:
        raise EmptyInput("empty message")
    try:
        msg = email.message_from_bytes(raw, policy=compat32)
        headers = tuple((str(name), _unfold(value)) for name, value in msg.raw_items())
        parts = []
        for part in msg.walk():
            if part.is_multipart():
                continue
            parts.append(_part_from(part))
        if not parts:
            parts.append(MimePart(payload=_split_raw(raw)))
        return RawEmail(headers=headers, parts=tuple(parts))
    except Exception:
        return RawEmail(
            headers=(),
            parts=(MimePart(content_type="application/octet-stream", payload=raw),),
        )


def decode_header_value(value: Optional[str]) -> str:
    """Decode RFC 2047 encoded-words; undecodable input passes through verbatim."""
    if not value:
        return ""
    try:
        return str(make_header(decode_header(value)))
    except Exception:
        return value


# ---------------------------------------------------------------------------
# body selection and decoding

_B64_ALPHABET = frozenset(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/=")
_ASCII_WS = re.compile(rb"[ \t\r\n\f\v]+")
_B64_MIN_LEN = 16


def looks_like_base64(data: bytes) -> bool:
    """Heuristic for bodies that carry base64 without declaring it.

    At least 95% of the non-whitespace bytes must be in the base64 alphabet
    and the stripped length must be a multiple of four.  Lines may not
    contain interior spaces, which keeps ordinary prose out.
    """
    for line in data.splitlines():
        if b" " in line.strip() or b"\t" in line.strip():
            return False
    compact = _ASCII_WS.sub(b"", data)
    if len(compact) < _B64_MIN_LEN or len(compact) % 4:
        return False
    hits = sum(1 for byte in compact if byte in _B64_ALPHABET)
    return hits >= 0.95 * len(compact)


def _b64decode(data: bytes) -> Optional[bytes]:
    compact = _ASCII_WS.sub(b"", data)
    rem = len(compact) % 4
    if rem == 1:
        return None
    if rem:
        compact += b"=" * (4 - rem)
    try:
        return base64.b64decode(compact, validate=True)
    except (binascii.Error, ValueError):
        return None


def _codec(charset: Optional[str]) -> str:
    if not charset:
        return "utf-8"
    try:
        return codecs.lookup(charset.strip().strip('"')).name
    except (LookupError, ValueError):
        return "utf-8"


def _decode_text(raw: bytes, charset: Optional[str]) -> str:
    return raw.decode(_codec(charset), errors="replace")


def _strict_text(raw: bytes, charset: Optional[str]) -> Optional[str]:
    try:
        text = raw.decode(_codec(charset))
    except (UnicodeDecodeError, LookupError):
        return None
    if not text:
        return text
    printable = sum(1 for ch in text if ch.isprintable() or ch.isspace())
    return text if printable >= 0.9 * len(text) else None


def decode_part(part: MimePart) -> Optional[str]:
    """Decode a part's payload to text, or ``None`` when it must be treated as null."""
    data = part.payload
    if part.transfer_encoding == "base64":
        raw = _b64decode(data)
        if raw is None:
            return None
        return _decode_text(raw, part.charset)
    if part.transfer_encoding == "quoted-printable":
        return _decode_text(quopri.decodestring(data), part.charset)
    if looks_like_base64(data):
        raw = _b64decode(data)
        if raw is None:
            return None
        text = _strict_text(raw, part.charset)
        if text is not None:
            return text
        # decoded bytes are not text, so the payload was plain all along
    return _decode_text(data, part.charset)


def _first_part(msg: RawEmail, content_type: str) -> Optional[MimePart]:
    for part in msg.parts:
        if part.content_type == content_type and part.disposition != "attachment":
            return part
    return None


def select_body(msg: RawEmail) -> Optional[tuple[bool, str]]:
    """Return ``(is_html, text)`` for the preferred body part.

    ``text/html`` wins over ``text/plain``.  ``None`` means the message has
    no usable body: no text part, or a base64 payload that would not decode.
    """
    html = _first_part(msg, "text/html")
    part = html or _first_part(msg, "text/plain")
    if part is None:
        return None
    text = decode_part(part)
    if text is None:
        return None
    return part is html, text


def record_from_eml(raw: bytes, source: str = "eml", label=None) -> EmailRecord:
    msg = parse_eml(raw)
    body = select_body(msg)
    html = text = None
    if body is not None:
        is_html, content = body
        if is_html:
            html = content
        else:
            text = content
    return EmailRecord(
        id=content_id(raw, source),
        subject=msg.subject,
        sender=msg.sender,
        body_text=text,
        body_html=html,
        label=normalize_label(label) if isinstance(label, str) else label,
        source=source,
    )


# ---------------------------------------------------------------------------
# tabular datasets


def load_label_synonyms(path: Optional[Path] = None) -> dict[str, Label]:
    """Load the label synonym table (``{"Phishing": [...], "Legit": [...]}``)."""
    if path is None:
        raw = resources.files("phishtriage.data").joinpath("labels.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    table = {}
    for canonical, words in json.loads(raw).items():
        label = Label(canonical)
        table[label.value.lower()] = label
        for word in words:
            table[str(word).strip().lower()] = label
    return table


_DEFAULT_SYNONYMS: Optional[dict[str, Label]] = None


def normalize_label(value, synonyms: Optional[Mapping[str, Label]] = None) -> Optional[Label]:
    """Map a raw label to ``Label``; blanks give ``None``, unknown words raise ``ValueError``."""
    global _DEFAULT_SYNONYMS
    if value is None or isinstance(value, Label):
        return value
    if synonyms is None:
        if _DEFAULT_SYNONYMS is None:
            _DEFAULT_SYNONYMS = load_label_synonyms()
        synonyms = _DEFAULT_SYNONYMS
    if isinstance(value, bool):
        value = "true" if value else "false"
    key = str(value).strip().lower()
    if not key:
        return None
    try:
        return synonyms[key]
    except KeyError:
        raise ValueError(f"unknown label {value!r}") from None


_GUESSES = {
    "subject": ("subject", "title", "email subject"),
    "sender": ("sender", "from", "email_from", "from_address"),
    "body": ("body", "email text", "email_text", "text", "content", "message", "email"),
    "label": ("label", "class", "category", "type", "email type", "is_phishing"),
}


@dataclass(frozen=True)
class ColumnMapping:
    subject: Optional[str] = None
    sender: Optional[str] = None
    body: Optional[str] = None
    label: Optional[str] = None

    @classmethod
    def parse(cls, spec: str) -> "ColumnMapping":
        """Build from ``"subject=Subject,body=Text"``."""
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for item in filter(None, (s.strip() for s in spec.split(","))):
            key, sep, column = item.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise ValueError(f"bad column mapping entry {item!r}")
            kwargs[key] = column.strip()
        return cls(**kwargs)

    @classmethod
    def guess(cls, columns: Iterable[str]) -> "ColumnMapping":
        lowered = {c.strip().lower(): c for c in columns}
        kwargs = {}
        for key, candidates in _GUESSES.items():
            for candidate in candidates:
                if candidate in lowered:
                    kwargs[key] = lowered[candidate]
                    break
        return cls(**kwargs)

    def columns(self) -> list[str]:
        return [c for c in (self.subject, self.sender, self.body, self.label) if c]


@dataclass(frozen=True)
class RowFailure:
    row: int
    reason: str


class RecordList(list):
    """A list of records that also remembers rows it could not parse."""

    def __init__(self, records=(), failures=()):
        super().__init__(records)
        self.failures: list[RowFailure] = list(failures)


_HTML_HINT = re.compile(r"<\s*(?:html|body|div|p|a|br|table|span|img|font|td)\b", re.I)


def _read_rows(path: Path, fmt: str) -> tuple[list[str], list]:
    try:
        text = path.read_text(encoding="utf-8-sig")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if fmt == "csv":
        csv.field_size_limit(min(sys.maxsize, 2**31 - 1))
        try:
            reader = csv.DictReader(text.splitlines(keepends=True))
            columns = list(reader.fieldnames or [])
            rows = list(reader)
        except csv.Error as exc:
            raise UnreadableFile(f"{path}: {exc}") from exc
        return columns, rows
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UnreadableFile(f"{path}: {exc}") from exc
        if not isinstance(data, list):
            raise UnreadableFile(f"{path}: expected a JSON array of objects")
        columns: dict[str, None] = {}
        for item in data:
            if isinstance(item, dict):
                columns.update(dict.fromkeys(item))
        return list(columns), data
    raise ValueError(f"unsupported format {fmt!r}")


def _cell(row: Mapping, column: Optional[str]) -> str:
    if column is None:
        return ""
    value = row.get(column)
    if value is None:
        return ""
    if isinstance(value, (dict, list)):
        raise ValueError(f"column {column!r} is not a scalar")
    return str(value)


def load_tabular_dataset(
    path,
    format: Optional[str] = None,
    column_mapping: Optional[ColumnMapping] = None,
    synonyms: Optional[Mapping[str, Label]] = None,
    source: Optional[str] = None,
) -> RecordList:
    """Load a CSV or JSON dataset into ``EmailRecord`` objects.

    Rows that cannot be parsed are collected on ``result.failures`` instead
    of aborting the load.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported format {fmt!r}")
    source = source if source is not None else path.stem
    columns, rows = _read_rows(path, fmt)
    mapping = column_mapping or ColumnMapping.guess(columns)
    for column in mapping.columns():
        if column not in columns:
            raise UnknownColumn(f"{path}: no column named {column!r}")

    records, failures = [], []
    for index, row in enumerate(rows):
        try:
            if not isinstance(row, dict):
                raise ValueError("row is not an object")
            if fmt == "csv" and (None in row or any(v is None for v in row.values())):
                raise ValueError("field count does not match header")
            body = _cell(row, mapping.body)
            label = normalize_label(_cell(row, mapping.label), synonyms) if mapping.label else None
            canonical = json.dumps(row, sort_keys=True, ensure_ascii=False, default=str)
            is_html = bool(_HTML_HINT.search(body))
            records.append(
                EmailRecord(
                    id=content_id(canonical.encode("utf-8"), source),
                    subject=_cell(row, mapping.subject),
                    sender=_cell(row, mapping.sender),
                    body_text=None if is_html or not body else body,
                    body_html=body if is_html else None,
                    label=label,
                    source=source,
                )
            )
        except ValueError as exc:
            failures.append(RowFailure(row=index, reason=str(exc)))
    return RecordList(records, failures)


def normalize_record(rec: EmailRecord, body: Optional[str]) -> UniformRecord:
    """Render the ``SUBJECT: ..., FROM: ..., EMAIL: ...`` form of a record."""
    body = body or ""
    text = f"SUBJECT: {rec.subject or ''}, FROM: {rec.sender or ''}, EMAIL: {body}"
    return UniformRecord(id=rec.id, email_text=text, label=rec.label, source=rec.source, body=body)
