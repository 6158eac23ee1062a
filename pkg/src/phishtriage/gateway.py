"""Mailbox automation: skip trusted senders, classify the rest, quarantine phishing.

The reference mailbox is a directory::

    inbox/<id>.eml      new mail, consumed
    spam/<id>.eml       written when a message is moved to spam
    reports/<id>.txt    user-facing report for a spam move
    .processed          append-only ledger, one "<id>\\t<outcome>" line per message

Classifier failures are fail-open by default: the message stays where it is
and is recorded as delivered unscanned.
"""
from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from email.utils import getaddresses
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol

import httpx

from . import errors
from ._io import atomic_write_text
from .ingest import parse_eml
from .llm import ClassificationOutcome, ErrorInfo, ModelConfig, RateLimiter, ResponseCache, classify_email
from .pipeline import prepare_email
from .prompt import Verdict, build_request
from .urls import ReputationClient, UrlReport, analyze_urls, extract_urls

__all__ = [
    "Whitelist",
    "filter_trusted",
    "MailboxAdapter",
    "MaildirAdapter",
    "AdapterError",
    "Outcome",
    "Disposition",
    "GatewayConfig",
    "process_incoming",
    "generate_user_report",
    "Gateway",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# trusted senders


@dataclass(frozen=True)
class Whitelist:
    """Exact addresses (``hr@company.com``), domains (``company.com``) and
    subdomain patterns (``*.company.com``, which also matches the bare domain).
    """

    addresses: frozenset[str] = frozenset()
    domains: frozenset[str] = frozenset()
    suffixes: frozenset[str] = frozenset()

    @classmethod
    def of(cls, entries: Iterable[str]) -> "Whitelist":
        addresses, domains, suffixes = set(), set(), set()
        for raw in entries:
            entry = raw.strip().lower()
            if not entry or entry.startswith("#"):
                continue
            if "@" in entry:
                addresses.add(entry)
            elif entry.startswith("*."):
                suffixes.add(entry[2:].strip("."))
            else:
                domains.add(entry.lstrip("@").strip("."))
        return cls(frozenset(addresses), frozenset(domains), frozenset(suffixes))

    @classmethod
    def from_file(cls, path) -> "Whitelist":
        try:
            return cls.of(Path(path).read_text("utf-8").splitlines())
        except (OSError, UnicodeDecodeError) as exc:
            raise errors.UnreadableFile(f"cannot read whitelist {path}: {exc}") from exc

    def __bool__(self) -> bool:
        return bool(self.addresses or self.domains or self.suffixes)

    def matches(self, address: str) -> bool:
        address = address.strip().lower()
        local, at, domain = address.rpartition("@")
        if not at or not local or not domain:
            return False
        if address in self.addresses or domain in self.domains:
            return True
        return any(domain == s or domain.endswith("." + s) for s in self.suffixes)


def filter_trusted(sender: str, wl: Whitelist) -> bool:
    """True iff the From address is whitelisted.  Display names are ignored."""
    if not sender or not wl:
        return False
    try:
        pairs = getaddresses([sender])
    except Exception:
        return False
    found = [addr for _, addr in pairs if addr]
    # several addresses in one From header is itself suspicious
    if len(found) != 1:
        return False
    return wl.matches(found[0])


# ---------------------------------------------------------------------------
# mailbox adapters


class AdapterError(errors.PhishTriageError):
    """A mailbox operation failed after its retry."""


class MailboxAdapter(Protocol):
    def poll_new(self) -> list[tuple[str, bytes]]: ...

    def move_to_spam(self, msg_id: str) -> None: ...

    def deliver_report(self, msg_id: str, text: str) -> None: ...

    def mark_processed(self, msg_id: str, tag: str = "") -> None: ...


class MaildirAdapter:
    """Filesystem mailbox with ``inbox/``, ``spam/`` and ``reports/`` folders."""

    def __init__(self, root, batch_size: int = 50):
        self.root = Path(root)
        self.inbox = self.root / "inbox"
        self.spam = self.root / "spam"
        self.reports = self.root / "reports"
        self.ledger = self.root / ".processed"
        self.batch_size = batch_size
        for folder in (self.inbox, self.spam, self.reports):
            folder.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._processed: Optional[set[str]] = None

    def processed(self) -> set[str]:
        with self._lock:
            if self._processed is None:
                self._processed = set()
                if self.ledger.exists():
                    for line in self.ledger.read_text("utf-8").splitlines():
                        if line.strip():
                            self._processed.add(line.split("\t", 1)[0])
            return set(self._processed)

    def poll_new(self) -> list[tuple[str, bytes]]:
        done = self.processed()
        out = []
        for path in sorted(self.inbox.glob("*.eml")):
            if path.stem in done:
                continue
            try:
                out.append((path.stem, path.read_bytes()))
            except FileNotFoundError:
                continue  # raced with a move
            if len(out) >= self.batch_size:
                break
        return out

    def move_to_spam(self, msg_id: str) -> None:
        src = self.inbox / f"{msg_id}.eml"
        dest = self.spam / f"{msg_id}.eml"
        if not src.exists() and dest.exists():
            return
        os.replace(src, dest)

    def deliver_report(self, msg_id: str, text: str) -> None:
        atomic_write_text(self.reports / f"{msg_id}.txt", text)

    def mark_processed(self, msg_id: str, tag: str = "") -> None:
        self.processed()
        with self._lock:
            if msg_id in self._processed:
                return
            with open(self.ledger, "a", encoding="utf-8") as fh:
                fh.write(f"{msg_id}\t{tag}\n" if tag else f"{msg_id}\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._processed.add(msg_id)

    def tag_of(self, msg_id: str) -> Optional[str]:
        if not self.ledger.exists():
            return None
        tag = None
        for line in self.ledger.read_text("utf-8").splitlines():
            ident, _, rest = line.partition("\t")
            if ident == msg_id:
                tag = rest
        return tag


# ---------------------------------------------------------------------------
# dispositions


class Outcome(str, Enum):
    DELIVERED_TRUSTED = "DeliveredTrusted"
    DELIVERED_CLEAN = "DeliveredClean"
    MOVED_TO_SPAM = "MovedToSpam"
    DELIVERED_UNSCANNED = "DeliveredUnscanned"
    # fail-closed policy only: classifier failed, message quarantined unjudged
    HELD = "Held"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Disposition:
    outcome: Outcome
    verdict: Optional[Verdict] = None
    report: Optional[str] = None
    url_report: Optional[UrlReport] = None
    error: Optional[str] = None

    def __post_init__(self):
        if self.outcome is Outcome.MOVED_TO_SPAM and (self.verdict is None or not self.verdict.is_phishing):
            raise ValueError("MovedToSpam requires a phishing verdict")


FAIL_POLICIES = ("open", "closed")
URL_MODES = ("off", "report", "prompt")


@dataclass
class GatewayConfig:
    """Gateway settings.

    ``url_analysis``: ``off``; ``report`` runs the URL analyzer after the
    verdict and adds its findings to the user report; ``prompt`` also feeds
    the summary to the model.
    """

    model: ModelConfig
    whitelist: Whitelist = field(default_factory=Whitelist)
    fail_policy: str = "open"
    url_analysis: str = "off"
    poll_interval: float = 5.0
    batch_size: int = 50
    reputation: Optional[ReputationClient] = None
    persona: Optional[str] = None
    cache: Optional[ResponseCache] = None
    report_max_chars: int = 4000

    def __post_init__(self):
        if self.fail_policy not in FAIL_POLICIES:
            raise ValueError(f"fail_policy must be one of {FAIL_POLICIES}")
        if self.url_analysis not in URL_MODES:
            raise ValueError(f"url_analysis must be one of {URL_MODES}")
        if self.poll_interval <= 0:
            raise ValueError("poll_interval must be positive")


def _retry_once(action: Callable[[], None], what: str) -> None:
    for attempt in (1, 2):
        try:
            action()
            return
        except Exception as exc:  # adapters are pluggable; any failure counts
            if attempt == 2:
                raise AdapterError(f"{what} failed twice: {exc}") from exc
            log.warning("%s failed (%s); retrying once", what, exc)


def _heading_block(title: str, items: Iterable[str]) -> list[str]:
    items = [i.strip() for i in items if i and i.strip()]
    if not items:
        return []
    return ["", title] + [f"  - {i}" for i in items]


def _finding_line(f) -> Optional[str]:
    flags = []
    if f.is_shortened:
        flags.append("link shortener hides the destination")
    if f.brand_mismatch:
        brand, official = f.brand_mismatch
        flags.append(f"mentions {brand} but points to {f.registrable_domain}, not {official}")
    if f.reputation.value in ("Malicious", "Suspicious"):
        flags.append(f"reputation {f.reputation.value}")
    if not flags:
        return None
    return f"{f.url}: " + "; ".join(flags)


def generate_user_report(v: Verdict, findings: Optional[UrlReport] = None, max_chars: int = 4000) -> str:
    """Plain-text notice for the recipient of a quarantined message.

    Sections with nothing to show are left out.  Output never exceeds
    ``max_chars``; overflow is cut at a line boundary and marked.
    """
    label = "likely phishing" if v.is_phishing else "not phishing"
    lines = [f"This message was classified as {label} (risk: {v.risk.value})."]
    if v.reason.strip():
        lines.append(v.reason.strip())
    lines += _heading_block("Red flags:", v.social_engineering_elements)
    lines += _heading_block("Recommended actions:", v.actions)
    if findings is not None:
        url_lines = [line for line in map(_finding_line, findings.findings) if line]
        if findings.hidden_text_removals:
            url_lines.append(f"{findings.hidden_text_removals} hidden text element(s) were removed from the message")
        lines += _heading_block("Link analysis:", url_lines)
    text = "\n".join(lines) + "\n"
    if len(text) <= max_chars:
        return text
    mark = "[report truncated]\n"
    kept, used = [], len(mark)
    for line in lines:
        if used + len(line) + 1 > max_chars:
            break
        kept.append(line)
        used += len(line) + 1
    if not kept:
        return text[: max(max_chars - len(mark), 0)] + mark[: max_chars]
    return "\n".join(kept) + "\n" + mark


def process_incoming(
    msg_id: str,
    raw: bytes,
    config: GatewayConfig,
    adapter: MailboxAdapter,
    *,
    client: Optional[httpx.Client] = None,
    limiter: Optional[RateLimiter] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> Disposition:
    """Decide one message and carry out the mailbox side effects.

    Does not mark the message processed; the caller does that once the
    disposition has been applied.
    """
    try:
        sender = parse_eml(raw).sender
    except errors.PhishTriageError:
        sender = ""
    if filter_trusted(sender, config.whitelist):
        return Disposition(Outcome.DELIVERED_TRUSTED)

    url_report = None
    try:
        prepared = prepare_email(raw, source=f"gateway:{msg_id}")
        if config.url_analysis != "off":
            url_report = analyze_urls(
                prepared.uniform.email_text,
                extract_urls(prepared.reduced),
                reputation=config.reputation,
                hidden_text_removals=prepared.reduced.hidden_removed,
            )
        summary = url_report.summary if url_report is not None and config.url_analysis == "prompt" else None
        req = build_request(prepared.uniform, persona=config.persona, url_summary=summary)
        outcome = classify_email(
            req, config.model, record_id=msg_id, client=client, limiter=limiter,
            cache=config.cache, sleep=sleep,
        )
    except errors.PhishTriageError as exc:
        outcome = ClassificationOutcome(msg_id, error=ErrorInfo.of(exc))

    if outcome.error is not None:
        reason = f"{outcome.error.kind}: {outcome.error.message}"
        if config.fail_policy == "closed":
            log.warning("message %s held unscanned: %s", msg_id, reason)
            _retry_once(lambda: adapter.move_to_spam(msg_id), f"move {msg_id} to spam")
            note = (
                "This message could not be scanned and was held for review.\n"
                f"Classifier error: {reason}\n"
            )
            _retry_once(lambda: adapter.deliver_report(msg_id, note), f"report for {msg_id}")
            return Disposition(Outcome.HELD, report=note, url_report=url_report, error=reason)
        log.warning("message %s delivered unscanned: %s", msg_id, reason)
        return Disposition(Outcome.DELIVERED_UNSCANNED, url_report=url_report, error=reason)

    verdict = outcome.verdict
    if not verdict.is_phishing:
        return Disposition(Outcome.DELIVERED_CLEAN, verdict=verdict, url_report=url_report)
    report = generate_user_report(verdict, url_report, config.report_max_chars)
    _retry_once(lambda: adapter.move_to_spam(msg_id), f"move {msg_id} to spam")
    _retry_once(lambda: adapter.deliver_report(msg_id, report), f"report for {msg_id}")
    return Disposition(Outcome.MOVED_TO_SPAM, verdict=verdict, report=report, url_report=url_report)


class Gateway:
    """Polling loop over one mailbox.  Messages are handled one at a time."""

    def __init__(
        self,
        adapter: MailboxAdapter,
        config: GatewayConfig,
        *,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.adapter = adapter
        self.config = config
        self.client = client
        self.sleep = sleep
        self.limiter = RateLimiter(config.model.rate_limit)
        self.stop_event = threading.Event()
        self.cycles = 0

    def run_once(self) -> list[tuple[str, Disposition]]:
        try:
            batch = self.adapter.poll_new()
        except Exception as exc:
            log.error("polling failed: %s", exc)
            return []
        done = []
        for msg_id, raw in batch[: self.config.batch_size]:
            if self.stop_event.is_set():
                break  # the rest stays unprocessed for the next run
            try:
                disposition = process_incoming(
                    msg_id, raw, self.config, self.adapter,
                    client=self.client, limiter=self.limiter, sleep=self.sleep,
                )
                _retry_once(
                    lambda: self.adapter.mark_processed(msg_id, disposition.outcome.value),
                    f"mark {msg_id} processed",
                )
            except AdapterError as exc:
                log.error("leaving %s for the next poll: %s", msg_id, exc)
                continue
            log.info("%s -> %s", msg_id, disposition.outcome.value)
            done.append((msg_id, disposition))
        self.cycles += 1
        return done

    def run_forever(self, max_cycles: Optional[int] = None) -> None:
        """Poll until :meth:`stop` is called or ``max_cycles`` cycles have run."""
        own_client = self.client is None
        if own_client:
            self.client = httpx.Client()
        try:
            while not self.stop_event.is_set():
                self.run_once()
                if max_cycles is not None and self.cycles >= max_cycles:
                    break
                self.stop_event.wait(self.config.poll_interval)
        finally:
            if own_client:
                self.client.close()
                self.client = None

    def stop(self) -> None:
        self.stop_event.set()
