"""URL analysis layer: shorteners, brand/domain mismatch, reputation lookups."""
from __future__ import annotations

import base64
import html
import ipaddress
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol
from urllib.parse import urlsplit

import httpx

from .errors import ProviderUnavailable, QuotaExceeded
from .html_reduce import ReducedBody

__all__ = [
    "Reputation",
    "UrlFinding",
    "UrlReport",
    "PublicSuffixList",
    "registrable_domain",
    "url_host",
    "load_shorteners",
    "load_brands",
    "extract_urls",
    "analyze_urls",
    "lookup_reputation",
    "ReputationClient",
    "StubReputation",
    "HttpReputationClient",
    "ReputationThresholds",
    "classify_engine_counts",
]

log = logging.getLogger(__name__)


class Reputation(str, Enum):
    CLEAN = "Clean"
    SUSPICIOUS = "Suspicious"
    MALICIOUS = "Malicious"
    UNKNOWN = "Unknown"

    def __str__(self) -> str:
        return self.value


# ---------------------------------------------------------------------------
# registrable domains


class PublicSuffixList:
    """Matcher over the bundled public suffix snapshot (standard PSL algorithm)."""

    def __init__(self, text: str):
        self.rules: set[str] = set()
        self.wildcards: set[str] = set()
        self.exceptions: set[str] = set()
        for line in text.splitlines():
            rule = line.strip()
            if not rule or rule.startswith("//"):
                continue
            rule = rule.split()[0].lower()
            if rule.startswith("!"):
                self.exceptions.add(rule[1:])
            elif rule.startswith("*."):
                self.wildcards.add(rule[2:])
            else:
                self.rules.add(rule)

    @classmethod
    @lru_cache(maxsize=1)
    def bundled(cls) -> "PublicSuffixList":
        text = resources.files("phishtriage.data").joinpath("public_suffix_list.dat").read_text("utf-8")
        return cls(text)

    def public_suffix(self, labels: list[str]) -> int:
        """Number of trailing labels forming the public suffix."""
        best = 1  # implicit "*" rule
        for i in range(len(labels)):
            candidate = ".".join(labels[i:])
            size = len(labels) - i
            if candidate in self.exceptions:
                return size - 1
            if candidate in self.rules:
                best = max(best, size)
            parent = ".".join(labels[i + 1:])
            if i + 1 < len(labels) and parent in self.wildcards:
                best = max(best, size)
        return best

    def registrable_domain(self, host: str) -> Optional[str]:
        host = host.strip().lower()
        if not host or host.startswith(".") or ".." in host:
            return None
        labels = host.rstrip(".").split(".")
        # rules are stored in Unicode; punycode labels are matched decoded
        suffix = self.public_suffix([_unpuny(label) for label in labels])
        if len(labels) <= suffix:
            return None
        return ".".join(labels[-(suffix + 1):])


def _unpuny(label: str) -> str:
    if label.startswith("xn--"):
        try:
            return label.encode("ascii").decode("idna")
        except UnicodeError:
            return label
    return label


def url_host(url: str) -> str:
    """Lower-cased host of ``url``; scheme-less ``www.`` links are accepted."""
    candidate = url.strip()
    if "://" not in candidate:
        candidate = "http://" + candidate
    try:
        host = urlsplit(candidate).hostname or ""
    except ValueError:
        host = ""
    return host.lower().rstrip(".")


def registrable_domain(url_or_host: str, psl: Optional[PublicSuffixList] = None) -> str:
    """eTLD+1 of a URL or host; IPs and unlisted single labels come back as the bare host."""
    host = url_host(url_or_host) if ("/" in url_or_host or ":" in url_or_host) else url_or_host.lower()
    if not host:
        return ""
    try:
        ipaddress.ip_address(host.strip("[]"))
        return host
    except ValueError:
        pass
    found = (psl or PublicSuffixList.bundled()).registrable_domain(host)
    return found or host


# ---------------------------------------------------------------------------
# configuration data


def _data_text(name: str) -> str:
    return resources.files("phishtriage.data").joinpath(name).read_text("utf-8")


def load_shorteners(path: Optional[Path] = None) -> frozenset[str]:
    text = Path(path).read_text("utf-8") if path else _data_text("shorteners.txt")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def load_brands(path: Optional[Path] = None) -> dict[str, str]:
    """Brand keyword -> official registrable domain."""
    text = Path(path).read_text("utf-8") if path else _data_text("brands.json")
    return {str(k): str(v).lower() for k, v in json.loads(text).items()}


def _load_domain_list(path) -> frozenset[str]:
    text = Path(path).read_text("utf-8")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


# ---------------------------------------------------------------------------
# extraction

_MARKUP_URL = re.compile(r'<a href="([^"]*)">|<img src="([^"]*)">')
_BARE_URL = re.compile(r"\b(?:https?://|www\.)[^\s<>\"']+", re.I)
_TRAILING = ".,;:!?)]}'\""


def _clean_bare(url: str) -> str:
    while url and url[-1] in _TRAILING:
        url = url[:-1]
    return url


def extract_urls(body: ReducedBody) -> list[str]:
    """Every href, image src and bare URL in ``body``, de-duplicated in order of appearance."""
    found: list[str] = []
    seen: set[str] = set()

    def add(url: str) -> None:
        if url and url not in seen:
            seen.add(url)
            found.append(url)

    text = body.text
    pos = 0
    for match in _MARKUP_URL.finditer(text):
        for bare in _BARE_URL.finditer(html.unescape(text[pos:match.start()])):
            add(_clean_bare(bare.group(0)))
        add(html.unescape(match.group(1) if match.group(1) is not None else match.group(2)))
        pos = match.end()
    for bare in _BARE_URL.finditer(html.unescape(text[pos:])):
        add(_clean_bare(bare.group(0)))
    for href, _ in body.links:
        add(href)
    for src in body.images:
        add(src)
    return found


# ---------------------------------------------------------------------------
# reputation


@dataclass(frozen=True)
class ReputationThresholds:
    malicious: int = 3  # engines flagging malicious >= this -> Malicious
    suspicious: int = 1  # malicious + suspicious >= this -> Suspicious


def classify_engine_counts(
    malicious: int, suspicious: int, total: int, thresholds: ReputationThresholds = ReputationThresholds()
) -> Reputation:
    if total <= 0:
        return Reputation.UNKNOWN
    if malicious >= thresholds.malicious:
        return Reputation.MALICIOUS
    if malicious + suspicious >= thresholds.suspicious:
        return Reputation.SUSPICIOUS
    return Reputation.CLEAN


class ReputationClient(Protocol):
    def lookup(self, url: str) -> Reputation: ...


class StubReputation:
    """Offline reputation from allow/deny lists of registrable domains."""

    def __init__(self, allow: Iterable[str] = (), deny: Iterable[str] = ()):
        self.allow = frozenset(d.strip().lower() for d in allow)
        self.deny = frozenset(d.strip().lower() for d in deny)

    @classmethod
    def from_files(cls, allow_path=None, deny_path=None) -> "StubReputation":
        allow = _load_domain_list(allow_path) if allow_path else ()
        deny = _load_domain_list(deny_path) if deny_path else ()
        return cls(allow, deny)

    def lookup(self, url: str) -> Reputation:
        host = url_host(url)
        domain = registrable_domain(url)
        if host in self.deny or domain in self.deny:
            return Reputation.MALICIOUS
        if host in self.allow or domain in self.allow:
            return Reputation.CLEAN
        return Reputation.UNKNOWN


class HttpReputationClient:
    """VirusTotal-shaped lookup: ``GET {base_url}/urls/{base64url(url)}``.

    Results are cached by registrable domain plus path.  A 429 raises
    ``QuotaExceeded`` and suspends lookups for ``quota_backoff`` seconds;
    transport failures and 5xx raise ``ProviderUnavailable``.
    """

    def __init__(
        self,
        base_url: str = "https://www.virustotal.com/api/v3",
        api_key_env: str = "PHISHTRIAGE_REPUTATION_KEY",
        thresholds: ReputationThresholds = ReputationThresholds(),
        client: Optional[httpx.Client] = None,
        timeout: float = 15.0,
        quota_backoff: float = 60.0,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.thresholds = thresholds
        self.timeout = timeout
        self.quota_backoff = quota_backoff
        self._client = client or httpx.Client()
        self._clock = clock
        self._cache: dict[str, Reputation] = {}
        self._blocked_until = 0.0
        self._lock = threading.Lock()
        self.calls = 0

    @staticmethod
    def _cache_key(url: str) -> str:
        try:
            path = urlsplit(url if "://" in url else "http://" + url).path
        except ValueError:
            path = ""
        return f"{registrable_domain(url)}{path}"

    def lookup(self, url: str) -> Reputation:
        key = self._cache_key(url)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
            if self._clock() < self._blocked_until:
                raise QuotaExceeded("reputation quota backoff in effect")
            self.calls += 1
        ident = base64.urlsafe_b64encode(url.encode("utf-8")).decode("ascii").rstrip("=")
        headers = {}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["x-apikey"] = token
        try:
            resp = self._client.get(f"{self.base_url}/urls/{ident}", headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(str(exc) or type(exc).__name__) from None
        if resp.status_code == 429:
            with self._lock:
                self._blocked_until = self._clock() + self.quota_backoff
            raise QuotaExceeded("HTTP 429")
        if resp.status_code == 404:
            result = Reputation.UNKNOWN
        elif resp.status_code >= 400:
            raise ProviderUnavailable(f"HTTP {resp.status_code}")
        else:
            try:
                stats = resp.json()["data"]["attributes"]["last_analysis_stats"]
                malicious = int(stats.get("malicious", 0))
                suspicious = int(stats.get("suspicious", 0))
                total = sum(int(v) for v in stats.values())
            except (ValueError, KeyError, TypeError, AttributeError):
                raise ProviderUnavailable("unexpected response shape") from None
            result = classify_engine_counts(malicious, suspicious, total, self.thresholds)
        with self._lock:
            self._cache[key] = result
        return result


def lookup_reputation(url: str, client: Optional[ReputationClient]) -> tuple[Reputation, bool]:
    """Reputation for ``url``; returns ``(reputation, failed)``.

    A missing client, provider outage or exhausted quota all degrade to
    ``Unknown``; ``failed`` tells the caller to count it.
    """
    if client is None:
        return Reputation.UNKNOWN, False
    try:
        return client.lookup(url), False
    except (ProviderUnavailable, QuotaExceeded) as exc:
        log.info("reputation lookup for %s degraded to Unknown: %s", url, exc)
        return Reputation.UNKNOWN, True
    except Exception as exc:  # third-party clients may raise anything
        log.warning("reputation client error for %s: %s", url, exc)
        return Reputation.UNKNOWN, True


# ---------------------------------------------------------------------------
# analysis


@dataclass(frozen=True)
class UrlFinding:
    url: str
    registrable_domain: str
    is_shortened: bool = False
    brand_mismatch: Optional[tuple[str, str]] = None  # (brand, expected domain)
    reputation: Reputation = Reputation.UNKNOWN

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "registrable_domain": self.registrable_domain,
            "is_shortened": self.is_shortened,
            "brand_mismatch": (
                {"brand": self.brand_mismatch[0], "expected_domain": self.brand_mismatch[1]}
                if self.brand_mismatch
                else None
            ),
            "reputation": self.reputation.value,
        }


@dataclass(frozen=True)
class UrlReport:
    findings: tuple[UrlFinding, ...]
    hidden_text_removals: int = 0
    summary: str = ""
    reputation_failures: int = 0

    def to_dict(self) -> dict:
        return {
            "findings": [f.to_dict() for f in self.findings],
            "hidden_text_removals": self.hidden_text_removals,
            "reputation_failures": self.reputation_failures,
            "summary": self.summary,
        }


def _mentioned_brands(email_text: str, brands: Mapping[str, str]) -> list[tuple[str, str]]:
    hits = []
    for brand, domain in brands.items():
        match = re.search(rf"(?<!\w){re.escape(brand)}(?!\w)", email_text, re.I)
        if match:
            hits.append((match.start(), brand, domain))
    return [(brand, domain) for _, brand, domain in sorted(hits)]


def _summarize(findings: Iterable[UrlFinding], hidden: int, budget: int) -> str:
    lines = []
    if hidden:
        lines.append(f"Hidden zero-font-size elements removed: {hidden}")
    for f in findings:
        flags = [f"reputation={f.reputation.value}"]
        if f.is_shortened:
            flags.append("shortened URL")
        if f.brand_mismatch:
            flags.append(f"mentions {f.brand_mismatch[0]} but domain is not {f.brand_mismatch[1]}")
        lines.append(f"- {f.url} (domain {f.registrable_domain}): " + "; ".join(flags))
    if not lines:
        lines.append("No URLs found.")
    text = "\n".join(lines)
    if len(text) > budget:
        mark = "\n[truncated]"
        text = text[: max(budget - len(mark), 0)] + mark
    return text


def analyze_urls(
    email_text: str,
    urls: Iterable[str],
    reputation: Optional[ReputationClient] = None,
    brand_table: Optional[Mapping[str, str]] = None,
    shorteners: Optional[Iterable[str]] = None,
    hidden_text_removals: int = 0,
    summary_budget: int = 1500,
) -> UrlReport:
    """Build the per-URL security report.

    A URL is flagged as a brand mismatch when the email mentions a brand
    (whole word, any case), no URL in the email sits on that brand's
    official domain, and this URL's domain differs from it.
    """
    urls = list(dict.fromkeys(urls))
    brands = load_brands() if brand_table is None else dict(brand_table)
    short = load_shorteners() if shorteners is None else frozenset(s.lower() for s in shorteners)
    domains = [registrable_domain(u) for u in urls]
    present = set(domains)
    unmatched = [(b, d) for b, d in _mentioned_brands(email_text, brands) if d not in present]

    findings = []
    failures = 0
    for url, domain in zip(urls, domains):
        mismatch = next(((b, d) for b, d in unmatched if domain != d), None)
        rep, failed = lookup_reputation(url, reputation)
        failures += failed
        findings.append(
            UrlFinding(
                url=url,
                registrable_domain=domain,
                is_shortened=domain in short or url_host(url) in short,
                brand_mismatch=mismatch,
                reputation=rep,
            )
        )
    return UrlReport(
        findings=tuple(findings),
        hidden_text_removals=hidden_text_removals,
        summary=_summarize(findings, hidden_text_removals, summary_budget),
        reputation_failures=failures,
    )
