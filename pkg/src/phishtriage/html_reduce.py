"""Reduce HTML email bodies to analysis text.

Only anchors (with ``href``) and images (with ``src``) survive as markup;
every other element is flattened to its visible text.  Text styled with a
zero font size is dropped together with any element inside it.
"""
from __future__ import annotations

import html
import re
from dataclasses import dataclass
from html.parser import HTMLParser
from typing import Optional

__all__ = ["ReducedBody", "reduce_html", "truncate_url", "is_zero_font", "URL_TOKEN_LIMIT"]

URL_TOKEN_LIMIT = 10


@dataclass(frozen=True)
class ReducedBody:
    text: str
    links: tuple[tuple[str, str], ...] = ()  # (href, anchor text)
    images: tuple[str, ...] = ()
    hidden_removed: int = 0

    @classmethod
    def from_text(cls, text: str) -> "ReducedBody":
        """Wrap a plain-text body (nothing to reduce)."""
        return cls(text=text)


# ---------------------------------------------------------------------------
# URL truncation

_URL_HEAD = re.compile(r"^([A-Za-z][A-Za-z0-9+.\-]*://[^/?#]*)(.*)$", re.S)


def truncate_url(url: str, limit: int = URL_TOKEN_LIMIT) -> str:
    """Keep at most ``limit`` tokens after the authority.

    Path segments (split on ``/``) are tokens; a query string and a fragment
    count as one trailing token each and are the first to go.  The result is
    always a prefix of ``url``.
    """
    match = _URL_HEAD.match(url)
    if match is None:
        return url
    head, rest = match.groups()
    frag_at = rest.find("#")
    fragment = rest[frag_at:] if frag_at >= 0 else ""
    before_frag = rest[:frag_at] if frag_at >= 0 else rest
    query_at = before_frag.find("?")
    query = before_frag[query_at:] if query_at >= 0 else ""
    path = before_frag[:query_at] if query_at >= 0 else before_frag

    segments = path.split("/")[1:] if path else []
    total = len(segments) + bool(query) + bool(fragment)
    if total <= limit:
        return url
    if len(segments) + bool(query) <= limit:
        return head + path + query
    if len(segments) <= limit:
        return head + path
    if limit <= 0:
        return head
    return head + "/" + "/".join(segments[:limit])


# ---------------------------------------------------------------------------
# hidden text

_ZERO_FONT = re.compile(
    r"(?:^|;)\s*font-size\s*:\s*(?:0+(?:\.0*)?|\.0+)\s*(?:[a-z%]+)?\s*(?:!\s*important\s*)?(?:;|$)",
    re.I,
)


def is_zero_font(style: Optional[str]) -> bool:
    return bool(style) and _ZERO_FONT.search(style) is not None


# ---------------------------------------------------------------------------
# reducer

_VOID = frozenset(
    "area base br col embed hr img input link meta param source track wbr basefont frame keygen".split()
)
_DROP_CONTENT = frozenset(("script", "style", "title", "template", "noscript"))
_BLOCK = frozenset(
    """address article aside blockquote br dd div dl dt fieldset figcaption figure footer
    form h1 h2 h3 h4 h5 h6 header hr li main nav ol p pre section table tbody td tfoot th
    thead tr ul center body html""".split()
)
_WS = re.compile(r"\s+")
_TAG_OPEN = re.compile(r"<(?=[A-Za-z/!?])")
_AMP = re.compile(r"&")


def _escape_amps(text: str) -> str:
    """Escape only the ampersands that a parser would read as a character reference."""
    if "&" not in text:
        return text
    out = []
    positions = [m.start() for m in _AMP.finditer(text)] + [len(text)]
    out.append(text[: positions[0]])
    for start, end in zip(positions, positions[1:]):
        chunk = text[start:end]
        out.append("&amp;" + chunk[1:] if html.unescape(chunk) != chunk else chunk)
    return "".join(out)


def _escape_text(text: str) -> str:
    return _TAG_OPEN.sub("&lt;", _escape_amps(text))


def _escape_attr(value: str) -> str:
    return _escape_amps(value).replace('"', "&quot;")


class _Reducer(HTMLParser):
    def __init__(self, limit: int):
        super().__init__(convert_charrefs=True)
        self.limit = limit
        self.stack: list[tuple[str, bool, bool]] = []  # (tag, hidden, rendered)
        self.segments: list[tuple[str, str]] = []  # ("text"|"markup", value)
        self.links: list[tuple[str, str]] = []
        self.images: list[str] = []
        self.hidden_removed = 0
        self.anchor_depth = 0
        self.anchor_href: Optional[str] = None
        self.anchor_text: list[str] = []
        self.skip_depth = 0

    # state helpers
    def _hidden(self) -> bool:
        return bool(self.stack) and self.stack[-1][1]

    def _emit_text(self, text: str) -> None:
        self.segments.append(("text", text))
        if self.anchor_depth:
            self.anchor_text.append(text)

    def _close_anchor(self) -> None:
        if self.anchor_href is not None:
            self.segments.append(("markup", "</a>"))
            label = _WS.sub(" ", "".join(self.anchor_text)).strip()
            self.links.append((self.anchor_href, label))
        self.anchor_depth = 0
        self.anchor_href = None
        self.anchor_text = []

    # parser callbacks
    def handle_starttag(self, tag, attrs):
        attrs = dict((k.lower(), v) for k, v in attrs if k)
        parent_hidden = self._hidden()
        hidden = parent_hidden or is_zero_font(attrs.get("style"))
        if hidden and not parent_hidden:
            self.hidden_removed += 1
        live = not hidden and not self.skip_depth
        if tag not in _VOID:
            self.stack.append((tag, hidden, live))
            if tag in _DROP_CONTENT:
                self.skip_depth += 1
        if not live:
            return
        if tag == "a":
            if self.anchor_depth:
                self.anchor_depth += 1
                return
            self.anchor_depth = 1
            href = (attrs.get("href") or "").strip()
            if href:
                self.anchor_href = truncate_url(href, self.limit)
                self.segments.append(("markup", f'<a href="{_escape_attr(self.anchor_href)}">'))
        elif tag == "img":
            src = (attrs.get("src") or "").strip()
            if src:
                src = truncate_url(src, self.limit)
                self.images.append(src)
                self.segments.append(("markup", f'<img src="{_escape_attr(src)}">'))
        elif tag in _BLOCK:
            self._emit_text(" ")

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag not in _VOID:
            self.handle_endtag(tag)

    def handle_endtag(self, tag):
        for depth in range(len(self.stack) - 1, -1, -1):
            if self.stack[depth][0] == tag:
                break
        else:
            return
        popped = self.stack[depth:]
        del self.stack[depth:]
        for name, _, _ in popped:
            if name in _DROP_CONTENT:
                self.skip_depth -= 1
        if not popped[0][2]:
            return
        anchors_closed = sum(1 for name, _, live in popped if name == "a" and live)
        if anchors_closed and self.anchor_depth:
            self.anchor_depth -= anchors_closed
            if self.anchor_depth <= 0:
                self._close_anchor()
        if tag in _BLOCK:
            self._emit_text(" ")

    def handle_data(self, data):
        if self.skip_depth or self._hidden():
            return
        self._emit_text(data)

    def handle_comment(self, data):
        pass

    def unknown_decl(self, data):
        pass

    def handle_decl(self, decl):
        pass

    def handle_pi(self, data):
        pass

    def finish(self) -> None:
        self.close()
        if self.anchor_depth:
            self._close_anchor()

    def render(self) -> str:
        merged: list[tuple[str, str]] = []
        for kind, value in self.segments:
            if kind == "text" and merged and merged[-1][0] == "text":
                merged[-1] = ("text", merged[-1][1] + value)
            else:
                merged.append((kind, value))
        out = []
        for index, (kind, value) in enumerate(merged):
            if kind == "markup":
                out.append(value)
                continue
            value = _WS.sub(" ", value)
            if index == 0:
                value = value.lstrip()
            if index == len(merged) - 1:
                value = value.rstrip()
            out.append(_escape_text(value))
        return "".join(out)


def _fallback(markup: str) -> ReducedBody:
    text = re.sub(r"<[^>]*>?", " ", markup)
    text = _WS.sub(" ", text).strip()
    return ReducedBody(text=_escape_text(text))


def reduce_html(markup: str, url_token_limit: int = URL_TOKEN_LIMIT) -> ReducedBody:
    """Strip an HTML body down to text plus anchors and images.

    Attributes other than ``href``/``src`` are dropped, entities are decoded,
    script/style content disappears, and zero-font-size elements are removed
    along with everything inside them (``hidden_removed`` counts them).
    Nested anchors collapse into the outermost one.
    """
    parser = _Reducer(url_token_limit)
    try:
        parser.feed(markup)
        parser.finish()
    except Exception:
        return _fallback(markup)
    return ReducedBody(
        text=parser.render(),
        links=tuple(parser.links),
        images=tuple(parser.images),
        hidden_removed=parser.hidden_removed,
    )
