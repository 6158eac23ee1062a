import random
from html.parser import HTMLParser

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from phishtriage.html_reduce import URL_TOKEN_LIMIT, is_zero_font, reduce_html, truncate_url


class _TagAudit(HTMLParser):
    """Independent check of reducer output: which elements and attributes survive."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.bad: list[str] = []

    def handle_starttag(self, tag, attrs):
        allowed = {"a": {"href"}, "img": {"src"}}.get(tag)
        if allowed is None:
            self.bad.append(tag)
        elif {k for k, _ in attrs} - allowed:
            self.bad.append(f"{tag}[{','.join(k for k, _ in attrs)}]")

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)

    def handle_endtag(self, tag):
        if tag not in ("a",):
            self.bad.append("/" + tag)

    def handle_comment(self, data):
        self.bad.append("comment")

    def handle_decl(self, decl):
        self.bad.append("decl")

    def handle_pi(self, data):
        self.bad.append("pi")

    def unknown_decl(self, data):
        self.bad.append("decl")


def audit(text: str) -> list[str]:
    p = _TagAudit()
    p.feed(text)
    p.close()
    return p.bad


def test_simple_text():
    assert reduce_html("<html><body><p>Hello <b>world</b></p></body></html>").text == "Hello world"


def test_zero_font_removed():
    out = reduce_html('<div>Visible<span style="font-size:0px">hidden <a href="http://x">x</a></span></div>')
    assert out.text == "Visible"
    assert out.hidden_removed == 1
    assert out.links == ()


def test_figure_style_anchor_kept():
    out = reduce_html(
        '<td style="color:red"><a href="http://thema214.com/track/o49" class="btn" '
        'onclick="go()">Report the user</a><img src="http://thema214.com/p.gif" width="1"></td>'
    )
    assert out.text == '<a href="http://thema214.com/track/o49">Report the user</a><img src="http://thema214.com/p.gif">'
    assert out.links == (("http://thema214.com/track/o49", "Report the user"),)
    assert out.images == ("http://thema214.com/p.gif",)


def test_scripts_styles_and_entities():
    out = reduce_html("<style>p{}</style><script>alert(1)</script><p>Tom &amp; Jerry &lt;3 &copy;</p>")
    assert out.text == "Tom & Jerry <3 ©"


def test_nested_anchors_flatten_to_outer():
    out = reduce_html('<a href="http://outer/">a <a href="http://inner/">b</a> c</a>')
    assert out.text.count("<a ") == 1
    assert out.links[0][0] == "http://outer/"


def test_anchor_without_href_is_text():
    assert reduce_html('<a name="top">Top</a>').text == "Top"


def test_href_is_truncated():
    long = "http://h.example/" + "/".join(f"t{i}" for i in range(1, 16)) + "?q=1#f"
    out = reduce_html(f'<a href="{long}">x</a>')
    assert out.links[0][0] == "http://h.example/" + "/".join(f"t{i}" for i in range(1, 11))


def test_zero_font_variants():
    for style in ("font-size:0", "FONT-SIZE: 0px", "color:red; font-size: 0.0em !important", "font-size:.0pt;"):
        assert is_zero_font(style), style
    for style in ("font-size:10px", "font-size:0.5em", "line-height:0", None, ""):
        assert not is_zero_font(style), style


def test_idempotent_on_samples(mail_fixture):
    for markup in [
        "<p>a &amp;amp; b</p>",
        '<a href="http://x/?a=1&b=2">q&amp;a</a>',
        "x < y and 1<2 <br> &notanentity;",
        mail_fixture("facebook_spoof.eml").decode("utf-8", "replace"),
    ]:
        once = reduce_html(markup).text
        assert reduce_html(once).text == once


# ---------------------------------------------------------------------------
# truncate_url properties

segment = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-_.%", max_size=6)


@st.composite
def urls(draw):
    scheme = draw(st.sampled_from(["http", "https", "ftp", "hxxp"]))
    host = draw(st.sampled_from(["bit.ly", "thema214.com", "mail.example.co.uk", "10.0.0.1", "xn--80ak6aa92e.com"]))
    port = draw(st.sampled_from(["", ":8080"]))
    segs = draw(st.lists(segment, max_size=25))
    path = "".join("/" + s for s in segs)
    query = draw(st.sampled_from(["", "?a=1&b=2", "?x"]))
    frag = draw(st.sampled_from(["", "#top", "#a/b"]))
    return f"{scheme}://{host}{port}{path}{query}{frag}"


def _tokens(url: str) -> int:
    rest = url.split("://", 1)[1]
    head_end = min([i for i in (rest.find("/"), rest.find("?"), rest.find("#")) if i >= 0] or [len(rest)])
    rest = rest[head_end:]
    frag = "#" in rest
    rest = rest.split("#", 1)[0]
    query = "?" in rest
    path = rest.split("?", 1)[0]
    return (len(path.split("/")) - 1 if path else 0) + query + frag


@settings(max_examples=400, deadline=None)
@given(urls(), st.integers(min_value=0, max_value=15))
def test_truncate_url_properties(url, limit):
    out = truncate_url(url, limit)
    assert url.startswith(out)
    assert _tokens(out) <= max(limit, 0)
    assert truncate_url(out, limit) == out
    if _tokens(url) <= limit:
        assert out == url


def test_truncate_default_limit_and_non_urls():
    assert URL_TOKEN_LIMIT == 10
    assert truncate_url("mailto:someone@example.org") == "mailto:someone@example.org"
    assert truncate_url("not a url") == "not a url"


# ---------------------------------------------------------------------------
# allowlist fuzz

_TAGS = ["a", "img", "div", "span", "p", "b", "script", "style", "table", "td", "tr", "font",
         "iframe", "form", "input", "svg", "title", "br", "noscript", "template", "A", "IMG"]
_ATTRS = ['href="http://x.example/a/b"', "src=http://i.example/p.png", 'style="font-size:0"',
          'onclick="evil()"', 'class="c"', "href", 'style="color:red"', "data-x='1'", 'src=""']
_TEXT = ["hello", "&amp;", "&lt;script&gt;", "<", ">", "&", "\"", "'", " ", "\n", "&#60;b&#62;",
         "<!--c-->", "<!DOCTYPE html>", "<?pi?>", "<![CDATA[x]]>", "</", "<a", "=", "&nbsp;"]


def _soup(rng: random.Random) -> str:
    out = []
    for _ in range(rng.randrange(1, 25)):
        roll = rng.random()
        tag = rng.choice(_TAGS)
        if roll < 0.35:
            attrs = " ".join(rng.sample(_ATTRS, rng.randrange(0, 3)))
            close = "/" if rng.random() < 0.1 else ""
            out.append(f"<{tag} {attrs}{close}>" if attrs else f"<{tag}{close}>")
        elif roll < 0.6:
            out.append(f"</{tag}>")
        elif roll < 0.95:
            out.append(rng.choice(_TEXT))
        else:
            out.append("".join(chr(rng.randrange(32, 0x250)) for _ in range(rng.randrange(1, 6))))
    return "".join(out)


def test_allowlist_invariant_seeded_fuzz():
    rng = random.Random(7)
    cases = 10_000
    for _ in range(cases):
        markup = _soup(rng)
        out = reduce_html(markup)
        bad = audit(out.text)
        assert not bad, (markup, out.text, bad)
        assert reduce_html(out.text).text == out.text, markup


tag_soup = st.lists(
    st.one_of(
        st.builds(lambda t, a: f"<{t} {a}>", st.sampled_from(_TAGS), st.sampled_from(_ATTRS)),
        st.builds(lambda t: f"</{t}>", st.sampled_from(_TAGS)),
        st.sampled_from(_TEXT),
        st.text(max_size=8),
    ),
    max_size=30,
).map("".join)


@settings(max_examples=500, deadline=None, suppress_health_check=list(HealthCheck))
@given(tag_soup)
def test_allowlist_invariant_property(markup):
    assert not audit(reduce_html(markup).text)
