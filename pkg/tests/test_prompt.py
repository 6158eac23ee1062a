import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phishtriage.errors import EmptyEmail, MalformedPayload, SchemaViolation, UnknownRisk
from phishtriage.ingest import UniformRecord
from phishtriage.prompt import (
    URL_SECTION_HEADER,
    VERDICT_FIELDS,
    VERDICT_SCHEMA,
    Risk,
    Verdict,
    build_request,
    default_persona,
    parse_verdict,
)

from conftest import PHISH_VERDICT


def test_persona_default_text():
    persona = default_persona()
    assert persona.startswith("You are a cybersecurity expert specialized in detecting and analyzing phishing emails.")
    assert not persona.endswith("\n")


def test_request_passes_email_through():
    rec = UniformRecord(id="r", email_text="SUBJECT: , FROM: , EMAIL: x")
    req = build_request(rec)
    assert req.user_content == "SUBJECT: , FROM: , EMAIL: x"
    assert req.system_prompt == default_persona()
    assert req.output_schema["required"] == list(VERDICT_FIELDS)
    assert req.output_schema["properties"]["Risk"]["enum"] == ["High", "Medium", "Low"]


def test_request_with_url_summary_and_custom_persona():
    rec = UniformRecord(id="r", email_text="SUBJECT: a, FROM: b, EMAIL: c")
    req = build_request(rec, persona="be brief", url_summary="- http://x (domain x): shortened URL")
    assert req.system_prompt == "be brief"
    assert req.user_content == f"SUBJECT: a, FROM: b, EMAIL: c\n\n{URL_SECTION_HEADER}\n- http://x (domain x): shortened URL"


def test_empty_email_rejected():
    with pytest.raises(EmptyEmail):
        build_request(UniformRecord(id="r", email_text=""))


def test_request_hash_is_deterministic():
    rec = UniformRecord(id="r", email_text="SUBJECT: a, FROM: b, EMAIL: c")
    assert build_request(rec).content_hash() == build_request(rec).content_hash()
    other = UniformRecord(id="r", email_text="SUBJECT: a, FROM: b, EMAIL: d")
    assert build_request(rec).content_hash() != build_request(other).content_hash()


def test_parse_valid_and_fenced():
    v = parse_verdict(json.dumps(PHISH_VERDICT))
    assert v.is_phishing and v.risk is Risk.HIGH
    assert v.actions[0] == "Do not interact with any links or buttons in the email"
    fenced = "```json\n" + json.dumps(PHISH_VERDICT) + "\n```"
    assert parse_verdict(fenced) == v


def test_risk_case_insensitive():
    assert parse_verdict(json.dumps(dict(PHISH_VERDICT, Risk="medium"))).risk is Risk.MEDIUM


@pytest.mark.parametrize(
    "payload,error",
    [
        ("not json", MalformedPayload),
        ("[1, 2]", SchemaViolation),
        (json.dumps({k: v for k, v in PHISH_VERDICT.items() if k != "Reason"}), SchemaViolation),
        (json.dumps(dict(PHISH_VERDICT, Is_Phishing="yes")), SchemaViolation),
        (json.dumps(dict(PHISH_VERDICT, Actions="one")), SchemaViolation),
        (json.dumps(dict(PHISH_VERDICT, Social_Engineering_Elements=[1])), SchemaViolation),
        (json.dumps(dict(PHISH_VERDICT, Risk="Critical")), UnknownRisk),
        (json.dumps(dict(PHISH_VERDICT, Risk=3)), SchemaViolation),
    ],
)
def test_parse_errors(payload, error):
    with pytest.raises(error):
        parse_verdict(payload)


verdicts = st.builds(
    Verdict,
    is_phishing=st.booleans(),
    risk=st.sampled_from(list(Risk)),
    social_engineering_elements=st.lists(st.text(max_size=20), max_size=4),
    actions=st.lists(st.text(max_size=20), max_size=4),
    reason=st.text(max_size=40),
)


@settings(max_examples=200)
@given(verdicts)
def test_verdict_roundtrip(v):
    assert parse_verdict(v.to_json()) == v
    assert list(json.loads(v.to_json())) == list(VERDICT_FIELDS)


def test_schema_is_closed():
    assert VERDICT_SCHEMA["additionalProperties"] is False
    assert set(VERDICT_SCHEMA["properties"]) == set(VERDICT_FIELDS)
