import json

import pytest

from phishtriage.ingest import Label, UniformRecord
from phishtriage.llm import (
    ClassificationOutcome,
    ErrorInfo,
    ModelConfig,
    RateLimiter,
    ResponseCache,
    build_payload,
    classify_batch,
    classify_email,
    fit_to_budget,
    read_outcomes,
    write_outcomes,
)
from phishtriage.prompt import URL_SECTION_HEADER, build_request

from conftest import LEGIT_VERDICT, PHISH_VERDICT, fast_config


def record(i: int) -> UniformRecord:
    return UniformRecord(id=f"r{i}", email_text=f"SUBJECT: s{i}, FROM: f, EMAIL: body {i}", label=Label.LEGIT)


class VirtualClock:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds


def test_success_and_payload_shape(mock):
    req = build_request(record(1))
    out = classify_email(req, fast_config(mock.base_url), record_id="r1")
    assert out.verdict is not None and not out.verdict.is_phishing
    assert out.attempts == 1 and out.error is None
    sent = mock.calls[0].body
    assert sent["temperature"] == 0
    assert sent["response_format"]["json_schema"]["strict"] is True
    assert [m["role"] for m in sent["messages"]] == ["system", "user"]


def test_tool_mode_roundtrip(mock):
    mock.set_default({"status": 200, "verdict": PHISH_VERDICT})
    out = classify_email(build_request(record(2)), fast_config(mock.base_url, output_mode="tool"))
    assert out.verdict.is_phishing
    assert mock.calls[0].body["tool_choice"]["function"]["name"] == "phishing_verdict"


def test_prompt_mode_adds_schema_instruction():
    payload = build_payload(build_request(record(3)), ModelConfig("m", output_mode="prompt"))
    assert [m["role"] for m in payload["messages"]] == ["system", "system", "user"]
    assert "response_format" not in payload and "tools" not in payload


def test_429_twice_then_success(mock):
    req = build_request(record(4))
    mock.route(req.user_content, {"status": 429, "headers": {"Retry-After": "0"}}, {"status": 429}, {"status": 200, "verdict": PHISH_VERDICT})
    slept = []
    out = classify_email(req, fast_config(mock.base_url), sleep=slept.append)
    assert out.verdict.is_phishing
    assert out.attempts == 3
    assert len(slept) == 2 and slept[1] >= slept[0]


def test_retries_exhausted_becomes_error(mock):
    req = build_request(record(5))
    mock.route(req.user_content, {"status": 503})
    out = classify_email(req, fast_config(mock.base_url, max_retries=2), sleep=lambda s: None)
    assert out.verdict is None
    assert out.error.kind == "TransportError"
    assert out.attempts == 3


@pytest.mark.parametrize(
    "response,kind",
    [
        ({"status": 401}, "AuthError"),
        ({"status": 400}, "TransportError"),
        ({"status": 200, "content": "I think it is phishing"}, "MalformedPayload"),
        ({"status": 200, "verdict": dict(PHISH_VERDICT, Risk="Severe")}, "UnknownRisk"),
        ({"status": 200, "body": {"choices": []}}, "MalformedPayload"),
    ],
)
def test_permanent_failures_not_retried(mock, response, kind):
    req = build_request(record(6))
    mock.route(req.user_content, response)
    out = classify_email(req, fast_config(mock.base_url), sleep=lambda s: None)
    assert out.error.kind == kind
    assert out.attempts == 1


def test_timeout_maps_to_timeout(mock):
    req = build_request(record(7))
    mock.route(req.user_content, {"status": 200, "verdict": LEGIT_VERDICT, "delay": 0.5})
    out = classify_email(req, fast_config(mock.base_url, timeout=0.05, max_retries=0))
    assert out.error.kind == "Timeout"


def test_endpoint_down():
    cfg = fast_config("http://127.0.0.1:9/v1", max_retries=1, timeout=1)
    out = classify_email(build_request(record(8)), cfg, sleep=lambda s: None)
    assert out.error.kind == "TransportError" and out.attempts == 2


def test_batch_order_bound_and_cache(mock, tmp_path):
    records = [record(i) for i in range(30)]
    for r in records[::3]:
        mock.route(build_request(r).user_content, {"status": 200, "verdict": PHISH_VERDICT, "delay": 0.02})
    mock.set_default({"status": 200, "verdict": LEGIT_VERDICT, "delay": 0.02})
    cache = ResponseCache(tmp_path / "cache")
    cfg = fast_config(mock.base_url)
    first = classify_batch(records, cfg, parallelism=3, cache=cache)
    assert [o.record_id for o in first] == [r.id for r in records]
    assert [o.verdict.is_phishing for o in first] == [i % 3 == 0 for i in range(30)]
    assert mock.max_in_flight <= 3
    assert mock.call_count == 30
    assert len(cache) == 30

    mock.reset_counters()
    again = classify_batch(records, cfg, parallelism=3, cache=ResponseCache(tmp_path / "cache"))
    assert mock.call_count == 0
    assert all(o.cached and o.attempts == 0 for o in again)
    assert [o.verdict for o in again] == [o.verdict for o in first]


def test_failed_responses_are_not_cached(mock):
    req = build_request(record(9))
    mock.route(req.user_content, {"status": 200, "content": "garbage"}, {"status": 200, "verdict": LEGIT_VERDICT})
    cache = ResponseCache()
    cfg = fast_config(mock.base_url)
    assert classify_email(req, cfg, cache=cache).error is not None
    assert len(cache) == 0
    assert classify_email(req, cfg, cache=cache).verdict is not None
    assert len(cache) == 1


def test_empty_record_is_an_outcome_not_a_crash(mock):
    out = classify_batch([UniformRecord(id="e", email_text="")], fast_config(mock.base_url))
    assert out[0].error.kind == "EmptyEmail"
    assert mock.call_count == 0


def test_rate_limiter_virtual_clock():
    clock = VirtualClock()
    limiter = RateLimiter(per_minute=30, clock=clock, sleep=clock.sleep)
    starts = [limiter.acquire() for _ in range(5)]
    assert starts == [0.0, 2.0, 4.0, 6.0, 8.0]
    clock.now = 100.0
    assert limiter.acquire() == 100.0


def test_fit_to_budget_keeps_url_section():
    content = "SUBJECT: a, FROM: b, EMAIL: " + "x" * 500 + f"\n\n{URL_SECTION_HEADER}\n- summary"
    out = fit_to_budget(content, 200)
    assert len(out) <= 200
    assert out.endswith(f"{URL_SECTION_HEADER}\n- summary")
    assert "[truncated]" in out
    assert fit_to_budget("short", 200) == "short"


def test_outcomes_file_roundtrip(tmp_path, mock):
    outs = classify_batch([record(1), record(2)], fast_config(mock.base_url))
    outs.append(ClassificationOutcome("r3", error=ErrorInfo("Timeout", "slow")))
    path = tmp_path / "o.jsonl"
    write_outcomes(path, outs, labels={"r1": Label.LEGIT, "r2": Label.PHISHING, "r3": Label.LEGIT}, model="m")
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert [l["label"] for l in lines] == ["Legit", "Phishing", "Legit"]
    back = read_outcomes(path)
    assert [label for label, _ in back] == ["Legit", "Phishing", "Legit"]
    assert back[2][1].error.kind == "Timeout"
    assert back[0][1].verdict == outs[0].verdict


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig("m", output_mode="xml")
    with pytest.raises(ValueError):
        ModelConfig("")
    assert ModelConfig("m", base_url="http://h/v1/").endpoint == "http://h/v1/chat/completions"
