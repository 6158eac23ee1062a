import json
from pathlib import Path

import pytest

from phishtriage.llm import ModelConfig
from phishtriage.mockserver import MockEndpoint

FIXTURES = Path(__file__).parent / "fixtures"
MAIL = FIXTURES / "mail"

PHISH_VERDICT = {
    "Is_Phishing": True,
    "Risk": "High",
    "Social_Engineering_Elements": [
        "Sender address 5a83h@92e4fsmb2e.com does not match the displayed name Facebook",
        "Urgent new-device login alert",
        "Report and confirm buttons lead to ssecnewsso.thema214.com",
    ],
    "Actions": [
        "Do not interact with any links or buttons in the email",
        "Verify account activity through a secure login on the official Facebook website",
        "Report the email to Facebook's support team",
    ],
    "Reason": "The message impersonates Facebook from an unrelated domain and links to a lookalike site.",
}

LEGIT_VERDICT = {
    "Is_Phishing": False,
    "Risk": "Low",
    "Social_Engineering_Elements": [],
    "Actions": [],
    "Reason": "Routine message from a known sender with no suspicious links.",
}


def fast_config(base_url: str, **overrides) -> ModelConfig:
    """Model config for the local mock: no real waiting."""
    settings = dict(
        name="mock-model",
        base_url=base_url,
        rate_limit=60_000,
        timeout=5,
        max_retries=3,
        backoff_base=0.001,
        backoff_max=0.01,
    )
    settings.update(overrides)
    return ModelConfig(**settings)


@pytest.fixture
def mock():
    with MockEndpoint({"default": {"status": 200, "verdict": LEGIT_VERDICT}}) as server:
        yield server


@pytest.fixture
def mail_fixture():
    def load(name: str) -> bytes:
        return (MAIL / name).read_bytes()

    return load


def write_planted(path, tp: int, fp: int, tn: int, fn: int, model: str = "planted") -> Path:
    """Outcomes file whose scored records form exactly the given confusion counts."""
    rows = (
        [("Phishing", PHISH_VERDICT)] * tp
        + [("Legit", PHISH_VERDICT)] * fp
        + [("Legit", LEGIT_VERDICT)] * tn
        + [("Phishing", LEGIT_VERDICT)] * fn
    )
    lines = [
        json.dumps({"id": f"r{i}", "verdict": verdict, "error": None, "latency": 0.0,
                    "attempts": 1, "cached": False, "label": label, "model": model})
        for i, (label, verdict) in enumerate(rows)
    ]
    path = Path(path)
    path.write_text("".join(line + "\n" for line in lines), "utf-8")
    return path
