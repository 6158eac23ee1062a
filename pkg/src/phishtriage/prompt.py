"""Classification requests and verdict parsing.

The wire format of a verdict is a JSON object with exactly these keys::

    Is_Phishing                  boolean
    Risk                         "High" | "Medium" | "Low"
    Social_Engineering_Elements  list of strings
    Actions                      list of strings
    Reason                       string
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Any, Mapping, Optional

from .errors import EmptyEmail, MalformedPayload, SchemaViolation, UnknownRisk
from .ingest import UniformRecord

__all__ = [
    "Risk",
    "Verdict",
    "ClassificationRequest",
    "VERDICT_FIELDS",
    "VERDICT_SCHEMA",
    "default_persona",
    "build_request",
    "parse_verdict",
    "schema_instruction",
    "URL_SECTION_HEADER",
]

VERDICT_FIELDS = ("Is_Phishing", "Risk", "Social_Engineering_Elements", "Actions", "Reason")

VERDICT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "Is_Phishing": {
            "type": "boolean",
            "description": "An email is phishing or not",
        },
        "Risk": {
            "type": "string",
            "enum": ["High", "Medium", "Low"],
            "description": "Categories as High, Medium, and Low",
        },
        "Social_Engineering_Elements": {
            "type": "array",
            "items": {"type": "string"},
            "description": "A collection of social engineering elements from the email",
        },
        "Actions": {
            "type": "array",
            "items": {"type": "string"},
            "description": "A collection of recommended action",
        },
        "Reason": {
            "type": "string",
            "description": "A brief reason why this email is phishing",
        },
    },
    "required": list(VERDICT_FIELDS),
    "additionalProperties": False,
}

URL_SECTION_HEADER = "URL ANALYSIS:"


class Risk(str, Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def normalize(cls, value: str) -> "Risk":
        key = value.strip().casefold()
        for tier in cls:
            if tier.value.casefold() == key:
                return tier
        raise UnknownRisk(f"risk {value!r} is not one of High/Medium/Low")


@dataclass(frozen=True)
class Verdict:
    is_phishing: bool
    risk: Risk
    social_engineering_elements: tuple[str, ...] = ()
    actions: tuple[str, ...] = ()
    reason: str = ""

    def __post_init__(self):
        if not isinstance(self.risk, Risk):
            object.__setattr__(self, "risk", Risk.normalize(str(self.risk)))
        object.__setattr__(self, "social_engineering_elements", tuple(self.social_engineering_elements))
        object.__setattr__(self, "actions", tuple(self.actions))

    def to_wire(self) -> dict[str, Any]:
        return {
            "Is_Phishing": self.is_phishing,
            "Risk": self.risk.value,
            "Social_Engineering_Elements": list(self.social_engineering_elements),
            "Actions": list(self.actions),
            "Reason": self.reason,
        }

    def to_json(self) -> str:
        """Canonical serialization: schema key order, no extra whitespace."""
        return json.dumps(self.to_wire(), ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class ClassificationRequest:
    system_prompt: str
    user_content: str
    output_schema: Mapping[str, Any]

    def canonical_bytes(self) -> bytes:
        return json.dumps(
            {
                "system": self.system_prompt,
                "user": self.user_content,
                "schema": self.output_schema,
            },
            ensure_ascii=False,
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


def default_persona() -> str:
    return resources.files("phishtriage.data").joinpath("persona.txt").read_text("utf-8")


def build_request(
    rec: UniformRecord,
    persona: Optional[str] = None,
    url_summary: Optional[str] = None,
) -> ClassificationRequest:
    """Assemble the role prompt, the email text and the verdict schema.

    ``url_summary``, when given, is appended to the user content under a
    ``URL ANALYSIS:`` heading.
    """
    if not rec.email_text:
        raise EmptyEmail(f"record {rec.id} has no email text")
    content = rec.email_text
    if url_summary:
        content = f"{content}\n\n{URL_SECTION_HEADER}\n{url_summary}"
    return ClassificationRequest(
        system_prompt=default_persona() if persona is None else persona,
        user_content=content,
        output_schema=VERDICT_SCHEMA,
    )


def schema_instruction(schema: Mapping[str, Any] = VERDICT_SCHEMA) -> str:
    """Prompt text for endpoints without native structured output."""
    return (
        "Respond with a single JSON object and nothing else. "
        "It must validate against this JSON schema:\n"
        + json.dumps(schema, indent=2)
    )


_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.S)


def _strip_fences(text: str) -> str:
    match = _FENCE.match(text)
    return match.group(1) if match else text


def _string_list(obj: Mapping[str, Any], key: str) -> tuple[str, ...]:
    value = obj[key]
    if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
        raise SchemaViolation(f"{key} must be a list of strings")
    return tuple(value)


def parse_verdict(response_payload: str) -> Verdict:
    """Strictly parse a model response into a :class:`Verdict`.

    Raises ``MalformedPayload`` for non-JSON, ``SchemaViolation`` for a
    missing or mistyped field and ``UnknownRisk`` for a risk outside the
    three tiers (compared case-insensitively).  Code fences are stripped.
    """
    if not isinstance(response_payload, str):
        raise MalformedPayload("payload is not text")
    try:
        obj = json.loads(_strip_fences(response_payload))
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedPayload(f"payload is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaViolation("payload is not a JSON object")
    missing = [key for key in VERDICT_FIELDS if key not in obj]
    if missing:
        raise SchemaViolation(f"missing field(s): {', '.join(missing)}")
    if not isinstance(obj["Is_Phishing"], bool):
        raise SchemaViolation("Is_Phishing must be a boolean")
    if not isinstance(obj["Risk"], str):
        raise SchemaViolation("Risk must be a string")
    if not isinstance(obj["Reason"], str):
        raise SchemaViolation("Reason must be a string")
    return Verdict(
        is_phishing=obj["Is_Phishing"],
        risk=Risk.normalize(obj["Risk"]),
        social_engineering_elements=_string_list(obj, "Social_Engineering_Elements"),
        actions=_string_list(obj, "Actions"),
        reason=obj["Reason"],
    )
