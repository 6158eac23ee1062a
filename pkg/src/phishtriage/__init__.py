"""Phishing email triage.

Parse raw mail and tabular datasets, reduce HTML bodies to analysis text,
classify with an LLM under a strict verdict schema, score the results, check
URLs, and run the whole thing as a mailbox gateway.
"""
from .cleaning import (
    Corpus,
    CorpusStats,
    CorpusSummary,
    clean_text,
    corpus_stats,
    filter_corpus,
    read_corpus,
    write_corpus,
)
from . import errors
from .errors import PhishTriageError
from .evaluation import (
    ConfusionCounts,
    Metrics,
    ModelResult,
    ReliabilityResult,
    compute_metrics,
    confusion_counts,
    evaluate,
    reliability_score,
    render_report,
)
from .gateway import (
    Disposition,
    Gateway,
    GatewayConfig,
    MaildirAdapter,
    Outcome,
    Whitelist,
    filter_trusted,
    generate_user_report,
    process_incoming,
)
from .html_reduce import ReducedBody, reduce_html, truncate_url
from .ingest import (
    ColumnMapping,
    EmailRecord,
    Label,
    MimePart,
    RawEmail,
    UniformRecord,
    decode_part,
    load_tabular_dataset,
    normalize_record,
    parse_eml,
    record_from_eml,
    select_body,
)
from .llm import (
    ClassificationOutcome,
    ModelConfig,
    RateLimiter,
    ResponseCache,
    classify_batch,
    classify_email,
    read_outcomes,
    write_outcomes,
)
from .pipeline import PreparedEmail, prepare_email, prepare_record
from .prompt import ClassificationRequest, Risk, Verdict, build_request, parse_verdict
from .urls import (
    HttpReputationClient,
    Reputation,
    StubReputation,
    UrlFinding,
    UrlReport,
    analyze_urls,
    extract_urls,
    lookup_reputation,
    registrable_domain,
)

__all__ = [
    "Corpus",
    "CorpusStats",
    "CorpusSummary",
    "clean_text",
    "corpus_stats",
    "filter_corpus",
    "read_corpus",
    "write_corpus",
    "errors",
    "PhishTriageError",
    "ConfusionCounts",
    "Metrics",
    "ModelResult",
    "ReliabilityResult",
    "compute_metrics",
    "confusion_counts",
    "evaluate",
    "reliability_score",
    "render_report",
    "Disposition",
    "Gateway",
    "GatewayConfig",
    "MaildirAdapter",
    "Outcome",
    "Whitelist",
    "filter_trusted",
    "generate_user_report",
    "process_incoming",
    "ReducedBody",
    "reduce_html",
    "truncate_url",
    "ColumnMapping",
    "EmailRecord",
    "Label",
    "MimePart",
    "RawEmail",
    "UniformRecord",
    "decode_part",
    "load_tabular_dataset",
    "normalize_record",
    "parse_eml",
    "record_from_eml",
    "select_body",
    "ClassificationOutcome",
    "ModelConfig",
    "RateLimiter",
    "ResponseCache",
    "classify_batch",
    "classify_email",
    "read_outcomes",
    "write_outcomes",
    "PreparedEmail",
    "prepare_email",
    "prepare_record",
    "ClassificationRequest",
    "Risk",
    "Verdict",
    "build_request",
    "parse_verdict",
    "HttpReputationClient",
    "Reputation",
    "StubReputation",
    "UrlFinding",
    "UrlReport",
    "analyze_urls",
    "extract_urls",
    "lookup_reputation",
    "registrable_domain",
]

__version__ = "0.1.0"
