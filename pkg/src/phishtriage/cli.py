"""Command-line driver.

    phishtriage [--config FILE] <verb> [options]

Verbs: ingest, clean, classify, eval, compare, url-scan, watch.

Settings come from a flat ``key = value`` config file, then the environment
(``PHISHTRIAGE_API_KEY``, ``PHISHTRIAGE_BASE_URL``), then flags; later
sources win.  Exit status is 0 on success, 1 on an operational failure and
2 on a usage error.  Operational failures also print one JSON line on
stderr.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import signal
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from . import errors
from ._io import atomic_write_text
from .cleaning import corpus_stats, filter_corpus, read_corpus, write_corpus
from .evaluation import evaluate, load_count_table, render_report
from .html_reduce import ReducedBody
from .gateway import Gateway, GatewayConfig, MaildirAdapter, Whitelist
from .ingest import ColumnMapping, load_tabular_dataset
from .llm import ModelConfig, ResponseCache, classify_batch, error_summary, read_outcomes, write_outcomes
from .pipeline import prepare_email, prepare_record
from .urls import HttpReputationClient, StubReputation, analyze_urls, extract_urls

__all__ = ["main", "parse_args", "execute", "Command", "UsageError", "CONFIG_KEYS"]

log = logging.getLogger("phishtriage")

ENV_API_KEY = "PHISHTRIAGE_API_KEY"
ENV_BASE_URL = "PHISHTRIAGE_BASE_URL"

# documented config keys and their parsers
CONFIG_KEYS = {
    "model": str,
    "base_url": str,
    "credential_env": str,
    "api_key": str,
    "temperature": float,
    "max_output_tokens": int,
    "rate_limit": float,
    "timeout": float,
    "max_retries": int,
    "output_mode": str,
    "parallelism": int,
    "cache_dir": str,
    "persona_file": str,
    "whitelist": str,
    "poll_interval": float,
    "fail_policy": str,
    "url_analysis": str,
    "reputation_url": str,
    "allowlist": str,
    "denylist": str,
    "maildir": str,
}


class UsageError(Exception):
    pass


@dataclass
class Command:
    verb: str
    options: argparse.Namespace
    config: dict[str, Any] = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phishtriage", description="Phishing triage with LLM classifiers.")
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="verb", metavar="verb", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="load .eml/CSV/JSON datasets into a normalized record file")
    p.add_argument("inputs", nargs="+", help=".eml files, directories of .eml, or CSV/JSON datasets")
    p.add_argument("--out", required=True, help="output .csv (Email,Class) or .jsonl")
    p.add_argument("--label", help="label for .eml inputs (Phishing/Legit or a synonym)")
    p.add_argument("--columns", help="column mapping, e.g. subject=Subject,body=Text,label=Class")
    p.add_argument("--format", choices=["csv", "json"], help="tabular format when the suffix is ambiguous")

    p = sub.add_parser("clean", help="drop empty, duplicate and out-of-window records; print stats")
    p.add_argument("corpus")
    p.add_argument("--out", help="write the filtered corpus here")
    p.add_argument("--min-len", type=int, default=500)
    p.add_argument("--max-len", type=int, default=2000)
    p.add_argument("--json", action="store_true", help="print full stats as JSON")

    p = sub.add_parser("classify", help="classify a corpus; write one outcome per line")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="outcomes .jsonl")
    p.add_argument("--model")
    p.add_argument("--base-url")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--rate-limit", type=float, help="requests per minute")
    p.add_argument("--max-retries", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--output-mode", choices=["json_schema", "tool", "prompt"])
    p.add_argument("--cache-dir")
    p.add_argument("--url-analysis", action="store_true", help="append a URL report to each prompt")

    p = sub.add_parser("eval", help="metrics and reliability for one outcomes file")
    p.add_argument("--predictions", required=True, help="outcomes .jsonl with labels")
    p.add_argument("--name", help="model name for the report row")
    p.add_argument("--out", help="report file; .csv, .json or .txt")

    p = sub.add_parser("compare", help="multi-model comparison table")
    p.add_argument("--predictions", nargs="*", default=[], metavar="NAME=PATH", help="outcome files per model")
    p.add_argument("--counts", help="CSV of model,tp,fp,tn,fn[,published metrics]")
    p.add_argument("--out", help="report file; .csv, .json or .txt")
    p.add_argument("--matrices", action="store_true", help="also print confusion matrices")

    p = sub.add_parser("url-scan", help="URL report for one .eml")
    p.add_argument("eml")
    p.add_argument("--allowlist")
    p.add_argument("--denylist")
    p.add_argument("--reputation-url", help="VirusTotal-compatible API root")

    p = sub.add_parser("watch", help="run the mailbox gateway")
    p.add_argument("--maildir")
    p.add_argument("--whitelist")
    p.add_argument("--model")
    p.add_argument("--base-url")
    p.add_argument("--poll-interval", type=float)
    p.add_argument("--fail-policy", choices=["open", "closed"])
    p.add_argument("--url-analysis", choices=["off", "report", "prompt"])
    group = p.add_mutually_exclusive_group()
    group.add_argument("--once", action="store_true", help="process the inbox once and exit")
    group.add_argument("--max-cycles", type=int)
    return parser


def read_config(path) -> dict[str, Any]:
    """Parse a flat ``key = value`` file (``#`` comments, no sections needed)."""
    try:
        text = Path(path).read_text("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise errors.UnreadableFile(f"cannot read config {path}: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[settings]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from None
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            key = key.replace("-", "_")
            if key not in CONFIG_KEYS:
                raise UsageError(f"config {path}: unknown key {key!r}")
            try:
                out[key] = CONFIG_KEYS[key](value)
            except ValueError:
                raise UsageError(f"config {path}: bad value for {key}: {value!r}") from None
    return out


def _merge(file_cfg: dict, ns: argparse.Namespace) -> dict[str, Any]:
    cfg = dict(file_cfg)
    if os.environ.get(ENV_BASE_URL):
        cfg["base_url"] = os.environ[ENV_BASE_URL]
    for key in CONFIG_KEYS:
        value = getattr(ns, key, None)
        if value is not None and key != "url_analysis":
            cfg[key] = value
    if ns.verb == "watch" and ns.url_analysis is not None:
        cfg["url_analysis"] = ns.url_analysis
    return cfg


def parse_args(argv: Optional[Sequence[str]] = None) -> Command:
    """Validate argv and merge settings.  Raises ``UsageError``; ``--help`` exits 0."""
    ns = _build_parser().parse_args(argv)
    file_cfg = read_config(ns.config) if ns.config else {}
    return Command(ns.verb, ns, _merge(file_cfg, ns))


# ---------------------------------------------------------------------------
# verbs


def _model_config(cfg: dict) -> ModelConfig:
    if not cfg.get("model"):
        raise UsageError("no model given (use --model or the 'model' config key)")
    kwargs = {k: cfg[k] for k in (
        "base_url", "credential_env", "temperature", "max_output_tokens", "rate_limit",
        "timeout", "max_retries", "output_mode",
    ) if k in cfg}
    try:
        model = ModelConfig(name=cfg["model"], **kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    # a key from the config file only fills in when the environment has none
    if cfg.get("api_key") and not os.environ.get(model.credential_env):
        os.environ[model.credential_env] = cfg["api_key"]
    return model


def _persona(cfg: dict) -> Optional[str]:
    path = cfg.get("persona_file")
    if not path:
        return None
    try:
        return Path(path).read_text("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise errors.UnreadableFile(f"cannot read persona {path}: {exc}") from exc


def _write_report(report, out: Optional[str]) -> None:
    if out:
        suffix = Path(out).suffix.lower()
        text = report.to_csv() if suffix == ".csv" else report.to_json() if suffix == ".json" else report.to_text()
        atomic_write_text(out, text)
    sys.stdout.write(report.to_text())


def _eml_paths(inputs: Sequence[str]):
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            yield from sorted(path.rglob("*.eml"))
        else:
            yield path


def cmd_ingest(cmd: Command) -> int:
    ns = cmd.options
    mapping = ColumnMapping.parse(ns.columns) if ns.columns else None
    records, failures = [], 0
    for path in _eml_paths(ns.inputs):
        suffix = path.suffix.lower()
        if suffix in (".csv", ".json") or ns.format:
            loaded = load_tabular_dataset(path, format=ns.format, column_mapping=mapping)
            for failure in loaded.failures:
                log.warning("%s row %s skipped: %s", path, failure.row, failure.reason)
            failures += len(loaded.failures)
            records.extend(prepare_record(rec).uniform for rec in loaded)
        else:
            try:
                raw = path.read_bytes()
            except OSError as exc:
                raise errors.UnreadableFile(f"cannot read {path}: {exc}") from exc
            try:
                records.append(prepare_email(raw, source=str(path), label=ns.label).uniform)
            except errors.EmptyInput:
                log.warning("%s is empty; skipped", path)
                failures += 1
    write_corpus(records, ns.out)
    print(f"records={len(records)} skipped={failures} out={ns.out}")
    return 0


def cmd_clean(cmd: Command) -> int:
    ns = cmd.options
    if ns.min_len < 0 or ns.max_len < ns.min_len:
        raise UsageError("need 0 <= --min-len <= --max-len")
    corpus = filter_corpus(_read_corpus(ns.corpus), ns.min_len, ns.max_len)
    if ns.out:
        write_corpus(corpus.records, ns.out)
    summary = corpus_stats(corpus)
    print(json.dumps(summary.as_dict()) if ns.json else summary.line())
    return 0


def _read_corpus(path):
    try:
        return read_corpus(path)
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise errors.UnreadableFile(f"cannot read corpus {path}: {exc}") from exc


def cmd_classify(cmd: Command) -> int:
    ns, cfg = cmd.options, cmd.config
    model = _model_config(cfg)
    parallelism = cfg.get("parallelism", 4)
    if parallelism < 1:
        raise UsageError("--parallelism must be >= 1")
    records = _read_corpus(ns.corpus)
    cache = ResponseCache(cfg["cache_dir"]) if cfg.get("cache_dir") else None
    summaries = None
    if ns.url_analysis:
        # bodies are already reduced, so markup anchors and bare URLs are both visible
        summaries = {
            r.id: analyze_urls(r.email_text, extract_urls(ReducedBody.from_text(r.body or r.email_text))).summary
            for r in records
        }
    outcomes = classify_batch(
        records, model, parallelism=parallelism, cache=cache,
        persona=_persona(cfg), url_summaries=summaries,
    )
    write_outcomes(ns.out, outcomes, labels={r.id: r.label for r in records}, model=model.name)
    failed = error_summary(outcomes)
    print(f"classified={len(outcomes) - sum(failed.values())} errors={sum(failed.values())} out={ns.out}")
    if failed:
        print(json.dumps({"errors": dict(failed)}), file=sys.stderr)
    if outcomes and sum(failed.values()) == len(outcomes):
        raise errors.ClientError(f"every request failed: {dict(failed)}")
    return 0


def cmd_eval(cmd: Command) -> int:
    ns = cmd.options
    pairs = read_outcomes(ns.predictions)
    name = ns.name or Path(ns.predictions).stem
    _write_report(render_report([evaluate(name, pairs)]), ns.out)
    return 0


def cmd_compare(cmd: Command) -> int:
    ns = cmd.options
    if not ns.predictions and not ns.counts:
        raise UsageError("compare needs --counts and/or --predictions")
    results = load_count_table(ns.counts) if ns.counts else []
    for item in ns.predictions:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        results.append(evaluate(name, read_outcomes(path)))
    report = render_report(results)
    _write_report(report, ns.out)
    if ns.matrices:
        sys.stdout.write("\n" + report.confusion_matrices())
    return 0


def _reputation(cfg: dict):
    if cfg.get("reputation_url"):
        return HttpReputationClient(cfg["reputation_url"])
    if cfg.get("allowlist") or cfg.get("denylist"):
        try:
            return StubReputation.from_files(cfg.get("allowlist"), cfg.get("denylist"))
        except OSError as exc:
            raise errors.UnreadableFile(str(exc)) from exc
    return None


def cmd_url_scan(cmd: Command) -> int:
    ns, cfg = cmd.options, cmd.config
    try:
        raw = Path(ns.eml).read_bytes()
    except OSError as exc:
        raise errors.UnreadableFile(f"cannot read {ns.eml}: {exc}") from exc
    prepared = prepare_email(raw, source=ns.eml)
    report = analyze_urls(
        prepared.uniform.email_text,
        extract_urls(prepared.reduced),
        reputation=_reputation(cfg),
        hidden_text_removals=prepared.reduced.hidden_removed,
    )
    print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    return 0


def cmd_watch(cmd: Command) -> int:
    ns, cfg = cmd.options, cmd.config
    if not cfg.get("maildir"):
        raise UsageError("no mailbox given (use --maildir or the 'maildir' config key)")
    whitelist = Whitelist.from_file(cfg["whitelist"]) if cfg.get("whitelist") else Whitelist()
    try:
        gw_cfg = GatewayConfig(
            model=_model_config(cfg),
            whitelist=whitelist,
            fail_policy=cfg.get("fail_policy", "open"),
            url_analysis=cfg.get("url_analysis", "off"),
            poll_interval=cfg.get("poll_interval", 5.0),
            reputation=_reputation(cfg),
            persona=_persona(cfg),
            cache=ResponseCache(cfg["cache_dir"]) if cfg.get("cache_dir") else None,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    gateway = Gateway(MaildirAdapter(cfg["maildir"]), gw_cfg)
    max_cycles = 1 if ns.once else ns.max_cycles
    if max_cycles is not None and max_cycles < 1:
        raise UsageError("--max-cycles must be >= 1")
    previous = signal.signal(signal.SIGTERM, lambda *_: gateway.stop())
    try:
        gateway.run_forever(max_cycles=max_cycles)
    except KeyboardInterrupt:
        gateway.stop()
    finally:
        signal.signal(signal.SIGTERM, previous)
    return 0


VERBS = {
    "ingest": cmd_ingest,
    "clean": cmd_clean,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "url-scan": cmd_url_scan,
    "watch": cmd_watch,
}


def _fail(cmd_verb: Optional[str], exc: BaseException) -> None:
    line = {"error": type(exc).__name__, "message": str(exc)}
    if cmd_verb:
        line["verb"] = cmd_verb
    print(json.dumps(line), file=sys.stderr)


def execute(cmd: Command) -> int:
    try:
        return VERBS[cmd.verb](cmd)
    except UsageError as exc:
        print(f"phishtriage {cmd.verb}: error: {exc}", file=sys.stderr)
        return 2
    except (errors.PhishTriageError, OSError, ValueError) as exc:
        _fail(cmd.verb, exc)
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cmd = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except errors.PhishTriageError as exc:
        _fail(None, exc)
        return 1
    logging.basicConfig(level=cmd.options.log_level, format="%(levelname)s %(name)s: %(message)s")
    return execute(cmd)


if __name__ == "__main__":
    sys.exit(main())
