import csv
import json
import shutil
import subprocess
import sys

import pytest

from phishtriage.cli import UsageError, main, read_config
from phishtriage.prompt import URL_SECTION_HEADER

from conftest import MAIL, PHISH_VERDICT, write_planted

FAST = ["--rate-limit", "60000", "--max-retries", "0", "--timeout", "5"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("PHISHTRIAGE_BASE_URL", raising=False)
    monkeypatch.delenv("PHISHTRIAGE_API_KEY", raising=False)


def run(capsys, *argv):
    code = main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


def corpus_file(tmp_path, n=3):
    path = tmp_path / "corpus.jsonl"
    rows = [
        {"id": f"c{i}", "email": f"SUBJECT: s{i}, FROM: f, EMAIL: body {i}", "class": "Legit", "body": f"body {i}"}
        for i in range(n)
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


@pytest.mark.parametrize(
    "argv,code",
    [
        (["--help"], 0),
        (["eval", "--help"], 0),
        (["frobnicate"], 2),
        ([], 2),
        (["eval", "--bogus"], 2),
        (["clean"], 2),
        (["watch", "--once", "--max-cycles", "2"], 2),
        (["eval", "--predictions", "/nonexistent/p.jsonl"], 1),
        (["url-scan", "/nonexistent/x.eml"], 1),
        (["--config", "/nonexistent/c.ini", "eval", "--predictions", "x"], 1),
    ],
)
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_usage_error_on_missing_model(capsys, tmp_path):
    code, _, err = run(capsys, "classify", "--corpus", corpus_file(tmp_path), "--out", tmp_path / "o.jsonl")
    assert code == 2 and "no model" in err


def test_bad_config_key_and_value(capsys, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("modle = x\n")
    assert run(capsys, "--config", bad, "clean", corpus_file(tmp_path))[0] == 2
    bad.write_text("timeout = soon\n")
    with pytest.raises(UsageError):
        read_config(bad)


def test_runtime_failure_prints_json_error(capsys):
    code, _, err = run(capsys, "eval", "--predictions", "/nonexistent/p.jsonl")
    line = json.loads(err.strip().splitlines()[-1])
    assert code == 1 and line["error"] == "UnreadableFile" and line["verb"] == "eval"


def test_flag_beats_config_and_env_beats_config(capsys, mock, tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text("# settings\nmodel = file-model\nbase_url = http://127.0.0.1:9/v1\nrate_limit = 60000\n")
    monkeypatch.setenv("PHISHTRIAGE_BASE_URL", mock.base_url)
    code, out, _ = run(capsys, "--config", cfg, "classify", "--corpus", corpus_file(tmp_path, 1),
                       "--out", tmp_path / "o.jsonl", "--model", "flag-model", "--max-retries", "0")
    assert code == 0, out
    assert mock.calls[0].body["model"] == "flag-model"

    # no flag: the file's model is used
    code, _, _ = run(capsys, "--config", cfg, "classify", "--corpus", corpus_file(tmp_path, 1),
                     "--out", tmp_path / "o2.jsonl", "--max-retries", "0")
    assert code == 0 and mock.calls[-1].body["model"] == "file-model"


def test_all_failed_classify_exits_1(capsys, tmp_path):
    code, _, err = run(capsys, "classify", "--corpus", corpus_file(tmp_path, 2), "--out", tmp_path / "o.jsonl",
                       "--model", "m", "--base-url", "http://127.0.0.1:9/v1", *FAST)
    assert code == 1 and "TransportError" in err
    assert len((tmp_path / "o.jsonl").read_text().splitlines()) == 2


def test_api_key_from_config_fills_env(capsys, mock, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("api_key = sekrit\n")
    run(capsys, "--config", cfg, "classify", "--corpus", corpus_file(tmp_path, 1), "--out", tmp_path / "o.jsonl",
        "--model", "m", "--base-url", mock.base_url, *FAST)
    assert mock.calls[0].headers.get("authorization") == "Bearer sekrit"


def test_ingest_clean_classify_eval(capsys, mock, tmp_path):
    corpus = tmp_path / "c.csv"
    code, out, _ = run(capsys, "ingest", MAIL / "facebook_spoof.eml", MAIL / "shortener.eml", "--label", "Phishing",
                       "--out", corpus)
    assert code == 0 and out.startswith("records=2 skipped=0")
    with open(corpus, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["Email", "Class"] and all(r[1] == "Phishing" for r in rows[1:])

    code, out, _ = run(capsys, "clean", corpus, "--min-len", "0", "--max-len", "100000", "--out", tmp_path / "k.jsonl")
    assert code == 0 and out.strip() == "total=2 phishing=2 legit=0 unlabeled=0"

    mock.set_default({"status": 200, "verdict": PHISH_VERDICT})
    preds = tmp_path / "p.jsonl"
    code, out, _ = run(capsys, "classify", "--corpus", tmp_path / "k.jsonl", "--out", preds, "--model", "m",
                       "--base-url", mock.base_url, "--url-analysis", *FAST)
    assert code == 0 and "classified=2 errors=0" in out
    assert all(URL_SECTION_HEADER in c.body["messages"][-1]["content"] for c in mock.calls)

    code, out, _ = run(capsys, "eval", "--predictions", preds, "--name", "m", "--out", tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert code == 0 and data["models"][0]["counts"] == {"tp": 2, "fp": 0, "tn": 0, "fn": 0, "unscored": 0}


def test_malformed_corpus_exits_1(capsys, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": "no email key"}\n')
    assert run(capsys, "clean", bad)[0] == 1


def test_clean_stats_json(capsys, tmp_path):
    code, out, _ = run(capsys, "clean", corpus_file(tmp_path), "--min-len", "0", "--json")
    assert code == 0 and json.loads(out)["legit"] == 3


def test_eval_reproduces_table_row(capsys, tmp_path):
    preds = write_planted(tmp_path / "llama.jsonl", 4806, 93, 1869, 98)
    code, out, _ = run(capsys, "eval", "--predictions", preds, "--name", "Llama-3.1-70b", "--out", tmp_path / "r.csv")
    assert code == 0
    row = next(csv.DictReader(open(tmp_path / "r.csv")))
    assert (row["precision"], row["recall"], row["f1"], row["accuracy"]) == ("0.9810", "0.9800", "0.9805", "0.9721")
    assert "0.9721" in out


def test_compare_flags_transposed_rows(capsys, tmp_path):
    counts = tmp_path / "counts.csv"
    counts.write_text(
        "model,tp,fp,tn,fn,precision,recall,f1,accuracy\n"
        "Llama3-8b,4863,760,1202,41,0.8648,0.9916,0.8833,0.9239\n"
        "Mistral-large-latest,4899,1337,625,5,0.7855,0.9989,0.8045,0.8795\n"
    )
    gemma = write_planted(tmp_path / "gemma.jsonl", 4882, 301, 1661, 22)
    code, out, _ = run(capsys, "compare", "--counts", counts, "--predictions", f"Gemma2-9b={gemma}",
                       "--out", tmp_path / "cmp.json", "--matrices")
    assert code == 0
    data = json.loads((tmp_path / "cmp.json").read_text())
    assert [m["model"] for m in data["models"]] == ["Gemma2-9b", "Llama3-8b", "Mistral-large-latest"]
    assert {(d["model"], d["metric"]) for d in data["discrepancies"]} == {
        ("Llama3-8b", "f1"), ("Llama3-8b", "accuracy"),
        ("Mistral-large-latest", "f1"), ("Mistral-large-latest", "accuracy"),
    }
    assert "true / pred" in out
    assert run(capsys, "compare")[0] == 2


def test_url_scan_json(capsys, tmp_path):
    deny = tmp_path / "deny.txt"
    deny.write_text("thema214.com\n")
    code, out, _ = run(capsys, "url-scan", MAIL / "facebook_spoof.eml", "--denylist", deny)
    report = json.loads(out)
    assert code == 0 and report["hidden_text_removals"] == 1
    assert {f["reputation"] for f in report["findings"]} == {"Malicious"}


def test_watch_once_moves_spoof(capsys, mock, tmp_path):
    mock.set_default({"status": 200, "verdict": PHISH_VERDICT})
    box = tmp_path / "mb"
    (box / "inbox").mkdir(parents=True)
    shutil.copy(MAIL / "facebook_spoof.eml", box / "inbox" / "spoof.eml")
    shutil.copy(MAIL / "trusted_hr.eml", box / "inbox" / "hr.eml")
    wl = tmp_path / "wl.txt"
    wl.write_text("hr@company.com\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text("rate_limit = 60000\nfail_policy = open\n")
    code, _, _ = run(capsys, "--config", cfg, "watch", "--maildir", box, "--whitelist", wl, "--model", "m",
                     "--base-url", mock.base_url, "--once")
    assert code == 0
    assert (box / "spam" / "spoof.eml").exists() and (box / "inbox" / "hr.eml").exists()
    assert "Do not interact with any links" in (box / "reports" / "spoof.txt").read_text()
    assert mock.call_count == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "phishtriage", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "url-scan" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "phishtriage", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
