"""Classifying against a scripted local endpoint: retries, ordering and the cache.

No network access is needed.  Point ``base_url`` at a real
OpenAI-compatible server and set PHISHTRIAGE_API_KEY to use a hosted model.
"""
# %%
import tempfile

from phishtriage import ModelConfig, ResponseCache, UniformRecord, build_request, classify_batch
from phishtriage.mockserver import MockEndpoint

PHISH = {
    "Is_Phishing": True, "Risk": "High",
    "Social_Engineering_Elements": ["urgent deadline"],
    "Actions": ["Do not interact with any links or buttons in the email"],
    "Reason": "Pressure to act on a credential form.",
}
LEGIT = {"Is_Phishing": False, "Risk": "Low", "Social_Engineering_Elements": [], "Actions": [],
         "Reason": "Routine internal note."}

records = [
    UniformRecord(id="m1", email_text="SUBJECT: Verify now, FROM: it@helpdesk-reset.example, "
                                      "EMAIL: Your mailbox is full. Verify within 24 hours."),
    UniformRecord(id="m2", email_text="SUBJECT: Lunch, FROM: sam@company.com, EMAIL: Thursday at noon?"),
]

# %% The first message is rate limited twice before it gets through.
with MockEndpoint({"default": {"status": 200, "verdict": LEGIT}}) as mock, tempfile.TemporaryDirectory() as tmp:
    mock.route(build_request(records[0]).user_content,
               {"status": 429, "headers": {"Retry-After": "0"}}, {"status": 429},
               {"status": 200, "verdict": PHISH})
    config = ModelConfig("demo-model", base_url=mock.base_url, backoff_base=0.01, rate_limit=6000)
    cache = ResponseCache(tmp)

    for out in classify_batch(records, config, parallelism=2, cache=cache):
        print(f"{out.record_id}: phishing={out.verdict.is_phishing} risk={out.verdict.risk.value} "
              f"attempts={out.attempts}")
    print("requests sent:", mock.call_count)

    # %% A rerun is served entirely from the cache.
    mock.reset_counters()
    again = classify_batch(records, config, cache=ResponseCache(tmp))
    print("rerun requests:", mock.call_count, "cached:", [o.cached for o in again])
