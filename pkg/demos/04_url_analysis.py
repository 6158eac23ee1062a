"""Link checks: shorteners, brand/domain mismatch and reputation lookups."""
# %%
from pathlib import Path

from phishtriage import StubReputation, analyze_urls, extract_urls, prepare_email

MAIL = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "mail"
reputation = StubReputation(allow=["facebook.com"], deny=["thema214.com"])


def scan(name):
    prepared = prepare_email((MAIL / name).read_bytes())
    return analyze_urls(prepared.uniform.email_text, extract_urls(prepared.reduced), reputation=reputation,
                        hidden_text_removals=prepared.reduced.hidden_removed)


# %% Each fixture, as the model would see it in the URL section of the prompt.
for name in ("facebook_spoof.eml", "facebook_legit.eml", "shortener.eml"):
    print(f"== {name}")
    print(scan(name).summary)
    print()
