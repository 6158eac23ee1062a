"""One gateway cycle over a throwaway maildir."""
# %%
import shutil
import tempfile
from pathlib import Path

from phishtriage import Gateway, GatewayConfig, MaildirAdapter, ModelConfig, Whitelist, prepare_email
from phishtriage.mockserver import MockEndpoint

MAIL = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "mail"
PHISH = {
    "Is_Phishing": True, "Risk": "High",
    "Social_Engineering_Elements": ["Display name Facebook on an unrelated sending domain",
                                    "Unexpected new-device login alert"],
    "Actions": ["Do not interact with any links or buttons in the email",
                "Check account activity by signing in on the official website"],
    "Reason": "Facebook branding from an unrelated domain with links to a lookalike host.",
}
LEGIT = {"Is_Phishing": False, "Risk": "Low", "Social_Engineering_Elements": [], "Actions": [], "Reason": "ok"}

with tempfile.TemporaryDirectory() as tmp, MockEndpoint({"default": {"status": 200, "verdict": LEGIT}}) as mock:
    spoof = (MAIL / "facebook_spoof.eml").read_bytes()
    mock.route(prepare_email(spoof).uniform.email_text, {"status": 200, "verdict": PHISH})

    box = MaildirAdapter(tmp)
    for name in ("facebook_spoof.eml", "trusted_hr.eml", "facebook_legit.eml"):
        shutil.copy(MAIL / name, box.inbox / name)

    config = GatewayConfig(
        ModelConfig("demo-model", base_url=mock.base_url, rate_limit=6000),
        whitelist=Whitelist.of(["company.com"]),
        url_analysis="report",
    )

    # %% Trusted mail skips the model; the spoof is quarantined with a report.
    for msg_id, disposition in Gateway(box, config).run_once():
        print(f"{msg_id:20} {disposition.outcome.value}")
    print("model calls:", mock.call_count)

    # %%
    print()
    print((box.reports / "facebook_spoof.txt").read_text())
