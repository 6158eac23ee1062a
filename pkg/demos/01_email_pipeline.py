"""From a raw .eml to the one-line record the model sees."""
# %%
from pathlib import Path

from phishtriage import parse_eml, prepare_email, select_body

MAIL = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "mail"
raw = (MAIL / "facebook_spoof.eml").read_bytes()

# %% The parser keeps the display name and the real address side by side.
msg = parse_eml(raw)
print("From:   ", msg.sender)
print("Subject:", msg.subject)
print("Parts:  ", [p.content_type for p in msg.parts])

# %% The html part wins over plain text.
is_html, text = select_body(msg)
print("html body selected:", is_html, "-", len(text), "chars")

# %% Reduction keeps anchors and images, drops the zero-font bait text.
prepared = prepare_email(raw, label="Phishing")
print("hidden elements removed:", prepared.reduced.hidden_removed)
print(prepared.reduced.text[:300], "...")

# %% Uniform record, ready for a prompt.
print()
print(prepared.uniform.email_text[:400])
