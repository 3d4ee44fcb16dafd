"""Corrupt subsets of {N1, N2, N3, ISP} try to pin the victim's stream on an
innocent client. Prints one line per (subset, attack)."""

# %%
from collections import Counter

from backref import games

base = games.run_scenario(games.two_circuit_scenario())
print("victim:", games.VICTIM, "innocent:", games.INNOCENT)

# %%
tally = Counter()
for subset in games.all_subsets(strict=True):
    for attack in games.ATTACKS:
        outcome, report = games.run_attack(base, subset, attack)
        tag = "FRAMED" if outcome.false_accusation else report.outcome.value
        tally[tag] += 1
        if outcome.false_accusation:
            print("+".join(x for x in games.PARTIES if x in subset), attack, "->", report.user_address)
print(dict(tally))

# %% [markdown]
# The entry relay writes the client's address into its record, and nothing
# the client holds signs that address. With the entry relay and the ISP both
# corrupt, the pair can swap in another client's address and a matching
# attestation. Every framing above involves that pair.

# %%
outcome, report = games.run_attack(base, ("N1", "N2", "N3", "ISP"), "reattribute-entry")
print("total corruption:", report.outcome.value, report.user_address)
