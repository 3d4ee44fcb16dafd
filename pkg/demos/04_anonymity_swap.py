"""Two users, two messages. Swap who sends what and compare what an adversary
holding the entry and middle relays sees."""

# %%
from backref import games, run_scenario

p = run_scenario(games.swap_scenario(swapped=False))
q = run_scenario(games.swap_scenario(swapped=True))

# %%
view_p = games.adversary_view(p)
view_q = games.adversary_view(q)
print(len(view_p), "observed events, identical:", view_p == view_q)

# %% [markdown]
# The destinations do see different plaintexts in the two worlds, so the
# equality above is not because nothing happened.

# %%
for world, r in (("P", p), ("Q", q)):
    print(world, [e.data for srv in r.net.destinations.values() for e in srv.log])

# %%
print(games.pseudonym_duplicate_scan(1000))
