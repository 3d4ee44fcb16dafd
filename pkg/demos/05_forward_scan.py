"""A relay's log and state must never name its successor. Compromise relays
after the fact and scan everything they held."""

# %%
from backref import games, load_bundled, run_scenario

result = run_scenario(load_bundled("post-hoc"))
for nid, node in sorted(result.nodes.items()):
    print(nid, len(node.log), "records")

# %%
res = games.no_forward_traceability(result)
print(res.verdict, res.details)

# %% [markdown]
# Backward tracing still works on the same logs.

# %%
for q, origin in result.queries():
    rep = result.trace(q)
    print(q.address, rep.outcome.value, rep.user_address, "origin", origin)
