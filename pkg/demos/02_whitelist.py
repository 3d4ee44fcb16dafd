"""Exit whitelists: streams to listed destinations need no signature and leave
no exit record."""

# %%
from backref import ExitEvidenceRecord, load_bundled, run_scenario

result = run_scenario(load_bundled("whitelist-mixed"))
exit_node = result.nodes["relay-003"]
print("whitelist:", exit_node.whitelist)

# %%
for s in result.streams:
    req = s.ticket.request if s.ticket else None
    delivered = s.ticket is not None and s.ticket.reply is not None
    print(f"{s.spec.host}:{s.spec.port}", "delivered" if delivered else "not delivered", req)

# %%
records = [r for r in exit_node.log if isinstance(r, ExitEvidenceRecord)]
print(len(records), "exit records")
print({k: v for k, v in exit_node.stats.items() if k.startswith("drop")})

# %% [markdown]
# A whitelisted query is not traced at all: the exit has nothing to give.

# %%
for q, origin in result.queries():
    allowed = exit_node.whitelist.allows(q.address, q.port)
    if allowed:
        print(q.address, q.port, "whitelisted, no trace")
    else:
        print(q.address, q.port, result.trace(q).outcome.value)
