"""Run three relays and one client, then trace a stream from the exit back to
the client."""

# %%
from backref import load_bundled, run_scenario

result = run_scenario(load_bundled("honest-3hop"))
for s in result.streams:
    print(s.origin, "->", s.ticket.request if s.ticket else None)

# %% [markdown]
# Every relay keeps a log of (inbound pseudonym, outbound pseudonym) pairs,
# each pair signed. The exit keeps the stream signature. None of this is
# readable without a trace request that starts at the exit.

# %%
for nid, node in sorted(result.nodes.items()):
    print(nid, len(node.log), "records")

# %%
query, origin = result.queries()[0]
report = result.trace(query)
print(report.outcome.value, report.user_address, "true origin:", origin)
print(" -> ".join(report.events))

# %% [markdown]
# The report carries every signature it relied on, so a third party can check
# it without the logs.

# %%
print("signatures check out:", report.verify_signatures())

# %% [markdown]
# If the middle relay refuses to hand over its log, the trace stops there.

# %%
report = result.trace(query, snapshots=result.snapshots(exclude=["relay-002"]))
print(report.outcome.value, report.fail_node, "exit code", report.exit_code)
