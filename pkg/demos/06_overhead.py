"""Per-cell byte overhead and signing cost."""

# %%
from backref.cli import bench, measure_overhead

print("signed minus unsigned stream cell:", measure_overhead(), "bytes")

# %%
res = bench(200)
print(f"sign   {res.sign_ms['mean']:.2f} ms (median {res.sign_ms['median']:.2f})")
print(f"verify {res.verify_ms['mean']:.2f} ms (median {res.verify_ms['median']:.2f})")
print("signature bytes:", res.signature_bytes, "with a 256-bit group:", res.paper_overhead_bytes - 4)
