# %% [markdown]
# # An append-only ledger with scoped access
#
# Regulators get salted aggregates; detail needs a warrant naming a customer.
# Every query, refused or not, is itself recorded.

# %%
from compute_oversight.ledger import AccessDenied, Ledger, QueryFilter, RetentionPolicy

ledger = Ledger(retention=RetentionPolicy({"estimate": 30 * 86400.0}))
for day, cid, ops in [(1, "alpha", 3e21), (2, "alpha", 4e21), (40, "bravo", 9e22)]:
    ledger.append("estimate", {"method": "counters", "ops_point": ops}, day * 86400.0, cid)
ledger.append("classification", {"top_label": "pretraining"}, 2 * 86400.0, "alpha", "detailed")

print(ledger.query("regulator", QueryFilter(aggregate="compute_by_month")).aggregate)

# %%
try:
    ledger.query("regulator", QueryFilter(detailed=True))
except AccessDenied as exc:
    print("refused:", exc)
warranted = ledger.query("regulator_with_warrant", QueryFilter(customer_id="alpha", detailed=True))
print([r.kind for r in warranted.records])

# %% [markdown]
# Retention purges old estimates unless a legal hold covers them.

# %%
ledger.place_hold(50 * 86400.0, customer_id="alpha", authority="court order 17")
print("purged", ledger.sweep_retention(100 * 86400.0), "records")
print(sorted({(r.kind, r.customer_id) for r in ledger.records if r.kind != "access_audit"}))
