# %% [markdown]
# # Know your customer
#
# Risk tiers depend on how much capacity is requested, where the customer is
# and who ultimately owns it.  A listed entity two layers up the ownership
# chain still denies the account.

# %%
from compute_oversight.kyc import CustomerAccount, EntityList, IdDocument, KycRegistry, resolve_beneficial_owners
from compute_oversight.ledger import Ledger

doc = (IdDocument("incorporation", "x"),)
accounts = [
    CustomerAccount("shell", "Harmless Widgets", "US", ("mid",), doc),
    CustomerAccount("mid", "Middle Holdings", "KY", ("top",), doc),
    CustomerAccount("top", "Listed Holdings", "XX", (), doc),
    CustomerAccount("lab", "Overseas Lab", "FR", (), doc, is_foreign=True),
]
ledger = Ledger()
registry = KycRegistry(accounts, ledger)
listed = EntityList(frozenset({("Listed Holdings", None)}), "2024-01")

print("ultimate owners of shell:", resolve_beneficial_owners(registry.accounts["shell"], registry.accounts))
for cid, capacity in (("shell", 1e15), ("lab", 1e15), ("lab", 5e19)):
    print(cid, f"{capacity:.0e} OP/s ->", registry.verify(cid, capacity, listed))

# %%
for r in ledger.records:
    print(r.seq, r.kind, r.data["customer_id"], r.data["from_tier"], "->", r.data["to_tier"])
