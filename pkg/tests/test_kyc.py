import pytest
from hypothesis import given
from hypothesis import strategies as st

from compute_oversight.kyc import (
    CustomerAccount,
    EntityList,
    IdDocument,
    KycRegistry,
    OwnershipCycle,
    VerificationIncomplete,
    fold_name,
    load_entity_list,
    ownership_closure,
    resolve_beneficial_owners,
    verify_identity,
)
from compute_oversight.ledger import Ledger

DOC = (IdDocument("incorporation", "x"),)


def acct(cid, owners=(), name=None, jur="US", foreign=False, docs=DOC):
    return CustomerAccount(cid, name or cid.title(), jur, tuple(owners), docs, is_foreign=foreign)


def test_fold_name():
    assert fold_name("  Délta   SIMULATIONS ") == "delta simulations"


def test_resolve_chain_and_diamond():
    reg = {a.customer_id: a for a in [acct("a", ["b", "c"]), acct("b", ["d"]), acct("c", ["d", "e"]), acct("d"), acct("e")]}
    assert resolve_beneficial_owners(reg["a"], reg) == ["d", "e"]
    assert ownership_closure(reg["a"], reg) == ["b", "c", "d", "e"]
    assert resolve_beneficial_owners(reg["d"], reg) == ["d"]
    # unknown owners count as ultimate
    x = acct("x", ["ghost"])
    assert resolve_beneficial_owners(x, {}) == ["ghost"]


def test_cycle_detected():
    reg = {a.customer_id: a for a in [acct("a", ["b"]), acct("b", ["c"]), acct("c", ["a"])]}
    with pytest.raises(OwnershipCycle):
        resolve_beneficial_owners(reg["a"], reg)
    with pytest.raises(OwnershipCycle):
        resolve_beneficial_owners(acct("s", ["s"]), {})


@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=20))
def test_resolution_on_random_dags(edges):
    # edges only point from lower to higher ids, so the graph is acyclic
    owners = {i: sorted({b for a, b in edges if a == i and b > i}) for i in range(8)}
    reg = {f"n{i}": acct(f"n{i}", [f"n{j}" for j in owners[i]]) for i in range(8)}
    for i in range(8):
        ult = resolve_beneficial_owners(reg[f"n{i}"], reg)
        assert ult == sorted(set(ult))
        for u in ult:
            assert not reg[u].beneficial_owner_ids


LISTED = EntityList(frozenset({("Bad Holdings", None), ("Regional Co", "XX")}), "v1")


def test_tiers():
    reg = {}
    assert verify_identity(acct("a"), 1e15, LISTED, reg)[0] == "basic"
    assert verify_identity(acct("f", foreign=True), 1e15, LISTED, reg)[0] == "elevated"
    tier, reasons = verify_identity(acct("f", foreign=True), 5e19, LISTED, reg)
    assert tier == "edd_required" and "frontier_capacity" in reasons
    assert verify_identity(acct("d"), 5e19, LISTED, reg)[0] == "basic"
    assert verify_identity(acct("b", name="bad  holdings"), 1.0, LISTED, reg)[0] == "denied"
    assert verify_identity(acct("r", name="Regional Co", jur="XX"), 1.0, LISTED, reg)[0] == "denied"
    assert verify_identity(acct("r", name="Regional Co", jur="YY"), 1.0, LISTED, reg)[0] == "basic"


def test_denied_through_indirect_owner():
    reg = {a.customer_id: a for a in [acct("shell", ["mid"]), acct("mid", ["top"]), acct("top", name="Bad Holdings")]}
    tier, reasons = verify_identity(reg["shell"], 1.0, LISTED, reg)
    assert tier == "denied" and reasons == ["entity_list_owner_hit:top"]


def test_frontier_with_undocumented_owner_needs_edd():
    reg = {a.customer_id: a for a in [acct("a", ["o"]), acct("o", docs=())]}
    assert verify_identity(reg["a"], 5e19, LISTED, reg)[0] == "edd_required"
    assert verify_identity(reg["a"], 1e15, LISTED, reg)[0] == "basic"


def test_no_documents_is_incomplete():
    with pytest.raises(VerificationIncomplete):
        verify_identity(acct("a", docs=()), 1.0, LISTED, {})


def test_registry_ledgers_changes(tmp_path):
    ledger = Ledger()
    reg = KycRegistry([acct("a", name="Future Bad")], ledger)
    assert reg.verify("a", 1.0, LISTED)[0] == "basic"
    assert reg.verify("a", 1.0, LISTED)[0] == "basic"
    assert len([r for r in ledger.records if r.kind == "kyc_event"]) == 1
    updated = LISTED.with_entry("Future Bad", version="v2")
    assert reg.verify("a", 1.0, updated, t=10.0)[0] == "denied"
    events = [r.data for r in ledger.records if r.kind == "kyc_event"]
    assert [(e["from_tier"], e["to_tier"], e["entity_list_version"]) for e in events] == [
        ("basic", "basic", "v1"),
        ("basic", "denied", "v2"),
    ]
    assert reg.accounts["a"].risk_tier == "denied"


def test_account_round_trip_and_validation():
    a = acct("a", ["b"], foreign=True)
    assert CustomerAccount.from_dict(a.to_dict()) == a
    with pytest.raises(ValueError):
        CustomerAccount("a", "A", "US", risk_tier="platinum")


def test_load_entity_list(tmp_path):
    p = tmp_path / "el.yaml"
    p.write_text("version: '7'\nentries:\n  - {name: Bad Holdings}\n  - {name: X, jurisdiction: '*'}\n")
    el = load_entity_list(p)
    assert el.version == "7" and ("X", None) in el.entries
    assert EntityList.from_dict(el.to_dict()) == el
    p.write_text("entries: []\n")
    with pytest.raises(ValueError):
        load_entity_list(p)
