"""Customer identity verification, beneficial ownership and risk tiering."""

from __future__ import annotations

import dataclasses
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import yaml

from .accounting import ComputeThresholds

RISK_TIERS = ("basic", "elevated", "edd_required", "denied")
# share of the cluster-rate threshold at which a request counts as frontier capacity
FRONTIER_CAPACITY_FRACTION = 0.1


class VerificationIncomplete(ValueError):
    """The account carries no identity documents."""


class OwnershipCycle(ValueError):
    pass


def fold_name(name: str) -> str:
    """Case- and diacritic-insensitive form of a legal name."""
    decomposed = unicodedata.normalize("NFKD", name)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return " ".join(stripped.casefold().split())


@dataclass(frozen=True)
class IdDocument:
    kind: str
    checksum: str


@dataclass(frozen=True)
class CustomerAccount:
    customer_id: str
    legal_name: str
    jurisdiction: str
    beneficial_owner_ids: tuple[str, ...] = ()
    id_documents: tuple[IdDocument, ...] = ()
    payment_instrument: str = ""
    is_foreign: bool = False
    risk_tier: str = "basic"

    def __post_init__(self):
        if self.risk_tier not in RISK_TIERS:
            raise ValueError(f"unknown risk tier {self.risk_tier!r}")

    def to_dict(self) -> dict:
        return {
            "customer_id": self.customer_id,
            "legal_name": self.legal_name,
            "jurisdiction": self.jurisdiction,
            "beneficial_owner_ids": list(self.beneficial_owner_ids),
            "id_documents": [{"kind": d.kind, "checksum": d.checksum} for d in self.id_documents],
            "payment_instrument": self.payment_instrument,
            "is_foreign": self.is_foreign,
            "risk_tier": self.risk_tier,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CustomerAccount":
        return cls(
            customer_id=str(d["customer_id"]),
            legal_name=str(d["legal_name"]),
            jurisdiction=str(d.get("jurisdiction", "")),
            beneficial_owner_ids=tuple(str(x) for x in d.get("beneficial_owner_ids", ())),
            id_documents=tuple(
                IdDocument(str(x["kind"]), str(x["checksum"])) for x in d.get("id_documents", ())
            ),
            payment_instrument=str(d.get("payment_instrument", "")),
            is_foreign=bool(d.get("is_foreign", False)),
            risk_tier=str(d.get("risk_tier", "basic")),
        )


@dataclass(frozen=True)
class EntityList:
    """Versioned restricted-party list.

    An entry is ``(legal_name, jurisdiction)``; a ``None`` jurisdiction
    matches any.  Names match after :func:`fold_name`.
    """

    entries: frozenset[tuple[str, Optional[str]]] = frozenset()
    version: str = "0"

    def matches(self, account: CustomerAccount) -> bool:
        name = fold_name(account.legal_name)
        for pattern, jurisdiction in self.entries:
            if fold_name(pattern) == name and (
                jurisdiction is None or jurisdiction.upper() == account.jurisdiction.upper()
            ):
                return True
        return False

    def with_entry(self, name: str, jurisdiction: Optional[str] = None, version: Optional[str] = None) -> "EntityList":
        return EntityList(self.entries | {(name, jurisdiction)}, version or f"{self.version}+1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "EntityList":
        entries = frozenset(
            (str(e["name"]), None if e.get("jurisdiction") in (None, "*") else str(e["jurisdiction"]))
            for e in d.get("entries", ())
        )
        return cls(entries, str(d.get("version", "0")))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "entries": [
                {"name": n, "jurisdiction": j} for n, j in sorted(self.entries, key=lambda e: (e[0], e[1] or ""))
            ],
        }


def load_entity_list(path: str | Path) -> EntityList:
    """Read an entity list from a YAML document with ``version`` and ``entries``."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "version" not in doc:
        raise ValueError(f"{path}: entity list needs a version")
    return EntityList.from_dict(doc)


def resolve_beneficial_owners(
    account: CustomerAccount, registry: Mapping[str, CustomerAccount]
) -> list[str]:
    """Ultimate owners of ``account``, sorted and deduplicated.

    An owner id absent from ``registry`` is treated as ultimate (nothing is
    known about who owns it).  An account with no owners owns itself.
    """
    ultimate: set[str] = set()
    done: set[str] = set()

    def visit(cid: str, path: tuple[str, ...]) -> None:
        if cid in path:
            raise OwnershipCycle(" -> ".join(path + (cid,)))
        if cid in done:
            return
        acct = account if cid == account.customer_id else registry.get(cid)
        owners = acct.beneficial_owner_ids if acct is not None else ()
        if not owners:
            ultimate.add(cid)
        for o in owners:
            visit(o, path + (cid,))
        done.add(cid)

    visit(account.customer_id, ())
    return sorted(ultimate)


def ownership_closure(
    account: CustomerAccount, registry: Mapping[str, CustomerAccount]
) -> list[str]:
    """Every direct or indirect owner id (excluding the account itself)."""
    resolve_beneficial_owners(account, registry)  # cycle check
    seen: set[str] = set()
    stack = list(account.beneficial_owner_ids)
    while stack:
        cid = stack.pop()
        if cid in seen:
            continue
        seen.add(cid)
        acct = registry.get(cid)
        if acct is not None:
            stack.extend(acct.beneficial_owner_ids)
    return sorted(seen)


def verify_identity(
    account: CustomerAccount,
    requested_capacity: float,
    entity_list: EntityList,
    registry: Optional[Mapping[str, CustomerAccount]] = None,
    thresholds: ComputeThresholds = ComputeThresholds(),
    frontier_fraction: float = FRONTIER_CAPACITY_FRACTION,
) -> tuple[str, list[str]]:
    """Assign a risk tier and list the rules that fired."""
    if not account.id_documents:
        raise VerificationIncomplete(f"{account.customer_id}: no identity documents")
    registry = registry or {}
    reasons: list[str] = []

    if entity_list.matches(account):
        reasons.append(f"entity_list_hit:{account.customer_id}")
    for owner_id in ownership_closure(account, registry):
        owner = registry.get(owner_id)
        if owner is not None and entity_list.matches(owner):
            reasons.append(f"entity_list_owner_hit:{owner_id}")
    if reasons:
        return "denied", reasons

    frontier = requested_capacity >= frontier_fraction * thresholds.cluster_rate_threshold
    undocumented = sorted(
        oid
        for oid in ownership_closure(account, registry)
        if oid not in registry or not registry[oid].id_documents
    )
    if frontier:
        reasons.append("frontier_capacity")
    if account.is_foreign:
        reasons.append("foreign_customer")
    for oid in undocumented:
        reasons.append(f"undocumented_owner:{oid}")

    if frontier and (account.is_foreign or undocumented):
        return "edd_required", reasons
    if account.is_foreign:
        return "elevated", reasons
    return "basic", reasons


class KycRegistry:
    """Single-writer account store that records every tier change."""

    def __init__(self, accounts: Iterable[CustomerAccount] = (), ledger=None):
        self.accounts: dict[str, CustomerAccount] = {a.customer_id: a for a in accounts}
        self.ledger = ledger
        self._verified: set[str] = set()

    def verify(
        self,
        customer_id: str,
        requested_capacity: float,
        entity_list: EntityList,
        t: float = 0.0,
        thresholds: ComputeThresholds = ComputeThresholds(),
    ) -> tuple[str, list[str]]:
        account = self.accounts[customer_id]
        tier, reasons = verify_identity(account, requested_capacity, entity_list, self.accounts, thresholds)
        if tier != account.risk_tier or customer_id not in self._verified:
            self._verified.add(customer_id)
            self.accounts[customer_id] = dataclasses.replace(account, risk_tier=tier)
            if self.ledger is not None:
                self.ledger.append(
                    "kyc_event",
                    {
                        "customer_id": customer_id,
                        "from_tier": account.risk_tier,
                        "to_tier": tier,
                        "reasons": reasons,
                        "entity_list_version": entity_list.version,
                        "requested_capacity": float(requested_capacity),
                    },
                    t=t,
                    customer_id=customer_id,
                    sensitivity="detailed",
                )
        return tier, reasons
