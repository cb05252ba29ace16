"""Enforcement state machine and simulated attestation of customer claims."""

from __future__ import annotations

import dataclasses
import hashlib
import hmac
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from . import serial
from .accounting import EVENT_KINDS, ComputeEstimate, ReportableEvent, UsageRecord

STATES = ("active", "flagged", "throttled", "suspended", "terminated")
SIGNALS = (
    "compliant",
    "follow_up",
    "attestation_rejected",
    "mismatch",
    "unreported_threshold",
    "kyc_denied",
    "suspend_directive",
    "resolution",
)
VIOLATIONS = ("mismatch", "unreported_threshold")
CLAIM_KINDS = ("eval_was_run", "dataset_id_used", "ops_consumed")

# documented transition graph; staying put is always allowed
TRANSITION_GRAPH: dict[str, frozenset[str]] = {
    "active": frozenset({"flagged", "throttled", "suspended"}),
    "flagged": frozenset({"active", "throttled", "suspended"}),
    "throttled": frozenset({"flagged", "suspended", "terminated"}),
    "suspended": frozenset({"throttled", "terminated"}),
    "terminated": frozenset(),
}

_hold = {s: s for s in STATES}
_flag = {**_hold, "active": "flagged"}
_throttle = {**_hold, "active": "throttled", "flagged": "throttled"}
_suspend = {s: ("terminated" if s == "terminated" else "suspended") for s in STATES}

POLICY_TABLE: dict[str, dict[str, str]] = {
    "compliant": _hold,
    "follow_up": _flag,
    "attestation_rejected": _flag,
    "mismatch": _throttle,
    "unreported_threshold": _throttle,
    "kyc_denied": _suspend,
    "suspend_directive": _suspend,
    "resolution": {
        "active": "active",
        "flagged": "active",
        "throttled": "flagged",
        "suspended": "throttled",
        "terminated": "terminated",
    },
}

ESCALATION_COUNT = 2
ESCALATING_STATES = ("throttled", "suspended")
VIOLATION_WINDOW_S = 30 * 86400.0
CAPACITY_MULTIPLIER = {
    "active": 1.0,
    "flagged": 1.0,
    "throttled": 0.5,
    "suspended": 0.0,
    "terminated": 0.0,
}


class UnknownCustomer(KeyError):
    pass


class UnknownKey(KeyError):
    pass


@dataclass(frozen=True)
class EnforcementState:
    customer_id: str
    state: str = "active"
    since: float = 0.0
    cause: str = "initial"

    def __post_init__(self):
        if self.state not in STATES:
            raise ValueError(f"unknown state {self.state!r}")

    def to_dict(self) -> dict:
        return {"customer_id": self.customer_id, "state": self.state, "since": float(self.since), "cause": self.cause}


def next_state(state: str, signal: str, recent_violations: int = 0) -> str:
    """Pure transition function.

    ``recent_violations`` counts violations already on record inside the
    escalation window.  A violation while throttled or suspended that brings
    the count to ``ESCALATION_COUNT`` terminates the account; from active or
    flagged it throttles first.
    """
    if signal not in POLICY_TABLE:
        raise ValueError(f"unknown signal {signal!r}")
    if signal in VIOLATIONS and state in ESCALATING_STATES and recent_violations + 1 >= ESCALATION_COUNT:
        return "terminated"
    return POLICY_TABLE[signal][state]


@dataclass(frozen=True)
class Signals:
    """Evidence gathered for one customer in one evaluation round.

    ``threshold_events`` pairs each event with whether the customer had
    reported it.  ``directives`` holds regulator orders: ``suspend`` or
    ``resolve``.
    """

    reconcile: tuple[str, ...] = ()
    threshold_events: tuple[tuple[ReportableEvent, bool], ...] = ()
    kyc_tier: Optional[str] = None
    directives: tuple[str, ...] = ()
    attestation_rejected: bool = False
    estimate: Optional[ComputeEstimate] = None

    def atoms(self) -> list[str]:
        out: list[str] = []
        if "resolve" in self.directives:
            out.append("resolution")
        if "follow_up" in self.reconcile:
            out.append("follow_up")
        if self.attestation_rejected:
            out.append("attestation_rejected")
        if "mismatch" in self.reconcile:
            out.append("mismatch")
        elif any(not reported for _, reported in self.threshold_events):
            out.append("unreported_threshold")
        if self.kyc_tier == "denied":
            out.append("kyc_denied")
        if "suspend" in self.directives:
            out.append("suspend_directive")
        return out or ["compliant"]


@dataclass(frozen=True)
class Action:
    kind: str  # throttle | suspend | terminate | restore | flag | regulator_report
    customer_id: str
    t: float
    capacity_multiplier: float = 1.0
    report: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "customer_id": self.customer_id,
            "t": float(self.t),
            "capacity_multiplier": float(self.capacity_multiplier),
            "report": self.report,
        }


def regulator_report(
    kind: str,
    customer_id: str,
    evidence: Optional[ComputeEstimate],
    t: float,
    warrant: bool = False,
    salt: bytes = b"",
) -> dict:
    """Report document: customer named only under warrant, otherwise hashed."""
    who = customer_id if warrant else hashlib.sha256(salt + customer_id.encode()).hexdigest()[:32]
    ev = None
    if evidence is not None:
        ev = evidence.to_dict()
        ev["customer_id"] = who
    return {
        "kind": kind,
        "customer": who,
        "customer_named": warrant,
        "t": float(t),
        "evidence": ev,
    }


class Overseer:
    """One enforcement state machine per customer, every transition ledgered."""

    def __init__(
        self,
        customers: Iterable[str],
        ledger=None,
        report_salt: bytes = b"reports",
        warrant_customers: Iterable[str] = (),
    ):
        self.states: dict[str, EnforcementState] = {c: EnforcementState(c) for c in customers}
        self.violations: dict[str, list[float]] = {c: [] for c in self.states}
        self.ledger = ledger
        self.report_salt = report_salt
        self.warrant_customers = frozenset(warrant_customers)

    def state(self, customer_id: str) -> EnforcementState:
        if customer_id not in self.states:
            raise UnknownCustomer(customer_id)
        return self.states[customer_id]

    def evaluate(self, customer_id: str, signals: Signals, t: float) -> tuple[EnforcementState, list[Action]]:
        current = self.state(customer_id)
        actions: list[Action] = []
        # the most serious unreported event is the one cited
        unreported = sorted(
            (e for e, reported in signals.threshold_events if not reported), key=lambda e: EVENT_KINDS.index(e.kind)
        )
        evidence = unreported[0].evidence if unreported else signals.estimate
        event_kind = unreported[0].kind if unreported else None

        for atom in signals.atoms():
            if atom == "compliant":
                continue
            recent = [v for v in self.violations[customer_id] if t - v <= VIOLATION_WINDOW_S]
            new = next_state(current.state, atom, len(recent))
            if new not in TRANSITION_GRAPH[current.state] and new != current.state:
                raise AssertionError(f"policy produced illegal transition {current.state}->{new}")
            if atom in VIOLATIONS and current.state != "terminated":
                self.violations[customer_id].append(t)
                kind = event_kind if atom == "unreported_threshold" else "declaration_mismatch"
                actions.append(
                    Action(
                        "regulator_report",
                        customer_id,
                        t,
                        CAPACITY_MULTIPLIER[new],
                        regulator_report(
                            kind,
                            customer_id,
                            evidence,
                            t,
                            warrant=customer_id in self.warrant_customers,
                            salt=self.report_salt,
                        ),
                    )
                )
            if new != current.state:
                actions.append(Action(_action_for(current.state, new), customer_id, t, CAPACITY_MULTIPLIER[new]))
                self._record(current, new, atom, t)
                current = EnforcementState(customer_id, new, t, atom)
                self.states[customer_id] = current
        return current, actions

    def _record(self, old: EnforcementState, new: str, cause: str, t: float) -> None:
        if self.ledger is None:
            return
        self.ledger.append(
            "enforcement_event",
            {"customer_id": old.customer_id, "from": old.state, "to": new, "cause": cause},
            t,
            old.customer_id,
            "detailed",
        )


def _action_for(old: str, new: str) -> str:
    if STATES.index(new) < STATES.index(old):
        return "restore"
    return {"flagged": "flag", "throttled": "throttle", "suspended": "suspend", "terminated": "terminate"}[new]


def apply_enforcement(record: UsageRecord, state: EnforcementState) -> UsageRecord:
    """Scale an allocation by the capacity multiplier of the customer's state."""
    return dataclasses.replace(record, capacity_multiplier=record.capacity_multiplier * CAPACITY_MULTIPLIER[state.state])


# -- attestation -------------------------------------------------------------


@dataclass(frozen=True)
class AttestedClaim:
    key_id: str
    claim_kind: str
    payload: str
    mac: str

    def __post_init__(self):
        if self.claim_kind not in CLAIM_KINDS:
            raise ValueError(f"unknown claim kind {self.claim_kind!r}")

    def to_dict(self) -> dict:
        return {"key_id": self.key_id, "claim_kind": self.claim_kind, "payload": self.payload, "mac": self.mac}


@dataclass(frozen=True)
class AttestationResult:
    accepted: bool
    content: Optional[dict]
    reason: str = ""


def _mac(key: bytes, kind: str, payload: str) -> str:
    return hmac.new(key, kind.encode() + b"\x00" + payload.encode("utf-8", "surrogateescape"), hashlib.sha256).hexdigest()


def sign_claim(key: bytes, key_id: str, claim_kind: str, content: Mapping) -> AttestedClaim:
    """Customer-side helper standing in for an enclave producing a quote."""
    payload = serial.dumps(dict(content))
    return AttestedClaim(key_id, claim_kind, payload, _mac(key, claim_kind, payload))


def verify_attested_claim(claim: AttestedClaim, keys: Mapping[str, bytes]) -> AttestationResult:
    if claim.key_id not in keys:
        raise UnknownKey(claim.key_id)
    expected = _mac(keys[claim.key_id], claim.claim_kind, claim.payload)
    if not hmac.compare_digest(expected, claim.mac):
        return AttestationResult(False, None, "mac_invalid")
    try:
        content = serial.loads(claim.payload)
    except ValueError:
        return AttestationResult(False, None, "payload_unparseable")
    return AttestationResult(True, content)


def cross_check_ops_claim(content: Mapping, estimate: ComputeEstimate, tolerance: float = 0.1) -> str:
    """``mismatch`` when claimed ops differ from the estimate by more than ``tolerance``."""
    claimed = float(content["ops"])
    ref = float(estimate.ops_point)
    if ref == 0.0:
        return "match" if claimed == 0.0 else "mismatch"
    return "mismatch" if abs(claimed - ref) / ref > tolerance else "match"
