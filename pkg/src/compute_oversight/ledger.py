"""Append-only record keeping with retention, legal holds and tiered access.

Durability model: when a ``path`` is given, every record is written as one
canonical line and flushed before :meth:`Ledger.append_record` returns.  The
file is never rewritten.  Retention purges and legal holds are themselves
appended as ``access_audit`` records, so replaying the file reproduces the
live view exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

from . import serial

KINDS = (
    "usage",
    "estimate",
    "classification",
    "kyc_event",
    "enforcement_event",
    "access_audit",
    "federation_digest",
)
SENSITIVITIES = ("aggregate_ok", "detailed")
REQUESTORS = ("provider_admin", "regulator", "regulator_with_warrant")
AGGREGATES = ("compute_by_month", "count_by_kind")

YEAR_S = 365 * 86400.0
DEFAULT_RETENTION = {
    "usage": 7 * YEAR_S,
    "estimate": 1 * YEAR_S,
    "classification": 1 * YEAR_S,
    "kyc_event": 5 * YEAR_S,
    "enforcement_event": 7 * YEAR_S,
    "access_audit": 7 * YEAR_S,
    "federation_digest": 1 * YEAR_S,
}


class AccessDenied(PermissionError):
    pass


@dataclass(frozen=True)
class LedgerRecord:
    seq: int
    t: float
    kind: str
    payload: str
    customer_id: Optional[str] = None
    sensitivity: str = "aggregate_ok"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")
        if self.sensitivity not in SENSITIVITIES:
            raise ValueError(f"unknown sensitivity {self.sensitivity!r}")

    @property
    def data(self) -> Any:
        return serial.loads(self.payload)

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "t": float(self.t),
            "kind": self.kind,
            "customer_id": self.customer_id,
            "sensitivity": self.sensitivity,
            "payload": self.data,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LedgerRecord":
        return cls(
            seq=int(d["seq"]),
            t=float(d["t"]),
            kind=d["kind"],
            payload=serial.dumps(d["payload"]),
            customer_id=d.get("customer_id"),
            sensitivity=d.get("sensitivity", "aggregate_ok"),
        )


@dataclass(frozen=True)
class RetentionPolicy:
    durations: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_RETENTION))

    def __post_init__(self):
        for kind, d in self.durations.items():
            if kind not in KINDS:
                raise ValueError(f"unknown record kind {kind!r}")
            if not d > 0:
                raise ValueError("retention durations must be > 0")

    def duration(self, kind: str) -> float:
        return self.durations.get(kind, DEFAULT_RETENTION[kind])


@dataclass(frozen=True)
class QueryFilter:
    kinds: Optional[tuple[str, ...]] = None
    customer_id: Optional[str] = None
    start_t: Optional[float] = None
    end_t: Optional[float] = None
    detailed: bool = False
    aggregate: Optional[str] = None

    def __post_init__(self):
        if self.kinds is not None:
            bad = [k for k in self.kinds if k not in KINDS]
            if bad:
                raise ValueError(f"unknown record kinds {bad}")
        if self.aggregate is not None and self.aggregate not in AGGREGATES:
            raise ValueError(f"unknown aggregate {self.aggregate!r}")

    def accepts(self, r: LedgerRecord) -> bool:
        if self.kinds is not None and r.kind not in self.kinds:
            return False
        if self.customer_id is not None and r.customer_id != self.customer_id:
            return False
        if self.start_t is not None and r.t < self.start_t:
            return False
        if self.end_t is not None and r.t >= self.end_t:
            return False
        return True

    def to_dict(self) -> dict:
        return {
            "kinds": None if self.kinds is None else list(self.kinds),
            "customer_id": self.customer_id,
            "start_t": self.start_t,
            "end_t": self.end_t,
            "detailed": self.detailed,
            "aggregate": self.aggregate,
        }


@dataclass(frozen=True)
class QueryResult:
    records: tuple[LedgerRecord, ...]
    aggregate: Optional[dict] = None
    salt_id: Optional[str] = None


def month_of(t: float) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m")


def record_ops(r: LedgerRecord) -> float:
    data = r.data
    if isinstance(data, dict):
        v = data.get("ops_point")
        if isinstance(v, (int, float)):
            return v
    return 0


def aggregate_records(records: Iterable[LedgerRecord], name: str, label=lambda cid: cid) -> dict:
    """Counts and sums over records; ``label`` maps customer ids to group keys."""
    groups: dict[tuple, list] = {}
    for r in records:
        if name == "compute_by_month":
            if r.kind not in ("usage", "estimate"):
                continue
            key = (month_of(r.t), label(r.customer_id) if r.customer_id else None)
            g = groups.setdefault(key, [0, 0])
            g[0] += 1
            g[1] += record_ops(r)
        else:
            key = (r.kind,)
            g = groups.setdefault(key, [0, 0])
            g[0] += 1
    rows = []
    for key in sorted(groups, key=lambda k: tuple("" if x is None else x for x in k)):
        count, total = groups[key]
        if name == "compute_by_month":
            rows.append({"month": key[0], "customer": key[1], "count": count, "ops_sum": total})
        else:
            rows.append({"kind": key[0], "count": count})
    return {"aggregate": name, "rows": rows}


class Ledger:
    """Append-only ledger; single writer, snapshot readers."""

    def __init__(
        self,
        path: str | Path | None = None,
        retention: RetentionPolicy = RetentionPolicy(),
        salt_seed: bytes = b"ledger-export",
    ):
        self.path = Path(path) if path is not None else None
        self.retention = retention
        self._salt_seed = salt_seed
        self._lock = threading.Lock()
        self._log: list[LedgerRecord] = []
        self._live: dict[int, LedgerRecord] = {}
        self._held_customers: set[str] = set()
        self._held_seqs: set[int] = set()
        self._exports = 0
        self._seq = 0
        if self.path is not None:
            if self.path.exists() and self.path.stat().st_size > 0:
                self._replay_file(self.path)
            else:
                with open(self.path, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(serial.dumps({"record": "header", "format_version": serial.FORMAT_VERSION}) + "\n")

    # -- writing ------------------------------------------------------------

    def append_record(self, record: LedgerRecord) -> int:
        """Assign the next sequence number to ``record`` and persist it.

        The ``seq`` carried by ``record`` is ignored.
        """
        with self._lock:
            self._seq += 1
            rec = dataclasses.replace(record, seq=self._seq)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                    fh.write(serial.dumps(rec.to_dict()) + "\n")
                    fh.flush()
            self._apply(rec)
            return rec.seq

    def append(
        self,
        kind: str,
        payload: Any,
        t: float,
        customer_id: Optional[str] = None,
        sensitivity: str = "aggregate_ok",
    ) -> int:
        return self.append_record(LedgerRecord(0, t, kind, serial.dumps(payload), customer_id, sensitivity))

    def _apply(self, rec: LedgerRecord) -> None:
        self._log.append(rec)
        self._live[rec.seq] = rec
        if rec.kind == "access_audit":
            data = rec.data
            action = data.get("action") if isinstance(data, dict) else None
            if action == "retention_purge":
                for s in data["purged_seqs"]:
                    self._live.pop(s, None)
            elif action == "legal_hold":
                if data.get("customer_id") is not None:
                    self._held_customers.add(data["customer_id"])
                for s in data.get("seqs", ()):
                    self._held_seqs.add(s)
            elif action == "legal_hold_release":
                self._held_customers.discard(data.get("customer_id"))
                for s in data.get("seqs", ()):
                    self._held_seqs.discard(s)

    def place_hold(self, t: float, customer_id: Optional[str] = None, seqs: Iterable[int] = (), authority: str = "") -> int:
        return self.append(
            "access_audit",
            {"action": "legal_hold", "customer_id": customer_id, "seqs": sorted(seqs), "authority": authority},
            t,
            customer_id,
            "detailed",
        )

    def release_hold(self, t: float, customer_id: Optional[str] = None, seqs: Iterable[int] = ()) -> int:
        return self.append(
            "access_audit",
            {"action": "legal_hold_release", "customer_id": customer_id, "seqs": sorted(seqs)},
            t,
            customer_id,
            "detailed",
        )

    def is_held(self, r: LedgerRecord) -> bool:
        return r.seq in self._held_seqs or (r.customer_id is not None and r.customer_id in self._held_customers)

    def sweep_retention(self, now: float, policy: Optional[RetentionPolicy] = None) -> int:
        """Purge records older than their retention unless under legal hold."""
        policy = policy or self.retention
        expired = [
            r.seq
            for r in self.records
            if now - r.t > policy.duration(r.kind) and not self.is_held(r)
        ]
        if expired:
            self.append(
                "access_audit",
                {"action": "retention_purge", "purged_seqs": expired, "now": float(now)},
                now,
                None,
                "detailed",
            )
        return len(expired)

    # -- reading ------------------------------------------------------------

    @property
    def records(self) -> tuple[LedgerRecord, ...]:
        with self._lock:
            return tuple(self._live.values())

    @property
    def log(self) -> tuple[LedgerRecord, ...]:
        """Every record ever appended, including purged ones."""
        with self._lock:
            return tuple(self._log)

    def __len__(self) -> int:
        return len(self._live)

    def _next_salt(self) -> tuple[bytes, str]:
        self._exports += 1
        salt = hashlib.sha256(self._salt_seed + self._exports.to_bytes(8, "big")).digest()
        return salt, hashlib.sha256(salt).hexdigest()[:16]

    @staticmethod
    def anonymize(customer_id: str, salt: bytes) -> str:
        return hashlib.sha256(salt + customer_id.encode("utf-8")).hexdigest()[:32]

    def query(self, requestor: str, flt: QueryFilter = QueryFilter(), t: float = 0.0) -> QueryResult:
        """Role-scoped read access; every call leaves an ``access_audit`` record.

        ``regulator`` sees only ``aggregate_ok`` records, with customer ids
        replaced by salted hashes (the salt rotates per query).
        ``regulator_with_warrant`` sees everything about the named customer.
        """
        if requestor not in REQUESTORS:
            raise ValueError(f"unknown requestor {requestor!r}")
        refusal = None
        if requestor == "regulator" and flt.detailed:
            refusal = "detailed records require a warrant"
        elif requestor == "regulator_with_warrant" and flt.customer_id is None:
            refusal = "warrant must name a customer"

        snapshot = self.records
        audit = {"action": "query", "requestor": requestor, "filter": flt.to_dict(), "refused": refusal}
        if refusal is not None:
            self.append("access_audit", audit, t, flt.customer_id, "detailed")
            raise AccessDenied(refusal)

        matched = [r for r in snapshot if flt.accepts(r)]
        if requestor == "regulator":
            salt, salt_id = self._next_salt()
            visible = tuple(
                dataclasses.replace(r, customer_id=self.anonymize(r.customer_id, salt) if r.customer_id else None)
                for r in matched
                if r.sensitivity == "aggregate_ok"
            )
            agg = None
            if flt.aggregate is not None:
                agg = aggregate_records(
                    (r for r in matched if r.sensitivity == "aggregate_ok"),
                    flt.aggregate,
                    lambda cid: self.anonymize(cid, salt),
                )
                agg["salt_id"] = salt_id
            audit["salt_id"] = salt_id
            audit["returned"] = len(visible)
            self.append("access_audit", audit, t, None, "detailed")
            return QueryResult(visible, agg, salt_id)

        agg = aggregate_records(matched, flt.aggregate) if flt.aggregate is not None else None
        audit["returned"] = len(matched)
        self.append("access_audit", audit, t, flt.customer_id, "detailed")
        return QueryResult(tuple(matched), agg)

    # -- export / replay ----------------------------------------------------

    def export_lines(self) -> list[str]:
        lines = [serial.dumps({"record": "header", "format_version": serial.FORMAT_VERSION})]
        lines.extend(serial.dumps(r.to_dict()) for r in self.records)
        return lines

    def export(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.export_lines():
                fh.write(line + "\n")

    def _replay_file(self, path: Path) -> None:
        it = serial.read_lines(path)
        header = next(it, None)
        if header is None or header.get("record") != "header":
            raise ValueError(f"{path}: missing ledger header")
        for d in it:
            rec = LedgerRecord.from_dict(d)
            if rec.seq != self._seq + 1:
                raise ValueError(f"{path}: sequence gap or reorder at seq {rec.seq}")
            self._seq = rec.seq
            self._apply(rec)

    @classmethod
    def replay(cls, path: str | Path, **kwargs) -> "Ledger":
        """Rebuild a ledger from its append log."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        return cls(path, **kwargs)
