"""Cross-provider exchange of salted per-customer compute digests.

Each provider publishes, per epoch, one entry per customer identity:
a 128-bit salted hash of the normalized legal identity, the customer's
peak compute rate and its ops in the epoch.  Merging the digests of all
providers reveals customers whose combined rate crosses a threshold that
no single provider sees crossed.
"""

from __future__ import annotations

import hashlib
import math
import re
import unicodedata
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import serial
from .accounting import ComputeEstimate, ComputeThresholds

EPOCH_S = 86400.0
RATE_FLOOR = 1e16
TAG_BYTES = 16

LEGAL_SUFFIXES = frozenset(
    {
        "inc", "incorporated", "llc", "ltd", "limited", "corp", "corporation", "co",
        "company", "plc", "gmbh", "ag", "sa", "sas", "srl", "bv", "nv", "pty", "oy", "ab", "kk",
    }
)


class StaleSalt(ValueError):
    pass


class FederationMismatch(ValueError):
    """Digests from different epochs or salts cannot be merged."""


def normalize_identity(legal_name: str, jurisdiction: str = "") -> str:
    """Canonical identity string hashed into customer tags.

    Lowercase, strip diacritics and punctuation, collapse whitespace, drop
    trailing legal-form suffixes, then append the upper-cased jurisdiction.
    """
    s = unicodedata.normalize("NFKD", legal_name)
    s = "".join(ch for ch in s if not unicodedata.combining(ch)).casefold()
    s = re.sub(r"[^\w\s]", " ", s)
    words = s.split()
    while len(words) > 1 and words[-1] in LEGAL_SUFFIXES:
        words.pop()
    return " ".join(words) + "|" + jurisdiction.strip().upper()


def customer_tag(salt: bytes, identity: str) -> str:
    return hashlib.sha256(salt + identity.encode("utf-8")).digest()[:TAG_BYTES].hex()


@dataclass(frozen=True)
class SharedSalt:
    epoch: int
    salt_id: str
    value: bytes


def epoch_window(epoch: int, epoch_s: float = EPOCH_S) -> tuple[float, float]:
    return epoch * epoch_s, (epoch + 1) * epoch_s


def epochs_covering(start_t: float, end_t: float, epoch_s: float = EPOCH_S) -> range:
    if end_t <= start_t:
        return range(0)
    return range(int(math.floor(start_t / epoch_s)), int(math.ceil(end_t / epoch_s)))


@dataclass(frozen=True)
class ProviderState:
    """What a provider contributes: who its customers are and what they used.

    ``identities`` maps customer id to ``(legal_name, jurisdiction)``.
    """

    provider_id: str
    identities: Mapping[str, tuple[str, str]]
    estimates: Sequence[ComputeEstimate]


@dataclass(frozen=True)
class DigestEntry:
    customer_tag: str
    rate_ops_per_sec: float
    cum_ops_epoch: float

    def __post_init__(self):
        if self.rate_ops_per_sec < 0 or self.cum_ops_epoch < 0:
            raise ValueError("digest rates and ops must be >= 0")


@dataclass(frozen=True)
class FederationDigest:
    epoch: int
    provider_id: str
    entries: tuple[DigestEntry, ...]
    salt_id: str

    def __post_init__(self):
        tags = [e.customer_tag for e in self.entries]
        if len(tags) != len(set(tags)):
            raise ValueError("one entry per customer tag")

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "provider_id": self.provider_id,
            "salt_id": self.salt_id,
            "entries": [
                {
                    "customer_tag": e.customer_tag,
                    "rate_ops_per_sec": float(e.rate_ops_per_sec),
                    "cum_ops_epoch": e.cum_ops_epoch,
                }
                for e in self.entries
            ],
        }

    def dumps(self) -> str:
        return serial.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "FederationDigest":
        return cls(
            epoch=int(d["epoch"]),
            provider_id=str(d["provider_id"]),
            entries=tuple(
                DigestEntry(str(e["customer_tag"]), float(e["rate_ops_per_sec"]), e["cum_ops_epoch"])
                for e in d["entries"]
            ),
            salt_id=str(d["salt_id"]),
        )

    @classmethod
    def loads(cls, text: str) -> "FederationDigest":
        return cls.from_dict(serial.loads(text))


def build_digest(
    state: ProviderState,
    epoch: int,
    salt: SharedSalt,
    epoch_s: float = EPOCH_S,
    rate_floor: float = RATE_FLOOR,
) -> FederationDigest:
    """Summarize one provider's customers for ``epoch``.

    A customer's rate is the sum of the peak rates of its estimates that
    overlap the epoch (concurrent allocations add up); its ops are each
    estimate's ops pro-rated by overlap.  Customer ids sharing a normalized
    identity collapse into one entry.  Entries with rate below
    ``rate_floor`` are omitted.
    """
    if salt.epoch != epoch:
        raise StaleSalt(f"salt {salt.salt_id!r} is for epoch {salt.epoch}, not {epoch}")
    e0, e1 = epoch_window(epoch, epoch_s)
    rates: dict[str, float] = {}
    ops: dict[str, float] = {}
    for est in state.estimates:
        lo, hi = max(est.window[0], e0), min(est.window[1], e1)
        if hi <= lo:
            continue
        if est.customer_id not in state.identities:
            raise KeyError(f"no identity on file for customer {est.customer_id!r}")
        name, jurisdiction = state.identities[est.customer_id]
        tag = customer_tag(salt.value, normalize_identity(name, jurisdiction))
        frac = (hi - lo) / est.duration_s
        share = est.ops_point if frac == 1.0 else est.ops_point * frac
        rates[tag] = rates.get(tag, 0.0) + est.peak_rate_ops_per_sec
        ops[tag] = ops.get(tag, 0) + share
    entries = tuple(
        DigestEntry(tag, rates[tag], ops[tag]) for tag in sorted(rates) if rates[tag] >= rate_floor
    )
    return FederationDigest(epoch, state.provider_id, entries, salt.salt_id)


@dataclass(frozen=True)
class StructuringAlert:
    customer_tag: str
    epoch: int
    combined_rate: float
    provider_count: int
    shares: tuple[tuple[str, float], ...]
    combined_ops: float
    reasons: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "customer_tag": self.customer_tag,
            "epoch": self.epoch,
            "combined_rate": float(self.combined_rate),
            "combined_ops": self.combined_ops,
            "provider_count": self.provider_count,
            "shares": [{"provider_id": p, "rate_ops_per_sec": float(r)} for p, r in self.shares],
            "reasons": list(self.reasons),
        }


def merge_and_detect(digests: Sequence[FederationDigest], th: ComputeThresholds) -> list[StructuringAlert]:
    """Flag customers split across providers to stay under a threshold.

    A tag is a candidate when at least two providers report it and no single
    share is reportable on its own: every rate is below the per-provider
    reporting rate (the smaller of the cluster rate threshold and the
    implied training rate) and every epoch ops share is below the training
    threshold.  A candidate alerts for each limit its combined rate or ops
    reach.
    """
    if not digests:
        return []
    epochs = {d.epoch for d in digests}
    salts = {d.salt_id for d in digests}
    if len(epochs) != 1 or len(salts) != 1:
        raise FederationMismatch(f"epochs {sorted(epochs)} / salts {sorted(salts)} differ")
    epoch = digests[0].epoch
    rate_cap = min(th.cluster_rate_threshold, th.implied_training_rate)

    by_tag: dict[str, list[tuple[str, DigestEntry]]] = {}
    for d in sorted(digests, key=lambda d: d.provider_id):
        for e in d.entries:
            by_tag.setdefault(e.customer_tag, []).append((d.provider_id, e))

    alerts = []
    for tag in sorted(by_tag):
        parts = by_tag[tag]
        if len(parts) < 2:
            continue
        rates = [e.rate_ops_per_sec for _, e in parts]
        if max(rates) >= rate_cap or max(e.cum_ops_epoch for _, e in parts) >= th.training_ops_threshold:
            continue  # some provider already sees a reportable share
        combined = math.fsum(rates)
        combined_ops = sum(e.cum_ops_epoch for _, e in parts)
        reasons = [
            name
            for name, reached in (
                ("cluster_rate", combined >= th.cluster_rate_threshold),
                ("implied_training_rate", combined >= th.implied_training_rate),
                ("cumulative_ops", combined_ops >= th.training_ops_threshold),
            )
            if reached
        ]
        if reasons:
            alerts.append(
                StructuringAlert(
                    customer_tag=tag,
                    epoch=epoch,
                    combined_rate=combined,
                    provider_count=len(parts),
                    shares=tuple((p, e.rate_ops_per_sec) for p, e in parts),
                    combined_ops=combined_ops,
                    reasons=tuple(reasons),
                )
            )
    return alerts


def min_providers_to_evade(required_rate: float, per_provider_cap: float) -> int:
    """Fewest providers over which ``required_rate`` can be split with every share below the cap."""
    if per_provider_cap <= 0:
        raise ValueError("cap must be > 0")
    n = math.ceil(required_rate / per_provider_cap)
    # shares must be strictly below the cap
    if required_rate / n >= per_provider_cap:
        n += 1
    return max(n, 1)
