"""Scenario files and the end-to-end pipeline.

A scenario is a YAML document (``.yaml``/``.yml``) or its line-delimited
JSON variant (``.jsonl``: one object per line, each carrying a
``"section"`` key).  See ``docs/scenario-format.md`` for the grammar.

The pipeline runs generate -> account -> classify -> kyc -> oversee ->
federate in that order and writes every artifact with the canonical
encoding from :mod:`compute_oversight.serial`, so identical inputs give
byte-identical output directories.
"""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
import yaml

from . import serial
from .accounting import (
    ComputeEstimate,
    ComputeThresholds,
    ReportableEvent,
    UsageRecord,
    check_thresholds,
    empirical_estimate,
    theoretical_budget,
    usage_record_for_trace,
)
from .classify import (
    ClassifierModel,
    Declaration,
    classify_workload,
    extract_features,
    fit_classifier,
    labeled_corpus,
    reconcile,
)
from .federation import (
    EPOCH_S,
    ProviderState,
    SharedSalt,
    build_digest,
    epoch_window,
    epochs_covering,
    merge_and_detect,
)
from .kyc import CustomerAccount, EntityList, KycRegistry, VerificationIncomplete
from .ledger import KINDS, Ledger, QueryFilter, RetentionPolicy
from .oversight import (
    AttestedClaim,
    Overseer,
    Signals,
    cross_check_ops_claim,
    sign_claim,
    verify_attested_claim,
)
from .telemetry import (
    DEFAULT_ACCELERATOR,
    OBFUSCATIONS,
    WORKLOAD_CLASSES,
    AcceleratorSpec,
    ClusterConfig,
    NodeConfig,
    TelemetryTrace,
    WorkloadSpec,
    generate_trace,
    provider_view,
    write_trace,
)

STAGES = ("simulate", "account", "classify", "kyc", "oversee", "federate")
SUBCOMMAND_STAGES = {
    "simulate": ("simulate",),
    "account": ("simulate", "account"),
    "classify": ("simulate", "account", "classify"),
    "kyc": ("kyc",),
    "federate": ("simulate", "account", "federate"),
    "report": STAGES,
}

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_ALERT = 3

CLASSIFIER_TRAINING_PER_CLASS = 40
CLASSIFIER_TRAINING_SEED = 1


class ScenarioError(ValueError):
    """Parse or validation failure, located by line and/or field path."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None, source: str = ""):
        self.message = message
        self.line = line
        self.field = field
        self.source = source
        where = [source] if source else []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class ScheduledWorkload:
    spec: WorkloadSpec
    start_s: float
    provider_id: str
    nodes: int


@dataclass(frozen=True)
class Directive:
    customer_id: str
    kind: str  # suspend | resolve
    t: float


@dataclass(frozen=True)
class ClaimSpec:
    """An attested claim the scenario's customer submits.

    The runner signs ``content`` with ``key``; ``tamper`` flips one bit of
    the payload after signing.
    """

    customer_id: str
    workload_id: str
    claim_kind: str
    content: Mapping[str, Any]
    key: bytes
    tamper: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    providers: tuple[ClusterConfig, ...]
    accounts: tuple[CustomerAccount, ...]
    schedule: tuple[ScheduledWorkload, ...]
    declarations: tuple[Declaration, ...] = ()
    entity_list: EntityList = EntityList()
    thresholds: ComputeThresholds = ComputeThresholds()
    retention: RetentionPolicy = RetentionPolicy()
    directives: tuple[Directive, ...] = ()
    claims: tuple[ClaimSpec, ...] = ()
    legal_holds: tuple[str, ...] = ()
    warrant_customers: tuple[str, ...] = ()
    sample_interval_s: float = 60.0
    peak_window_s: Optional[float] = None
    epoch_s: float = EPOCH_S
    assumed_utilization: float = 0.34
    attribution: str = "workload"

    def provider(self, provider_id: str) -> ClusterConfig:
        for p in self.providers:
            if p.provider_id == provider_id:
                return p
        raise KeyError(provider_id)


# -- parsing -----------------------------------------------------------------


def _line_index(node, path: tuple = (), out: Optional[dict] = None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _line_index(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            p = path + (i,)
            out[p] = v.start_mark.line + 1
            _line_index(v, p, out)
    return out


class _Reader:
    """Typed field access that reports failures by path and line."""

    def __init__(self, source: str, lines: Mapping[tuple, int]):
        self.source = source
        self.lines = lines

    def fail(self, path: tuple, msg: str):
        line = None
        for k in range(len(path), -1, -1):
            if path[:k] in self.lines:
                line = self.lines[path[:k]]
                break
        raise ScenarioError(msg, line, _fmt_path(path), self.source)

    def get(self, d: Any, path: tuple, key: str, kind, default: Any = ...):
        if not isinstance(d, Mapping):
            self.fail(path, "expected a mapping")
        if key not in d or d[key] is None:
            if default is ...:
                self.fail(path + (key,), "required field missing")
            return default
        v = d[key]
        p = path + (key,)
        try:
            if kind is float:
                if isinstance(v, bool):
                    raise ValueError
                v = float(v)
                if not math.isfinite(v):
                    raise ValueError
            elif kind is int:
                if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                    raise ValueError
                v = int(v)
            elif kind is str:
                if not isinstance(v, (str, int)) or isinstance(v, bool):
                    raise ValueError
                v = str(v)
            elif kind is bool:
                if not isinstance(v, bool):
                    raise ValueError
            elif kind is list:
                if not isinstance(v, list):
                    raise ValueError
            elif kind is dict:
                if not isinstance(v, Mapping):
                    raise ValueError
        except (TypeError, ValueError):
            self.fail(p, f"expected {kind.__name__}, got {v!r}")
        return v


def _fmt_path(path: tuple) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", source=str(path)) from exc
    if path.suffix == ".jsonl":
        doc, lines = _parse_jsonl(text, str(path))
    else:
        doc, lines = _parse_yaml(text, str(path))
    return scenario_from_dict(doc, lines, str(path))


def _parse_yaml(text: str, source: str) -> tuple[dict, dict]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(
            f"YAML parse error: {getattr(exc, 'problem', exc)}",
            None if mark is None else mark.line + 1,
            source=source,
        ) from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping", 1, source=source)
    return doc, _line_index(node)


LIST_SECTIONS = ("providers", "accounts", "schedule", "declarations", "directives", "claims", "accelerators")
MAP_SECTIONS = ("thresholds", "entity_list", "policies")


def _parse_jsonl(text: str, source: str) -> tuple[dict, dict]:
    doc: dict[str, Any] = {}
    lines: dict[tuple, int] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"JSON parse error: {exc.msg}", n, source=source) from exc
        if not isinstance(obj, dict) or "section" not in obj:
            raise ScenarioError("each line must be an object with a 'section' key", n, source=source)
        section = obj.pop("section")
        if section == "scenario":
            for k, v in obj.items():
                doc[k] = v
                lines[(k,)] = n
        elif section in LIST_SECTIONS:
            items = doc.setdefault(section, [])
            lines[(section, len(items))] = n
            for k in obj:
                lines[(section, len(items), k)] = n
            items.append(obj)
        elif section in MAP_SECTIONS:
            doc.setdefault(section, {}).update(obj)
            for k in obj:
                lines[(section, k)] = n
        else:
            raise ScenarioError(f"unknown section {section!r}", n, "section", source)
    return doc, lines


def scenario_from_dict(doc: Mapping, lines: Mapping[tuple, int] = {}, source: str = "") -> Scenario:
    r = _Reader(source, lines)
    name = r.get(doc, (), "name", str, "scenario")
    seed = r.get(doc, (), "seed", int)

    catalog = {DEFAULT_ACCELERATOR.id: DEFAULT_ACCELERATOR}
    for i, a in enumerate(r.get(doc, (), "accelerators", list, [])):
        p = ("accelerators", i)
        try:
            spec = AcceleratorSpec(
                id=r.get(a, p, "id", str),
                peak_ops_per_sec_by_precision={
                    str(k): float(v) for k, v in r.get(a, p, "peak_ops_per_sec_by_precision", dict).items()
                },
                mem_bandwidth_bytes_per_sec=r.get(a, p, "mem_bandwidth_bytes_per_sec", float),
                idle_power_watts=r.get(a, p, "idle_power_watts", float),
                peak_power_watts=r.get(a, p, "peak_power_watts", float),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            r.fail(p, str(exc))
        catalog[spec.id] = spec

    providers = []
    for i, d in enumerate(r.get(doc, (), "providers", list, [])):
        p = ("providers", i)
        acc_id = r.get(d, p, "accelerator", str, DEFAULT_ACCELERATOR.id)
        if acc_id not in catalog:
            r.fail(p + ("accelerator",), f"unknown accelerator {acc_id!r}")
        try:
            providers.append(
                ClusterConfig(
                    node_count=r.get(d, p, "node_count", int),
                    node=NodeConfig(
                        catalog[acc_id],
                        r.get(d, p, "accel_per_node", int),
                        r.get(d, p, "intra_node_bandwidth_bits_per_sec", float, 7.2e12),
                    ),
                    inter_node_bandwidth_bits_per_sec=r.get(d, p, "inter_node_bandwidth_bits_per_sec", float),
                    provider_id=r.get(d, p, "provider_id", str),
                )
            )
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            r.fail(p, str(exc))
    provider_ids = [c.provider_id for c in providers]
    if len(set(provider_ids)) != len(provider_ids):
        r.fail(("providers",), "duplicate provider_id")

    accounts = []
    for i, d in enumerate(r.get(doc, (), "accounts", list, [])):
        p = ("accounts", i)
        r.get(d, p, "customer_id", str)
        r.get(d, p, "legal_name", str)
        r.get(d, p, "beneficial_owner_ids", list, [])
        for j, doc_ in enumerate(r.get(d, p, "id_documents", list, [])):
            r.get(doc_, p + ("id_documents", j), "kind", str)
            r.get(doc_, p + ("id_documents", j), "checksum", str)
        r.get(d, p, "is_foreign", bool, False)
        try:
            accounts.append(CustomerAccount.from_dict(d))
        except ValueError as exc:
            r.fail(p, str(exc))
    account_ids = {a.customer_id for a in accounts}
    if len(account_ids) != len(accounts):
        r.fail(("accounts",), "duplicate customer_id")

    schedule = []
    for i, d in enumerate(r.get(doc, (), "schedule", list, [])):
        p = ("schedule", i)
        cid = r.get(d, p, "customer_id", str)
        if cid not in account_ids:
            r.fail(p + ("customer_id",), f"unknown customer {cid!r}")
        prov = r.get(d, p, "provider", str)
        if prov not in provider_ids:
            r.fail(p + ("provider",), f"unknown provider {prov!r}")
        cluster = providers[provider_ids.index(prov)]
        nodes = r.get(d, p, "nodes", int, cluster.node_count)
        if not 1 <= nodes <= cluster.node_count:
            r.fail(p + ("nodes",), f"must lie in [1, {cluster.node_count}]")
        cls = r.get(d, p, "class", str)
        if cls not in WORKLOAD_CLASSES:
            r.fail(p + ("class",), f"unknown class {cls!r}")
        obf = r.get(d, p, "obfuscation", str, "none")
        if obf not in OBFUSCATIONS:
            r.fail(p + ("obfuscation",), f"unknown obfuscation {obf!r}")
        mix = r.get(d, p, "precision_mix", dict)
        for tag in mix:
            if tag not in cluster.node.accelerator.peak_ops_per_sec_by_precision:
                r.fail(p + ("precision_mix", tag), "precision not supported by the provider's accelerator")
        try:
            spec = WorkloadSpec(
                workload_class=cls,
                duration_s=r.get(d, p, "duration_s", float),
                target_utilization=r.get(d, p, "target_utilization", float),
                precision_mix={str(k): float(v) for k, v in mix.items()},
                obfuscation=obf,
                customer_id=cid,
                workload_id=r.get(d, p, "workload_id", str, f"w{i}"),
            )
        except ValueError as exc:
            r.fail(p, str(exc))
        schedule.append(ScheduledWorkload(spec, r.get(d, p, "start_s", float, 0.0), prov, nodes))
    wids = [w.spec.workload_id for w in schedule]
    if len(set(wids)) != len(wids):
        r.fail(("schedule",), "duplicate workload_id")

    declarations = []
    for i, d in enumerate(r.get(doc, (), "declarations", list, [])):
        p = ("declarations", i)
        cid = r.get(d, p, "customer_id", str)
        if cid not in account_ids:
            r.fail(p + ("customer_id",), f"unknown customer {cid!r}")
        try:
            declarations.append(
                Declaration(
                    cid,
                    r.get(d, p, "declared_class", str),
                    r.get(d, p, "declared_max_ops", float),
                    r.get(d, p, "t", float, 0.0),
                )
            )
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            r.fail(p, str(exc))

    ent = r.get(doc, (), "entity_list", dict, {})
    for i, e in enumerate(r.get(ent, ("entity_list",), "entries", list, [])):
        r.get(e, ("entity_list", "entries", i), "name", str)
    entity_list = EntityList.from_dict(ent) if ent else EntityList()

    th = r.get(doc, (), "thresholds", dict, {})
    try:
        thresholds = ComputeThresholds(
            **{
                k: r.get(th, ("thresholds",), k, float)
                for k in (
                    "training_ops_threshold",
                    "cluster_rate_threshold",
                    "cluster_fabric_threshold_bits_per_sec",
                    "reference_duration_s",
                )
                if k in th
            }
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        r.fail(("thresholds",), str(exc))
    unknown = set(th) - {
        "training_ops_threshold",
        "cluster_rate_threshold",
        "cluster_fabric_threshold_bits_per_sec",
        "reference_duration_s",
    }
    if unknown:
        r.fail(("thresholds", sorted(unknown)[0]), "unknown threshold")

    pol = r.get(doc, (), "policies", dict, {})
    ret = r.get(pol, ("policies",), "retention", dict, {})
    for k in ret:
        if k not in KINDS:
            r.fail(("policies", "retention", k), "unknown record kind")
    retention = RetentionPolicy({**RetentionPolicy().durations, **{k: float(v) for k, v in ret.items()}})
    legal_holds = tuple(str(x) for x in r.get(pol, ("policies",), "legal_holds", list, []))
    warrants = tuple(str(x) for x in r.get(pol, ("policies",), "warrant_customers", list, []))

    directives = []
    for i, d in enumerate(r.get(doc, (), "directives", list, [])):
        p = ("directives", i)
        cid = r.get(d, p, "customer_id", str)
        if cid not in account_ids:
            r.fail(p + ("customer_id",), f"unknown customer {cid!r}")
        kind = r.get(d, p, "kind", str)
        if kind not in ("suspend", "resolve"):
            r.fail(p + ("kind",), "must be 'suspend' or 'resolve'")
        directives.append(Directive(cid, kind, r.get(d, p, "t", float, 0.0)))

    claims = []
    for i, d in enumerate(r.get(doc, (), "claims", list, [])):
        p = ("claims", i)
        cid = r.get(d, p, "customer_id", str)
        if cid not in account_ids:
            r.fail(p + ("customer_id",), f"unknown customer {cid!r}")
        wid = r.get(d, p, "workload_id", str)
        if wid not in wids:
            r.fail(p + ("workload_id",), f"unknown workload {wid!r}")
        kind = r.get(d, p, "claim_kind", str)
        content = r.get(d, p, "content", dict)
        if kind == "ops_consumed":
            r.get(content, p + ("content",), "ops", float)
        key = r.get(d, p, "key", str)
        try:
            key_bytes = bytes.fromhex(key)
        except ValueError:
            r.fail(p + ("key",), "key must be hex")
        claims.append(ClaimSpec(cid, wid, kind, dict(content), key_bytes, r.get(d, p, "tamper", bool, False)))

    attribution = r.get(doc, (), "attribution", str, "workload")
    if attribution not in ("workload", "allocation"):
        r.fail(("attribution",), "must be 'workload' or 'allocation'")
    interval = r.get(doc, (), "sample_interval_s", float, 60.0)
    if not interval > 0:
        r.fail(("sample_interval_s",), "must be > 0")
    epoch_s = r.get(doc, (), "epoch_s", float, EPOCH_S)
    if not epoch_s > 0:
        r.fail(("epoch_s",), "must be > 0")
    util = r.get(doc, (), "assumed_utilization", float, 0.34)
    if not 0 <= util <= 1:
        r.fail(("assumed_utilization",), "must lie in [0, 1]")

    return Scenario(
        name=name,
        seed=seed,
        providers=tuple(providers),
        accounts=tuple(accounts),
        schedule=tuple(schedule),
        declarations=tuple(declarations),
        entity_list=entity_list,
        thresholds=thresholds,
        retention=retention,
        directives=tuple(directives),
        claims=tuple(claims),
        legal_holds=legal_holds,
        warrant_customers=warrants,
        sample_interval_s=interval,
        peak_window_s=r.get(doc, (), "peak_window_s", float, None),
        epoch_s=epoch_s,
        assumed_utilization=util,
        attribution=attribution,
    )


def bundled_scenarios() -> dict[str, Path]:
    here = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(here.glob("*.yaml"))}


# -- pipeline ----------------------------------------------------------------


@functools.lru_cache(maxsize=4)
def reference_classifier(seed: int = CLASSIFIER_TRAINING_SEED) -> ClassifierModel:
    """Classifier fitted on desk-scale synthetic traces of every class."""
    return fit_classifier(labeled_corpus(WORKLOAD_CLASSES, CLASSIFIER_TRAINING_PER_CLASS, seed), seed)


def workload_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def epoch_salt(seed: int, epoch: int) -> SharedSalt:
    value = hashlib.sha256(f"federation-salt/{seed}/{epoch}".encode()).digest()
    return SharedSalt(epoch, hashlib.sha256(value).hexdigest()[:16], value)


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    traces: dict[str, TelemetryTrace] = field(default_factory=dict)
    estimates: dict[str, ComputeEstimate] = field(default_factory=dict)
    events: list[ReportableEvent] = field(default_factory=list)
    alerts: list = field(default_factory=list)
    digests: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    ledger: Optional[Ledger] = None


def _write_jsonl(path: Path, objs: Iterable[Any]) -> None:
    serial.write_lines(path, objs)


def run_pipeline(
    scenario: Scenario,
    out_dir: str | Path,
    stages: Sequence[str] = STAGES,
    fmt: str = "jsonl",
    legal_holds: Sequence[str] = (),
) -> RunResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # artifacts of an earlier run into the same directory must not leak in
    (out / "ledger_log.jsonl").unlink(missing_ok=True)
    for sub in ("traces", "reports"):
        if (out / sub).is_dir():
            shutil.rmtree(out / sub)
    ledger = Ledger(out / "ledger_log.jsonl", retention=scenario.retention, salt_seed=f"export/{scenario.seed}".encode())
    th = scenario.thresholds
    res = RunResult(EXIT_OK, {}, ledger=ledger)
    schedule = sorted(scenario.schedule, key=lambda w: (w.start_s, w.spec.workload_id))
    scenario_end = max((w.start_s + w.spec.duration_s for w in schedule), default=0.0)
    identities = {a.customer_id: (a.legal_name, a.jurisdiction) for a in scenario.accounts}

    for cid in sorted(set(legal_holds) | set(scenario.legal_holds)):
        ledger.place_hold(0.0, customer_id=cid, authority="runner")

    # -- simulate
    allocations: dict[str, ClusterConfig] = {}
    for w in schedule:
        prov = scenario.provider(w.provider_id)
        allocations[w.spec.workload_id] = ClusterConfig(
            w.nodes, prov.node, prov.inter_node_bandwidth_bits_per_sec, prov.provider_id
        )
    if "simulate" in stages:
        (out / "traces").mkdir(exist_ok=True)
        for i, w in enumerate(schedule):
            idx = scenario.schedule.index(w)
            tr = generate_trace(
                w.spec,
                allocations[w.spec.workload_id],
                workload_seed(scenario.seed, idx),
                scenario.sample_interval_s,
                w.start_s,
            )
            res.traces[w.spec.workload_id] = tr
            write_trace(out / "traces" / f"{w.spec.workload_id}.jsonl", tr)

    def observed(tr: TelemetryTrace) -> TelemetryTrace:
        return provider_view(tr) if scenario.attribution == "allocation" else tr

    # -- account
    usage: list[UsageRecord] = []
    per_provider: dict[str, dict[str, list[ComputeEstimate]]] = {p.provider_id: {} for p in scenario.providers}
    if "account" in stages:
        catalog = {p.node.accelerator.id: p.node.accelerator for p in scenario.providers}
        theoretical = []
        for w in schedule:
            tr = res.traces[w.spec.workload_id]
            rec = usage_record_for_trace(tr, scenario.assumed_utilization)
            usage.append(rec)
            ledger.append("usage", rec.to_dict(), rec.start_t, rec.customer_id)
            est = empirical_estimate(observed(tr), "fused", scenario.peak_window_s)
            res.estimates[w.spec.workload_id] = est
            ledger.append("estimate", est.to_dict(), est.window[1], est.customer_id)
            per_provider[w.provider_id].setdefault(w.spec.customer_id, []).append(est)
        for pid in sorted(per_provider):
            for cid in sorted({u.customer_id for u in usage if u.cluster_id == pid}):
                recs = [u for u in usage if u.cluster_id == pid and u.customer_id == cid]
                tb = theoretical_budget(recs, catalog, cid)
                theoretical.append({"provider_id": pid, "estimate": tb.to_dict()})
        for p in scenario.providers:
            evs = check_thresholds(per_provider[p.provider_id], p, th)
            for e in evs:
                res.events.append(e)
        _write_jsonl(
            out / "estimates.jsonl",
            [{"workload_id": wid, "estimate": e.to_dict()} for wid, e in sorted(res.estimates.items())]
            + [dict(t, workload_id=None) for t in theoretical],
        )
        _write_jsonl(out / "events.jsonl", (e.to_dict() for e in res.events))

    # -- classify
    outcomes: dict[str, list[str]] = {}
    classified: dict[str, Any] = {}
    attestation_rejected: set[str] = set()
    if "classify" in stages:
        model = reference_classifier()
        (out / "model.json").write_text(model.dumps() + "\n", encoding="utf-8")
        rows = []
        for w in schedule:
            wid = w.spec.workload_id
            result = classify_workload(extract_features(observed(res.traces[wid])), model)
            classified[wid] = result
            decl = _latest_declaration(scenario.declarations, w.spec.customer_id, w.start_s)
            outcome = "undeclared" if decl is None else reconcile(decl, result, res.estimates.get(wid))
            if decl is not None:
                outcomes.setdefault(w.spec.customer_id, []).append(outcome)
            rows.append({"workload_id": wid, "customer_id": w.spec.customer_id, "reconcile": outcome, **result.to_dict()})
            ledger.append(
                "classification",
                {"workload_id": wid, "top_label": result.top_label, "confidence": result.confidence, "reconcile": outcome},
                w.start_s + w.spec.duration_s,
                w.spec.customer_id,
                "detailed",
            )
        claim_rows = []
        keys = {c.customer_id: c.key for c in scenario.claims}
        for c in scenario.claims:
            claim = sign_claim(c.key, c.customer_id, c.claim_kind, c.content)
            if c.tamper:
                b = bytearray(claim.payload.encode())
                b[len(b) // 2] ^= 0x01
                claim = AttestedClaim(claim.key_id, claim.claim_kind, b.decode("utf-8", "surrogateescape"), claim.mac)
            verdict = verify_attested_claim(claim, keys)
            check = None
            if not verdict.accepted:
                attestation_rejected.add(c.customer_id)
            elif c.claim_kind == "ops_consumed" and c.workload_id in res.estimates:
                check = cross_check_ops_claim(verdict.content, res.estimates[c.workload_id])
                outcomes.setdefault(c.customer_id, []).append(check)
            claim_rows.append(
                {
                    "customer_id": c.customer_id,
                    "workload_id": c.workload_id,
                    "claim_kind": c.claim_kind,
                    "accepted": verdict.accepted,
                    "reason": verdict.reason,
                    "cross_check": check,
                }
            )
        _write_jsonl(out / "classifications.jsonl", rows)
        _write_jsonl(out / "claims.jsonl", claim_rows)

    # -- kyc
    tiers: dict[str, str] = {}
    if "kyc" in stages:
        registry = KycRegistry(scenario.accounts, ledger)
        rows = []
        for a in sorted(scenario.accounts, key=lambda a: a.customer_id):
            recs = []
            for w in schedule:
                if w.spec.customer_id == a.customer_id:
                    cl = allocations[w.spec.workload_id]
                    recs.append(
                        UsageRecord(a.customer_id, cl.provider_id, cl.node_count, cl.node.accel_count,
                                    cl.node.accelerator.id, w.start_s, w.start_s + max(w.spec.duration_s, 1.0), 1.0)
                    )
            catalog = {p.node.accelerator.id: p.node.accelerator for p in scenario.providers}
            capacity = theoretical_budget(recs, catalog).peak_rate_ops_per_sec
            try:
                tier, reasons = registry.verify(a.customer_id, capacity, scenario.entity_list, 0.0, th)
            except VerificationIncomplete as exc:
                tier, reasons = "verification_incomplete", [str(exc)]
            tiers[a.customer_id] = tier
            rows.append({"customer_id": a.customer_id, "requested_capacity": capacity, "risk_tier": tier, "reasons": reasons})
        _write_jsonl(out / "kyc.jsonl", rows)

    # -- oversee
    if "oversee" in stages:
        overseer = Overseer(
            sorted(a.customer_id for a in scenario.accounts),
            ledger,
            report_salt=f"reports/{scenario.seed}".encode(),
            warrant_customers=scenario.warrant_customers,
        )
        (out / "reports").mkdir(exist_ok=True)
        rows = []
        n_reports = 0
        for cid in sorted(overseer.states):
            evs = tuple(
                (e, _reported(scenario.declarations, cid, th)) for e in res.events if e.customer_id == cid
            )
            est = next((res.estimates[w.spec.workload_id] for w in schedule if w.spec.customer_id == cid
                        and w.spec.workload_id in res.estimates), None)
            directives = tuple(d.kind for d in scenario.directives if d.customer_id == cid)
            signals = Signals(
                reconcile=tuple(outcomes.get(cid, ())),
                threshold_events=evs,
                kyc_tier=tiers.get(cid),
                directives=directives,
                attestation_rejected=cid in attestation_rejected,
                estimate=est,
            )
            state, actions = overseer.evaluate(cid, signals, scenario_end)
            res.states[cid] = state
            for act in actions:
                if act.report is not None:
                    n_reports += 1
                    (out / "reports" / f"report-{n_reports:04d}.json").write_text(
                        serial.dumps(act.report) + "\n", encoding="utf-8"
                    )
            rows.append({**state.to_dict(), "actions": [a.kind for a in actions]})
        _write_jsonl(out / "enforcement.jsonl", rows)
        res.summary["regulator_reports"] = n_reports

    # -- federate
    if "federate" in stages:
        epoch_estimates: dict[str, list[ComputeEstimate]] = {p.provider_id: [] for p in scenario.providers}
        for w in schedule:
            tr = observed(res.traces[w.spec.workload_id])
            for e in epochs_covering(tr.start_t, tr.end_t, scenario.epoch_s):
                e0, e1 = epoch_window(e, scenario.epoch_s)
                part = tr.slice_time(e0, e1)
                if part.n_steps == 0:
                    continue
                window = min(scenario.peak_window_s or scenario.epoch_s, part.n_steps * part.sample_interval_s)
                epoch_estimates[w.provider_id].append(empirical_estimate(part, "fused", window))
        digests = []
        for e in epochs_covering(0.0 if not schedule else schedule[0].start_s, scenario_end, scenario.epoch_s):
            salt = epoch_salt(scenario.seed, e)
            epoch_digests = [
                build_digest(
                    ProviderState(p.provider_id, identities, epoch_estimates[p.provider_id]),
                    e,
                    salt,
                    scenario.epoch_s,
                )
                for p in sorted(scenario.providers, key=lambda p: p.provider_id)
            ]
            for d in epoch_digests:
                ledger.append("federation_digest", d.to_dict(), epoch_window(e, scenario.epoch_s)[1])
            digests.extend(epoch_digests)
            res.alerts.extend(merge_and_detect(epoch_digests, th))
        res.digests = digests
        _write_jsonl(out / "digests.jsonl", (d.to_dict() for d in digests))
        _write_jsonl(out / "alerts.jsonl", (a.to_dict() for a in res.alerts))

    # -- report
    aggregate = ledger.query("regulator", QueryFilter(aggregate="compute_by_month"), scenario_end).aggregate
    _write_jsonl(out / "regulator_aggregate.jsonl", [aggregate])
    ledger.sweep_retention(scenario_end)
    ledger.export(out / "ledger.jsonl")

    event_counts = {k: 0 for k in ("training_run_over_threshold", "cluster_over_threshold", "rate_over_threshold")}
    for e in res.events:
        event_counts[e.kind] += 1
    res.exit_code = EXIT_ALERT if (res.events or res.alerts) else EXIT_OK
    summary = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "stages": [s for s in STAGES if s in stages],
        "workloads": len(schedule),
        "ground_truth_ops": sum(tr.workload.ground_truth_ops for tr in res.traces.values()),
        "events": event_counts,
        "event_total": len(res.events),
        "structuring_alerts": len(res.alerts),
        "max_alert_provider_count": max((a.provider_count for a in res.alerts), default=0),
        "risk_tiers": dict(sorted(tiers.items())),
        "enforcement": {cid: s.state for cid, s in sorted(res.states.items())},
        "regulator_reports": res.summary.get("regulator_reports", 0),
        "ledger_records": len(ledger),
        "exit_code": res.exit_code,
    }
    res.summary = summary
    if fmt == "text":
        (out / "summary.txt").write_text(format_summary(summary), encoding="utf-8")
    else:
        _write_jsonl(out / "summary.jsonl", [summary])
    return res


def _latest_declaration(decls: Sequence[Declaration], customer_id: str, t: float) -> Optional[Declaration]:
    mine = [d for d in decls if d.customer_id == customer_id and d.t <= t]
    return max(mine, key=lambda d: d.t) if mine else None


def _reported(decls: Sequence[Declaration], customer_id: str, th: ComputeThresholds) -> bool:
    """A customer has reported a threshold-scale run when it declared one."""
    return any(d.customer_id == customer_id and d.declared_max_ops >= th.training_ops_threshold for d in decls)


def format_summary(summary: Mapping) -> str:
    lines = [f"scenario {summary['scenario']} (seed {summary['seed']})"]
    lines.append(f"  stages: {', '.join(summary['stages'])}")
    lines.append(f"  workloads: {summary['workloads']}  ground-truth ops: {summary['ground_truth_ops']}")
    for k, v in summary["events"].items():
        lines.append(f"  {k}: {v}")
    lines.append(
        f"  structuring alerts: {summary['structuring_alerts']}"
        f" (max providers {summary['max_alert_provider_count']})"
    )
    for cid, tier in summary["risk_tiers"].items():
        lines.append(f"  kyc {cid}: {tier}")
    for cid, state in summary["enforcement"].items():
        lines.append(f"  enforcement {cid}: {state}")
    lines.append(f"  regulator reports: {summary['regulator_reports']}")
    lines.append(f"  ledger records: {summary['ledger_records']}")
    lines.append(f"  exit code: {summary['exit_code']}")
    return "\n".join(lines) + "\n"


def run_scenario(path: str | Path, out_dir: str | Path, seed: Optional[int] = None, **kwargs) -> int:
    """Load and run a scenario file; return the process exit code."""
    scenario = load_scenario(path)
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    return run_pipeline(scenario, out_dir, **kwargs).exit_code
