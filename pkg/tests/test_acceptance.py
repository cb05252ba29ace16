"""Acceptance suite: nine end-to-end criteria at their stated tolerances.

Each criterion prints one ``PASS``/``FAIL`` line.  Run standalone with
``python3 tests/test_acceptance.py`` or through pytest (the lines are
repeated in the terminal summary).
"""

from __future__ import annotations

import filecmp
import itertools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from compute_oversight.accounting import (
    ComputeThresholds,
    UsageRecord,
    cluster_over_threshold,
    empirical_estimate,
    theoretical_budget,
)
from compute_oversight.classify import (
    accuracy,
    classify_workload,
    extract_features,
    fit_classifier,
    labeled_corpus,
)
from compute_oversight.federation import (
    customer_tag,
    epoch_window,
    epochs_covering,
    normalize_identity,
)
from compute_oversight.ledger import AccessDenied, Ledger, QueryFilter, month_of
from compute_oversight.oversight import POLICY_TABLE, SIGNALS, STATES, TRANSITION_GRAPH, next_state
from compute_oversight.scenario import (
    bundled_scenarios,
    epoch_salt,
    load_scenario,
    reference_classifier,
    run_pipeline,
)
from compute_oversight.telemetry import (
    DEFAULT_ACCELERATOR,
    WORKLOAD_CLASSES,
    AcceleratorSpec,
    ClusterConfig,
    NodeConfig,
    generate_trace,
    sample_trace,
    sample_workload,
)

RESULTS: dict[int, tuple[bool, str]] = {}

CLASSIFIER_CLASSES = ("design", "pretraining", "enhancement", "inference", "hpc")


def _record(n: int, title: str, ok: bool, detail: str, elapsed: float) -> None:
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} | {detail} | {elapsed:.2f}s"
    RESULTS[n] = (ok, line)
    print(line)


def criterion_1():
    t0 = time.perf_counter()
    # 60,000 accelerators, 90 days, 34% utilization, 6.3e14 OP/s peak
    acc = AcceleratorSpec("ref-accel", {"bf16": 6.3e14}, 3.35e12, 100.0, 700.0)
    r = UsageRecord("lab", "p", 60_000, 1, "ref-accel", 0.0, 90 * 86400.0, 0.34)
    e = theoretical_budget([r], {"ref-accel": acc})
    elapsed = time.perf_counter() - t0
    err = abs(e.ops_point - 1e26) / 1e26
    ok = err <= 0.05 and elapsed < 1.0
    return ok, f"budget {e.ops_point:.4e} OP, error {err:.2%} (tol 5%)", elapsed


def _cluster(rate, gbit):
    acc = AcceleratorSpec("c2", {"bf16": 1e15}, 1e12, 100.0, 700.0)
    n = int(round(rate / acc.peak_ops_per_sec))
    return ClusterConfig(n, NodeConfig(acc, 1), gbit * 1e9)


def criterion_2():
    t0 = time.perf_counter()
    th = ComputeThresholds()
    fast = _cluster(1.2e20, 200)
    slow = _cluster(1.2e20, 50)
    assert fast.peak_capacity_ops_per_sec == 1.2e20
    a, b = cluster_over_threshold(fast, th), cluster_over_threshold(slow, th)
    ok = a is True and b is False
    return ok, f"200 Gbit/s -> {a}, 50 Gbit/s -> {b}", time.perf_counter() - t0


def criterion_3():
    t0 = time.perf_counter()
    exact = power_ok = mem_ok = 0
    worst_power = 0.0
    for i in range(100):
        cls = WORKLOAD_CLASSES[i % len(WORKLOAD_CLASSES)]
        tr = sample_trace(cls, 1000 + i)
        gt = tr.workload.ground_truth_ops
        exact += empirical_estimate(tr, "counters").ops_point == gt
        p = empirical_estimate(tr, "power_proxy", power_calibration=tr.workload.precision_mix)
        rel = abs(p.ops_point - gt) / gt
        worst_power = max(worst_power, rel)
        power_ok += rel <= 0.15
        m = empirical_estimate(tr, "mem_bw_proxy")
        mem_ok += m.ops_lower <= gt <= m.ops_upper
    elapsed = time.perf_counter() - t0
    ok = exact == power_ok == mem_ok == 100 and elapsed < 30
    detail = f"counters exact {exact}/100, power within 15% {power_ok}/100 (worst {worst_power:.1%}), mem-bw brackets {mem_ok}/100"
    return ok, detail, elapsed


def criterion_4():
    t0 = time.perf_counter()
    model = fit_classifier(labeled_corpus(CLASSIFIER_CLASSES, 40, seed=1), seed=1)
    held_out = labeled_corpus(CLASSIFIER_CLASSES, 40, seed=2)
    acc = accuracy(model, held_out)
    elapsed = time.perf_counter() - t0
    ok = len(held_out) == 200 and acc >= 0.95 and elapsed < 60
    return ok, f"held-out accuracy {acc:.3f} on {len(held_out)} traces (need >= 0.95)", elapsed


def criterion_5():
    t0 = time.perf_counter()
    model = reference_classifier()
    modes = ("throttle", "precision_shift", "traffic_shaping")
    confident_wrong = fewer = 0
    for i in range(100):
        seed = 2000 + i
        spec, cluster = sample_workload("pretraining", seed, modes[i % 3])
        dirty = generate_trace(spec, cluster, seed)
        clean = sample_trace("pretraining", seed)
        res = classify_workload(extract_features(dirty), model)
        confident_wrong += res.top_label != "pretraining" and res.confidence >= 0.9
        node_hours = cluster.node_count * dirty.n_steps * dirty.sample_interval_s / 3600.0
        fewer += dirty.workload.ground_truth_ops / node_hours < clean.workload.ground_truth_ops / node_hours
    elapsed = time.perf_counter() - t0
    ok = confident_wrong == 0 and fewer == 100
    return ok, f"confidently wrong {confident_wrong}/100, fewer ops per node-hour {fewer}/100", elapsed


def _brute_force_splits(scenario, runs_traces):
    """Expected structuring alerts from ground truth, by exhaustive subset search.

    A customer identity is split in an epoch when some subset of at least two
    providers has combined true rate (or ops) at or above a limit while every
    provider's share of that identity stays below the per-provider reporting
    level.
    """
    th = scenario.thresholds
    cap = min(th.cluster_rate_threshold, th.implied_training_rate)
    idents = {a.customer_id: normalize_identity(a.legal_name, a.jurisdiction) for a in scenario.accounts}
    expected = set()
    shares: dict[tuple[int, str], dict[str, list[float]]] = {}
    for w in scenario.schedule:
        tr = runs_traces[w.spec.workload_id]
        for e in epochs_covering(tr.start_t, tr.end_t, scenario.epoch_s):
            part = tr.slice_time(*epoch_window(e, scenario.epoch_s))
            if part.n_steps == 0:
                continue
            ops = part.total_ops()
            rate = ops / (part.n_steps * part.sample_interval_s)
            slot = shares.setdefault((e, idents[w.spec.customer_id]), {}).setdefault(w.provider_id, [0.0, 0])
            slot[0] += rate
            slot[1] += ops
    for (e, ident), per_provider in shares.items():
        providers = sorted(p for p, (r, _) in per_provider.items() if r >= 1e16)
        if any(per_provider[p][0] >= cap or per_provider[p][1] >= th.training_ops_threshold for p in providers):
            continue
        found = False
        for k in range(2, len(providers) + 1):
            for subset in itertools.combinations(providers, k):
                rate = math.fsum(per_provider[p][0] for p in subset)
                ops = sum(per_provider[p][1] for p in subset)
                if rate >= th.cluster_rate_threshold or rate >= th.implied_training_rate or ops >= th.training_ops_threshold:
                    found = True
                    break
            if found:
                break
        if found:
            expected.add((e, customer_tag(epoch_salt(scenario.seed, e).value, ident)))
    return expected


def criterion_6():
    t0 = time.perf_counter()
    missed = false_alerts = 0
    notes = []
    with tempfile.TemporaryDirectory() as tmp:
        runs = {}
        for name, path in bundled_scenarios().items():
            sc = load_scenario(path)
            res = run_pipeline(sc, Path(tmp) / name, fmt="jsonl")
            runs[name] = res
            got = {(a.epoch, a.customer_tag) for a in res.alerts}
            want = _brute_force_splits(sc, res.traces)
            missed += len(want - got)
            false_alerts += len(got - want)
        s11, s10 = runs["structuring-11"], runs["structuring-10"]
        th = ComputeThresholds()
        sc11 = load_scenario(bundled_scenarios()["structuring-11"])
        share = sc11.providers[0].peak_capacity_ops_per_sec * 0.4
        R = share * len(sc11.providers)
        ceil_ok = math.ceil(R / th.implied_training_rate) == 11
        one_alert = len(s11.alerts) == 1 and s11.alerts[0].provider_count == 11
        s10_rate = [e for e in s10.events if e.kind == "rate_over_threshold"]
        s10_ok = not s10.alerts and len(s10_rate) > 0
        notes.append(f"R/c {R / th.implied_training_rate:.2f}")
    elapsed = time.perf_counter() - t0
    ok = ceil_ok and one_alert and s10_ok and missed == 0 and false_alerts == 0
    detail = (
        f"structuring-11 alerts {len(s11.alerts)} (providers {s11.alerts[0].provider_count if s11.alerts else 0}), "
        f"{notes[0]}; structuring-10 alerts {len(s10.alerts)}, rate events {len(s10_rate)}; "
        f"brute force missed {missed}, false {false_alerts}"
    )
    return ok, detail, elapsed


def criterion_7():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    checks = []
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "ledger.jsonl"
        led = Ledger(path)
        truth = []
        kinds = ("usage", "estimate", "classification", "kyc_event")
        for _ in range(1000):
            kind = kinds[int(rng.integers(len(kinds)))]
            t = float(rng.uniform(0, 2 * 365 * 86400))
            cid = f"c{int(rng.integers(5))}"
            sens = "detailed" if rng.random() < 0.3 else "aggregate_ok"
            ops = int(rng.integers(0, 2**62)) * int(rng.integers(1, 2**20))
            led.append(kind, {"ops_point": ops}, t, cid, sens)
            truth.append((kind, t, cid, sens, ops))

        brute: dict = {}
        for kind, t, cid, sens, ops in truth:
            if kind in ("usage", "estimate"):
                g = brute.setdefault((month_of(t), cid), [0, 0])
                g[0] += 1
                g[1] += ops
        rows = led.query("provider_admin", QueryFilter(aggregate="compute_by_month")).aggregate["rows"]
        checks.append({(r["month"], r["customer"]): [r["count"], r["ops_sum"]] for r in rows} == brute)

        # the regulator's export only covers aggregate_ok records
        reg_rows = led.query("regulator", QueryFilter(aggregate="compute_by_month")).aggregate["rows"]
        reg_total = sum(r["ops_sum"] for r in reg_rows)
        checks.append(reg_total == sum(o for k, _, _, s, o in truth if k in ("usage", "estimate") and s == "aggregate_ok"))

        before = len(led.log)
        try:
            led.query("regulator", QueryFilter(detailed=True), 1.0)
            refused = False
        except AccessDenied:
            refused = True
        audit = led.log[-1]
        checks.append(refused and len(led.log) == before + 1 and audit.kind == "access_audit" and audit.data["refused"])

        replayed = Ledger.replay(path)
        checks.append(replayed.log == led.log)
        lines = path.read_text().splitlines()
        tampered = Path(tmp) / "tampered.jsonl"
        tampered.write_text("\n".join(lines[:500] + lines[501:]) + "\n")
        try:
            Ledger.replay(tampered)
            checks.append(False)
        except ValueError:
            checks.append(True)
    elapsed = time.perf_counter() - t0
    names = ("aggregate", "regulator aggregate", "refused+audited", "replay", "gap detected")
    detail = ", ".join(f"{n} {'ok' if c else 'BAD'}" for n, c in zip(names, checks))
    return all(checks), detail, elapsed


def criterion_8():
    t0 = time.perf_counter()
    illegal = []
    for state, signal, k in itertools.product(STATES, SIGNALS, range(4)):
        new = next_state(state, signal, k)
        if new != state and new not in TRANSITION_GRAPH[state]:
            illegal.append((state, signal, k, new))
    for signal, table in POLICY_TABLE.items():
        for state, new in table.items():
            if new != state and new not in TRANSITION_GRAPH[state]:
                illegal.append((state, signal, "table", new))
    with tempfile.TemporaryDirectory() as tmp:
        res = run_pipeline(load_scenario(bundled_scenarios()["unreported-threshold"]), Path(tmp), fmt="jsonl")
        final = res.states["frontier-lab"].state
        reports = list((Path(tmp) / "reports").glob("*.json"))
    elapsed = time.perf_counter() - t0
    ok = not illegal and final == "throttled" and len(reports) == 1
    n = len(STATES) * len(SIGNALS) * 4
    return ok, f"{n} (state, signal, history) cases, {len(illegal)} illegal; final state {final}, reports {len(reports)}", elapsed


def _same_tree(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


def criterion_9():
    t0 = time.perf_counter()
    differing = []
    with tempfile.TemporaryDirectory() as tmp:
        for name, path in bundled_scenarios().items():
            for run in ("a", "b"):
                run_pipeline(load_scenario(path), Path(tmp) / run / name, fmt="jsonl")
            if not _same_tree(Path(tmp) / "a" / name, Path(tmp) / "b" / name):
                differing.append(name)
    elapsed = time.perf_counter() - t0
    n = len(bundled_scenarios())
    return not differing, f"{n - len(differing)}/{n} bundled scenarios byte-identical", elapsed


CRITERIA = {
    1: ("reference-run budget", criterion_1),
    2: ("cluster threshold conjunction", criterion_2),
    3: ("counters exact, proxies bounded", criterion_3),
    4: ("classifier held-out accuracy", criterion_4),
    5: ("obfuscation robustness", criterion_5),
    6: ("structuring detection", criterion_6),
    7: ("ledger properties", criterion_7),
    8: ("enforcement safety", criterion_8),
    9: ("determinism", criterion_9),
}


def run_criterion(n: int) -> bool:
    title, fn = CRITERIA[n]
    t0 = time.perf_counter()
    try:
        ok, detail, elapsed = fn()
    except Exception as exc:  # a crash is a failure, reported on its line
        ok, detail, elapsed = False, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0
    _record(n, title, ok, detail, elapsed)
    return ok


def test_criterion_1_reference_run_budget():
    assert run_criterion(1), RESULTS[1][1]


def test_criterion_2_threshold_conjunction():
    assert run_criterion(2), RESULTS[2][1]


def test_criterion_3_counters_and_proxies():
    assert run_criterion(3), RESULTS[3][1]


def test_criterion_4_classification_accuracy():
    assert run_criterion(4), RESULTS[4][1]


def test_criterion_5_obfuscation_robustness():
    assert run_criterion(5), RESULTS[5][1]


def test_criterion_6_structuring_detection():
    assert run_criterion(6), RESULTS[6][1]


def test_criterion_7_ledger_properties():
    assert run_criterion(7), RESULTS[7][1]


def test_criterion_8_enforcement_safety():
    assert run_criterion(8), RESULTS[8][1]


def test_criterion_9_determinism():
    assert run_criterion(9), RESULTS[9][1]


if __name__ == "__main__":
    results = [run_criterion(n) for n in CRITERIA]
    sys.exit(0 if all(results) else 1)
