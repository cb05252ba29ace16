"""Compute accounting: theoretical and empirical budgets, threshold checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .telemetry import (
    AcceleratorSpec,
    ClusterConfig,
    TelemetryTrace,
    power_inverse,
    POWER_SENSOR_CLIP,
)

METHODS = ("theoretical", "counters", "mem_bw_proxy", "power_proxy", "fused")
EVENT_KINDS = ("training_run_over_threshold", "cluster_over_threshold", "rate_over_threshold")

# ops per byte of accelerator-memory traffic bracketing real workloads
OPERATIONAL_INTENSITY_BOUNDS = (50.0, 500.0)
REFERENCE_DURATION_S = 90 * 86400.0
# power readings are trusted to this relative tolerance when bounding
POWER_TOLERANCE = POWER_SENSOR_CLIP
# provider-view attribution: estimates closer than this belong to one run
ALLOCATION_GAP_S = 0.0


class OverlappingAllocation(ValueError):
    pass


@dataclass(frozen=True)
class UsageRecord:
    customer_id: str
    cluster_id: str
    node_count: int
    accel_per_node: int
    accel_spec_id: str
    start_t: float
    end_t: float
    assumed_utilization: float
    capacity_multiplier: float = 1.0
    allocation_id: str = ""

    def __post_init__(self):
        if not self.end_t > self.start_t:
            raise ValueError("end_t must be > start_t")
        if self.node_count < 1 or self.accel_per_node < 1:
            raise ValueError("node_count and accel_per_node must be >= 1")
        if not 0.0 <= self.assumed_utilization <= 1.0:
            raise ValueError("assumed_utilization must lie in [0, 1]")
        if not 0.0 <= self.capacity_multiplier <= 1.0:
            raise ValueError("capacity_multiplier must lie in [0, 1]")

    @property
    def duration_s(self) -> float:
        return self.end_t - self.start_t

    @property
    def accel_count(self) -> int:
        return self.node_count * self.accel_per_node

    def to_dict(self) -> dict:
        return {
            "customer_id": self.customer_id,
            "cluster_id": self.cluster_id,
            "allocation_id": self.allocation_id,
            "node_count": self.node_count,
            "accel_per_node": self.accel_per_node,
            "accel_spec_id": self.accel_spec_id,
            "start_t": float(self.start_t),
            "end_t": float(self.end_t),
            "assumed_utilization": float(self.assumed_utilization),
            "capacity_multiplier": float(self.capacity_multiplier),
        }


@dataclass(frozen=True)
class ComputeEstimate:
    """Bounded estimate of operations consumed over ``window``.

    Ops fields are exact ``int`` for the counters method and ``float``
    otherwise.
    """

    ops_point: float
    ops_lower: float
    ops_upper: float
    peak_rate_ops_per_sec: float
    method: str
    window: tuple[float, float]
    customer_id: str = ""
    workload_id: Optional[str] = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (0 <= self.ops_lower <= self.ops_point <= self.ops_upper):
            raise ValueError(
                f"need 0 <= lower <= point <= upper, got {self.ops_lower}, {self.ops_point}, {self.ops_upper}"
            )
        if self.peak_rate_ops_per_sec < 0:
            raise ValueError("peak rate must be >= 0")

    @property
    def duration_s(self) -> float:
        return self.window[1] - self.window[0]

    @property
    def sustained_rate(self) -> float:
        d = self.duration_s
        return float(self.ops_point) / d if d > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "customer_id": self.customer_id,
            "workload_id": self.workload_id,
            "window": [float(self.window[0]), float(self.window[1])],
            "ops_point": self.ops_point,
            "ops_lower": self.ops_lower,
            "ops_upper": self.ops_upper,
            "peak_rate_ops_per_sec": float(self.peak_rate_ops_per_sec),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ComputeEstimate":
        return cls(
            ops_point=d["ops_point"],
            ops_lower=d["ops_lower"],
            ops_upper=d["ops_upper"],
            peak_rate_ops_per_sec=float(d["peak_rate_ops_per_sec"]),
            method=d["method"],
            window=(float(d["window"][0]), float(d["window"][1])),
            customer_id=d.get("customer_id", ""),
            workload_id=d.get("workload_id"),
            flags=tuple(d.get("flags", ())),
        )


@dataclass(frozen=True)
class ComputeThresholds:
    training_ops_threshold: float = 1e26
    cluster_rate_threshold: float = 1e20
    cluster_fabric_threshold_bits_per_sec: float = 1e11
    reference_duration_s: float = REFERENCE_DURATION_S

    def __post_init__(self):
        for name in (
            "training_ops_threshold",
            "cluster_rate_threshold",
            "cluster_fabric_threshold_bits_per_sec",
            "reference_duration_s",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def implied_training_rate(self) -> float:
        """Sustained rate that reaches the training threshold in the reference duration."""
        return self.training_ops_threshold / self.reference_duration_s

    def to_dict(self) -> dict:
        return {
            "training_ops_threshold": float(self.training_ops_threshold),
            "cluster_rate_threshold": float(self.cluster_rate_threshold),
            "cluster_fabric_threshold_bits_per_sec": float(self.cluster_fabric_threshold_bits_per_sec),
            "reference_duration_s": float(self.reference_duration_s),
        }


@dataclass(frozen=True)
class ReportableEvent:
    kind: str
    customer_id: Optional[str]
    evidence: ComputeEstimate
    t: float
    subject: str = ""

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "customer_id": self.customer_id,
            "subject": self.subject,
            "t": float(self.t),
            "evidence": self.evidence.to_dict(),
        }


# -- theoretical -------------------------------------------------------------


def theoretical_budget(
    records: Sequence[UsageRecord],
    specs: Mapping[str, AcceleratorSpec],
    customer_id: str = "",
) -> ComputeEstimate:
    """Upper-bound budget from allocated hardware, time and assumed utilization.

    Records sharing an ``allocation_id`` and overlapping in time describe
    the same physical allocation; only the first is counted and the estimate
    is flagged ``overlap``.
    """
    if not records:
        return ComputeEstimate(0, 0, 0, 0.0, "theoretical", (0.0, 0.0), customer_id)

    counted: list[UsageRecord] = []
    flags: list[str] = []
    for r in sorted(records, key=lambda r: (r.start_t, r.end_t, r.allocation_id)):
        if r.accel_spec_id not in specs:
            raise KeyError(f"unknown accelerator spec {r.accel_spec_id!r}")
        dup = any(
            r.allocation_id
            and c.allocation_id == r.allocation_id
            and c.start_t < r.end_t
            and r.start_t < c.end_t
            for c in counted
        )
        if dup:
            if "overlap" not in flags:
                flags.append("overlap")
            continue
        counted.append(r)

    point = upper = 0.0
    edges = []
    for r in counted:
        capacity = r.accel_count * specs[r.accel_spec_id].peak_ops_per_sec * r.capacity_multiplier
        upper += capacity * r.duration_s
        point += capacity * r.duration_s * r.assumed_utilization
        edges.append((r.start_t, capacity))
        edges.append((r.end_t, -capacity))

    # sweep: releases before acquisitions at the same instant
    peak = level = 0.0
    for _, delta in sorted(edges, key=lambda e: (e[0], e[1])):
        level += delta
        peak = max(peak, level)

    window = (min(r.start_t for r in counted), max(r.end_t for r in counted))
    return ComputeEstimate(
        ops_point=point,
        ops_lower=0.0,
        ops_upper=upper,
        peak_rate_ops_per_sec=peak,
        method="theoretical",
        window=window,
        customer_id=customer_id,
        flags=tuple(flags),
    )


def usage_record_for_trace(
    trace: TelemetryTrace, assumed_utilization: float, capacity_multiplier: float = 1.0
) -> UsageRecord:
    return UsageRecord(
        customer_id=trace.customer_id,
        cluster_id=trace.cluster.provider_id,
        node_count=trace.cluster.node_count,
        accel_per_node=trace.cluster.node.accel_count,
        accel_spec_id=trace.cluster.node.accelerator.id,
        start_t=trace.start_t,
        end_t=max(trace.end_t, trace.start_t + trace.sample_interval_s),
        assumed_utilization=assumed_utilization,
        capacity_multiplier=capacity_multiplier,
        allocation_id=trace.workload_id or "",
    )


# -- empirical ---------------------------------------------------------------


def _peak_rate(step_ops: np.ndarray, dt: float, window_s: Optional[float]) -> float:
    if step_ops.size == 0:
        return 0.0
    w = 1 if window_s is None else max(1, int(round(window_s / dt)))
    w = min(w, step_ops.size)
    csum = np.concatenate(([0.0], np.cumsum(step_ops)))
    sums = csum[w:] - csum[:-w]
    return float(sums.max()) / (w * dt)


def empirical_estimate(
    trace: TelemetryTrace,
    method: str,
    peak_window_s: Optional[float] = None,
    power_calibration: Optional[Mapping[str, float]] = None,
    intensity_bounds: tuple[float, float] = OPERATIONAL_INTENSITY_BOUNDS,
) -> ComputeEstimate:
    """Estimate ops consumed from hardware observations in ``trace``.

    ``peak_window_s`` sets the sliding window used for the peak rate
    (default: one sample interval).  ``power_calibration`` is the precision
    mix (time shares) assumed when converting power-implied utilization into
    ops; it defaults to the accelerator's fastest precision.  The power
    bounds do not depend on it.
    """
    if method not in METHODS or method == "theoretical":
        raise ValueError(f"not an empirical method: {method!r}")
    dt = trace.sample_interval_s
    window = (trace.start_t, trace.end_t)
    common = dict(method=method, window=window, customer_id=trace.customer_id, workload_id=trace.workload_id)

    if method == "counters":
        trace.require("ops_by_precision")
        total = trace.total_ops()
        return ComputeEstimate(
            ops_point=total,
            ops_lower=total,
            ops_upper=total,
            peak_rate_ops_per_sec=_peak_rate(trace.step_ops(), dt, peak_window_s),
            **common,
        )

    accel = trace.cluster.node.accelerator
    n_acc = trace.cluster.node.accel_count

    if method == "mem_bw_proxy":
        trace.require("mem_bw_util")
        lo_i, hi_i = intensity_bounds
        step_bytes = (trace.mem_bw_util * (n_acc * accel.mem_bandwidth_bytes_per_sec * dt)).sum(axis=1)
        moved = float(step_bytes.sum())
        mid = math.sqrt(lo_i * hi_i)
        return ComputeEstimate(
            ops_point=moved * mid,
            ops_lower=moved * lo_i,
            ops_upper=moved * hi_i,
            peak_rate_ops_per_sec=_peak_rate(step_bytes * mid, dt, peak_window_s),
            **common,
        )

    if method == "power_proxy":
        trace.require("power_watts")
        per_accel = trace.power_watts / n_acc
        util = power_inverse(accel, per_accel)
        util_lo = power_inverse(accel, per_accel / (1.0 + POWER_TOLERANCE))
        util_hi = power_inverse(accel, per_accel / (1.0 - POWER_TOLERANCE))
        peaks = accel.peak_ops_per_sec_by_precision
        if power_calibration is None:
            rate = accel.peak_ops_per_sec
        else:
            unknown = set(power_calibration) - set(peaks)
            if unknown:
                raise ValueError(f"calibration uses unsupported precisions {sorted(unknown)}")
            rate = sum(frac * peaks[tag] for tag, frac in power_calibration.items())
        scale = n_acc * dt
        step_point = util.sum(axis=1) * scale * rate
        lower = float(util_lo.sum()) * scale * accel.min_peak_ops_per_sec
        upper = float(util_hi.sum()) * scale * accel.peak_ops_per_sec
        point = min(max(float(step_point.sum()), lower), upper)
        return ComputeEstimate(
            ops_point=point,
            ops_lower=lower,
            ops_upper=upper,
            peak_rate_ops_per_sec=_peak_rate(step_point, dt, peak_window_s),
            **common,
        )

    # fused
    parts = []
    for m in ("counters", "mem_bw_proxy", "power_proxy"):
        try:
            parts.append(
                empirical_estimate(trace, m, peak_window_s, power_calibration, intensity_bounds)
            )
        except LookupError:
            continue
    if not parts:
        trace.require("ops_by_precision", "mem_bw_util", "power_watts")
    return fuse(parts)


def fuse(parts: Sequence[ComputeEstimate]) -> ComputeEstimate:
    """Intersect the intervals of several estimates of the same window.

    The counters estimate supplies the point whenever present; otherwise the
    first estimate's point is clipped into the intersection.  An empty
    intersection falls back to the hull and is flagged ``inconsistent``.
    """
    if not parts:
        raise ValueError("nothing to fuse")
    lower = max(p.ops_lower for p in parts)
    upper = min(p.ops_upper for p in parts)
    flags: list[str] = []
    if lower > upper:
        lower = min(p.ops_lower for p in parts)
        upper = max(p.ops_upper for p in parts)
        flags.append("inconsistent")
    counters = next((p for p in parts if p.method == "counters"), None)
    lead = counters or parts[0]
    if counters is not None:
        point = lower = upper = counters.ops_point
    else:
        point = min(max(lead.ops_point, lower), upper)
    return ComputeEstimate(
        ops_point=point,
        ops_lower=lower,
        ops_upper=upper,
        peak_rate_ops_per_sec=lead.peak_rate_ops_per_sec,
        method="fused",
        window=lead.window,
        customer_id=lead.customer_id,
        workload_id=lead.workload_id,
        flags=tuple(flags),
    )


# -- thresholds --------------------------------------------------------------


def cluster_over_threshold(cluster: ClusterConfig, th: ComputeThresholds) -> bool:
    return (
        cluster.peak_capacity_ops_per_sec >= th.cluster_rate_threshold
        and cluster.inter_node_bandwidth_bits_per_sec >= th.cluster_fabric_threshold_bits_per_sec
    )


def _attribution_groups(stream: Sequence[ComputeEstimate]) -> list[tuple[str, list[ComputeEstimate]]]:
    """Group a customer's estimates into runs.

    Tagged estimates group by workload id.  Untagged ones (provider view)
    group by contiguous allocation windows.
    """
    groups: dict[str, list[ComputeEstimate]] = {}
    order: list[str] = []
    run_end: Optional[float] = None
    run_key: Optional[str] = None
    n_runs = 0
    for est in stream:
        if est.workload_id:
            key = f"workload:{est.workload_id}"
        else:
            if run_key is None or run_end is None or est.window[0] > run_end + ALLOCATION_GAP_S:
                run_key = f"allocation:{n_runs}"
                n_runs += 1
                run_end = est.window[1]
            else:
                run_end = max(run_end, est.window[1])
            key = run_key
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(est)
    return [(k, groups[k]) for k in order]


def check_thresholds(
    estimates: Mapping[str, Sequence[ComputeEstimate]],
    cluster: Optional[ClusterConfig],
    th: ComputeThresholds,
) -> list[ReportableEvent]:
    """Evaluate reporting thresholds over per-customer estimate streams.

    Each stream must be ordered by window start.  Every run (workload or
    allocation window) produces at most one event of each kind.
    """
    events: list[ReportableEvent] = []
    if cluster is not None and cluster_over_threshold(cluster, th):
        evidence = ComputeEstimate(
            0, 0, 0, cluster.peak_capacity_ops_per_sec, "theoretical", (0.0, 0.0), ""
        )
        events.append(
            ReportableEvent("cluster_over_threshold", None, evidence, 0.0, subject=cluster.provider_id)
        )

    for customer in sorted(estimates):
        stream = list(estimates[customer])
        starts = [e.window[0] for e in stream]
        if starts != sorted(starts):
            raise ValueError(f"estimates for {customer!r} are not time-ordered")
        for key, group in _attribution_groups(stream):
            cum_point = 0
            cum_lower = 0
            cum_upper = 0
            training_done = rate_done = False
            start = group[0].window[0]
            for est in group:
                cum_point += est.ops_point
                cum_lower += est.ops_lower
                cum_upper += est.ops_upper
                if not rate_done and est.duration_s > 0 and est.sustained_rate >= th.implied_training_rate:
                    rate_done = True
                    events.append(ReportableEvent("rate_over_threshold", customer, est, est.window[1], key))
                if not training_done and cum_point >= th.training_ops_threshold:
                    training_done = True
                    evidence = ComputeEstimate(
                        ops_point=cum_point,
                        ops_lower=cum_lower,
                        ops_upper=cum_upper,
                        peak_rate_ops_per_sec=max(e.peak_rate_ops_per_sec for e in group),
                        method=est.method if all(e.method == est.method for e in group) else "fused",
                        window=(start, est.window[1]),
                        customer_id=customer,
                        workload_id=est.workload_id,
                    )
                    events.append(
                        ReportableEvent("training_run_over_threshold", customer, evidence, est.window[1], key)
                    )
    return events
