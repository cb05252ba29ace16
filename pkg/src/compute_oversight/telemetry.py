"""Hardware model and deterministic telemetry trace generation.

A trace is a grid of ``(time step, node)`` samples.  Internally every
attribute is held as a ``(n_steps, n_nodes)`` float64 array; the
:attr:`TelemetryTrace.samples` property materialises the row-major
``TelemetrySample`` view ordered by ``(t, node_id)``.

Operation counts are integral float64 values (``floor`` of the analytic
rate), and every total over them is taken as an exact Python ``int`` so
that conservation holds bit-for-bit even past 2**63.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed)``;
independent child streams are spawned for the base signal, the obfuscation
layer and the power sensor so that obfuscated and clean traces built from
the same seed share their underlying noise.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional

import numpy as np

from . import serial

PRECISIONS = ("fp64", "fp32", "tf32", "bf16", "fp16", "fp8", "int8")
WORKLOAD_CLASSES = ("design", "pretraining", "enhancement", "inference", "graphics", "hpc")
OBFUSCATIONS = ("none", "throttle", "precision_shift", "traffic_shaping")

DEFAULT_SAMPLE_INTERVAL_S = 60.0
POWER_EXPONENT = 0.8
POWER_SENSOR_SIGMA = 0.01
POWER_SENSOR_CLIP = 0.03
MEM_INTENSITY_JITTER = 0.05
MEM_INTENSITY_CLIP = 0.15

THROTTLE_FACTOR = 0.6
THROTTLE_SPREAD = 0.1
PRECISION_SHIFT_FRACTION = 0.5
TRAFFIC_SHAPING_OVERHEAD = 0.85
TRAFFIC_SHAPING_EXTERNAL_BYTES_PER_ACCEL_S = 2.0e9

# attributes a sample may carry; those absent from a trace are ``None``
ATTRIBUTES = (
    "accel_util",
    "mem_bw_util",
    "power_watts",
    "inter_node_bytes",
    "intra_node_bytes",
    "external_io_bytes",
    "ops_by_precision",
)
BARE_METAL_HIDDEN = ("accel_util", "mem_bw_util", "ops_by_precision")


class AttributeUnavailable(LookupError):
    """A telemetry attribute needed by an analysis is absent from the trace."""


@dataclass(frozen=True)
class AcceleratorSpec:
    id: str
    peak_ops_per_sec_by_precision: Mapping[str, float]
    mem_bandwidth_bytes_per_sec: float
    idle_power_watts: float
    peak_power_watts: float

    def __post_init__(self):
        if not self.peak_ops_per_sec_by_precision:
            raise ValueError("accelerator needs at least one precision")
        for tag, rate in self.peak_ops_per_sec_by_precision.items():
            if tag not in PRECISIONS:
                raise ValueError(f"unknown precision tag {tag!r}")
            if not rate > 0:
                raise ValueError(f"peak rate for {tag} must be > 0")
        if not self.mem_bandwidth_bytes_per_sec > 0:
            raise ValueError("memory bandwidth must be > 0")
        if not 0 <= self.idle_power_watts < self.peak_power_watts:
            raise ValueError("need 0 <= idle_power_watts < peak_power_watts")

    @property
    def peak_ops_per_sec(self) -> float:
        """Headline peak rate: the fastest precision the device supports."""
        return max(self.peak_ops_per_sec_by_precision.values())

    @property
    def min_peak_ops_per_sec(self) -> float:
        return min(self.peak_ops_per_sec_by_precision.values())

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "peak_ops_per_sec_by_precision": {
                k: float(self.peak_ops_per_sec_by_precision[k])
                for k in PRECISIONS
                if k in self.peak_ops_per_sec_by_precision
            },
            "mem_bandwidth_bytes_per_sec": float(self.mem_bandwidth_bytes_per_sec),
            "idle_power_watts": float(self.idle_power_watts),
            "peak_power_watts": float(self.peak_power_watts),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AcceleratorSpec":
        return cls(
            id=str(d["id"]),
            peak_ops_per_sec_by_precision={
                str(k): float(v) for k, v in d["peak_ops_per_sec_by_precision"].items()
            },
            mem_bandwidth_bytes_per_sec=float(d["mem_bandwidth_bytes_per_sec"]),
            idle_power_watts=float(d["idle_power_watts"]),
            peak_power_watts=float(d["peak_power_watts"]),
        )


# Calibration profile, not vendor data: 6.3e14 OP/s is the per-device rate
# at which 60,000 devices for 90 days at 34% utilization reach 1e26 OP.
DEFAULT_ACCELERATOR = AcceleratorSpec(
    id="sim-accel-1",
    peak_ops_per_sec_by_precision={
        "fp64": 6.3e13,
        "fp32": 6.3e13,
        "tf32": 3.15e14,
        "bf16": 6.3e14,
        "fp16": 6.3e14,
    },
    mem_bandwidth_bytes_per_sec=3.35e12,
    idle_power_watts=100.0,
    peak_power_watts=700.0,
)


@dataclass(frozen=True)
class NodeConfig:
    accelerator: AcceleratorSpec
    accel_count: int
    intra_node_bandwidth_bits_per_sec: float = 7.2e12

    def __post_init__(self):
        if self.accel_count < 1:
            raise ValueError("accel_count must be >= 1")
        if not self.intra_node_bandwidth_bits_per_sec > 0:
            raise ValueError("intra-node bandwidth must be > 0")

    def to_dict(self) -> dict:
        return {
            "accelerator": self.accelerator.to_dict(),
            "accel_count": int(self.accel_count),
            "intra_node_bandwidth_bits_per_sec": float(self.intra_node_bandwidth_bits_per_sec),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NodeConfig":
        return cls(
            accelerator=AcceleratorSpec.from_dict(d["accelerator"]),
            accel_count=int(d["accel_count"]),
            intra_node_bandwidth_bits_per_sec=float(d["intra_node_bandwidth_bits_per_sec"]),
        )


@dataclass(frozen=True)
class ClusterConfig:
    node_count: int
    node: NodeConfig
    inter_node_bandwidth_bits_per_sec: float
    provider_id: str = "provider"

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if not self.inter_node_bandwidth_bits_per_sec > 0:
            raise ValueError("inter-node bandwidth must be > 0")

    @property
    def accel_count(self) -> int:
        return self.node_count * self.node.accel_count

    @property
    def peak_capacity_ops_per_sec(self) -> float:
        return self.accel_count * self.node.accelerator.peak_ops_per_sec

    def to_dict(self) -> dict:
        return {
            "provider_id": self.provider_id,
            "node_count": int(self.node_count),
            "node": self.node.to_dict(),
            "inter_node_bandwidth_bits_per_sec": float(self.inter_node_bandwidth_bits_per_sec),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterConfig":
        return cls(
            node_count=int(d["node_count"]),
            node=NodeConfig.from_dict(d["node"]),
            inter_node_bandwidth_bits_per_sec=float(d["inter_node_bandwidth_bits_per_sec"]),
            provider_id=str(d["provider_id"]),
        )


@dataclass(frozen=True)
class WorkloadSpec:
    """Ground-truth definition of one simulated workload.

    ``precision_mix`` is the share of busy accelerator time spent at each
    precision; ops at a precision accrue at that precision's peak rate.
    ``ground_truth_ops`` is ``None`` until :func:`generate_trace` fills it in.
    """

    workload_class: str
    duration_s: float
    target_utilization: float
    precision_mix: Mapping[str, float]
    obfuscation: str = "none"
    customer_id: str = ""
    workload_id: str = ""
    ground_truth_ops: Optional[int] = None

    def __post_init__(self):
        if self.workload_class not in WORKLOAD_CLASSES:
            raise ValueError(f"unknown workload class {self.workload_class!r}")
        if self.obfuscation not in OBFUSCATIONS:
            raise ValueError(f"unknown obfuscation {self.obfuscation!r}")
        if not self.duration_s >= 0:
            raise ValueError("duration_s must be >= 0")
        if not 0.0 <= self.target_utilization <= 1.0:
            raise ValueError("target_utilization must lie in [0, 1]")
        if not self.precision_mix:
            raise ValueError("precision_mix is empty")
        for tag, frac in self.precision_mix.items():
            if tag not in PRECISIONS:
                raise ValueError(f"unknown precision tag {tag!r}")
            if frac < 0:
                raise ValueError("precision fractions must be >= 0")
        if abs(math.fsum(self.precision_mix.values()) - 1.0) > 1e-9:
            raise ValueError("precision_mix fractions must sum to 1")

    def to_dict(self) -> dict:
        return {
            "workload_id": self.workload_id,
            "customer_id": self.customer_id,
            "class": self.workload_class,
            "duration_s": float(self.duration_s),
            "target_utilization": float(self.target_utilization),
            "precision_mix": {k: float(v) for k, v in self.precision_mix.items()},
            "obfuscation": self.obfuscation,
            "ground_truth_ops": self.ground_truth_ops,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorkloadSpec":
        gt = d.get("ground_truth_ops")
        return cls(
            workload_class=str(d["class"]),
            duration_s=float(d["duration_s"]),
            target_utilization=float(d["target_utilization"]),
            precision_mix={str(k): float(v) for k, v in d["precision_mix"].items()},
            obfuscation=str(d.get("obfuscation", "none")),
            customer_id=str(d.get("customer_id", "")),
            workload_id=str(d.get("workload_id", "")),
            ground_truth_ops=None if gt is None else int(gt),
        )


@dataclass(frozen=True)
class TelemetrySample:
    t: float
    node_id: int
    accel_util: Optional[float]
    mem_bw_util: Optional[float]
    power_watts: Optional[float]
    inter_node_bytes: Optional[int]
    intra_node_bytes: Optional[int]
    external_io_bytes: Optional[int]
    ops_by_precision: Optional[dict]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


@dataclass(frozen=True, eq=False)
class TelemetryTrace:
    """Columnar telemetry for one allocation.

    Every array has shape ``(n_steps, n_nodes)``; ``t`` has shape
    ``(n_steps,)``.  Absent attributes are ``None``.
    """

    cluster: ClusterConfig
    workload: Optional[WorkloadSpec]
    sample_interval_s: float
    t: np.ndarray
    accel_util: Optional[np.ndarray]
    mem_bw_util: Optional[np.ndarray]
    power_watts: Optional[np.ndarray]
    inter_node_bytes: Optional[np.ndarray]
    intra_node_bytes: Optional[np.ndarray]
    external_io_bytes: Optional[np.ndarray]
    ops_by_precision: Optional[dict]
    customer_id: str = ""
    start_t: float = 0.0

    def __post_init__(self):
        if not self.sample_interval_s > 0:
            raise ValueError("sample_interval_s must be > 0")

    @property
    def n_steps(self) -> int:
        return int(self.t.shape[0])

    @property
    def n_nodes(self) -> int:
        return self.cluster.node_count

    def __len__(self) -> int:
        return self.n_steps * self.n_nodes

    @property
    def workload_id(self) -> Optional[str]:
        return self.workload.workload_id if self.workload is not None else None

    @property
    def end_t(self) -> float:
        return self.start_t + self.n_steps * self.sample_interval_s

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(a for a in ATTRIBUTES if getattr(self, a) is not None)

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise AttributeUnavailable(
                f"trace lacks {', '.join(missing)} (not collected for this service type)"
            )

    def step_ops(self) -> np.ndarray:
        """Total ops per time step, summed over nodes and precisions (float)."""
        self.require("ops_by_precision")
        total = np.zeros(self.n_steps)
        for arr in self.ops_by_precision.values():
            total += arr.sum(axis=1)
        return total

    def total_ops(self) -> int:
        """Exact integer sum of every counter increment in the trace."""
        self.require("ops_by_precision")
        return sum(exact_sum(arr) for arr in self.ops_by_precision.values())

    def ops_by_precision_totals(self) -> dict[str, int]:
        self.require("ops_by_precision")
        return {k: exact_sum(v) for k, v in self.ops_by_precision.items()}

    def iter_samples(self) -> Iterator[TelemetrySample]:
        cols = {}
        for name in ATTRIBUTES[:-1]:
            arr = getattr(self, name)
            cols[name] = None if arr is None else arr.tolist()
        ops = None
        if self.ops_by_precision is not None:
            ops = {k: v.tolist() for k, v in self.ops_by_precision.items()}
        int_cols = ("inter_node_bytes", "intra_node_bytes", "external_io_bytes")
        t = self.t.tolist()
        for s in range(self.n_steps):
            for n in range(self.n_nodes):
                vals = {}
                for name, col in cols.items():
                    if col is None:
                        vals[name] = None
                    elif name in int_cols:
                        vals[name] = int(col[s][n])
                    else:
                        vals[name] = col[s][n]
                yield TelemetrySample(
                    t=t[s],
                    node_id=n,
                    ops_by_precision=None
                    if ops is None
                    else {k: int(v[s][n]) for k, v in ops.items()},
                    **vals,
                )

    @property
    def samples(self) -> list[TelemetrySample]:
        return list(self.iter_samples())

    def slice_time(self, start_t: float, end_t: float) -> "TelemetryTrace":
        """Sub-trace of the steps whose interval starts in ``[start_t, end_t)``."""
        i0 = int(np.searchsorted(self.t, start_t, side="left"))
        i1 = int(np.searchsorted(self.t, end_t, side="left"))
        cut = lambda a: None if a is None else a[i0:i1]
        return dataclasses.replace(
            self,
            t=self.t[i0:i1],
            start_t=float(self.t[i0]) if i1 > i0 else float(start_t),
            ops_by_precision=None
            if self.ops_by_precision is None
            else {k: v[i0:i1] for k, v in self.ops_by_precision.items()},
            **{a: cut(getattr(self, a)) for a in ATTRIBUTES[:-1]},
        )

    def without(self, *names: str) -> "TelemetryTrace":
        """Copy of the trace with the named attributes removed."""
        for n in names:
            if n not in ATTRIBUTES:
                raise ValueError(f"unknown attribute {n!r}")
        return dataclasses.replace(self, **{n: None for n in names})

    def header(self) -> dict:
        return {
            "record": "header",
            "format_version": serial.FORMAT_VERSION,
            "sample_interval_s": float(self.sample_interval_s),
            "start_t": float(self.start_t),
            "n_steps": self.n_steps,
            "customer_id": self.customer_id,
            "attributes": list(self.attributes),
            "precision_tags": None if self.ops_by_precision is None else list(self.ops_by_precision),
            "cluster": self.cluster.to_dict(),
            "workload": None if self.workload is None else self.workload.to_dict(),
        }


def bare_metal_view(trace: TelemetryTrace) -> TelemetryTrace:
    """Trace as seen on a bare-metal rental: no in-device counters."""
    return trace.without(*BARE_METAL_HIDDEN)


def power_only_view(trace: TelemetryTrace) -> TelemetryTrace:
    return trace.without(*(a for a in ATTRIBUTES if a != "power_watts"))


def provider_view(trace: TelemetryTrace) -> TelemetryTrace:
    """Hide simulator ground truth: the provider sees only the allocation."""
    return dataclasses.replace(trace, workload=None)


def exact_sum(arr: np.ndarray) -> int:
    """Exact sum of an array of integral floats as a Python int."""
    return sum(map(int, np.ravel(arr).tolist()))


def power_model(accel: AcceleratorSpec, util):
    """Accelerator power draw (watts) at a given core utilization.

    ``idle + (peak - idle) * util**POWER_EXPONENT``: concave, strictly
    increasing and therefore invertible on [0, 1].  Accepts scalars or arrays.
    """
    u = np.asarray(util, dtype=float)
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError("utilization must lie in [0, 1]")
    p = accel.idle_power_watts + (accel.peak_power_watts - accel.idle_power_watts) * u**POWER_EXPONENT
    return float(p) if np.ndim(p) == 0 else p


def power_inverse(accel: AcceleratorSpec, watts):
    """Utilization implied by a per-accelerator power reading.

    Readings outside ``[idle, peak]`` are clamped first.
    """
    w = np.asarray(watts, dtype=float)
    span = accel.peak_power_watts - accel.idle_power_watts
    frac = np.clip((w - accel.idle_power_watts) / span, 0.0, 1.0)
    u = frac ** (1.0 / POWER_EXPONENT)
    return float(u) if np.ndim(u) == 0 else u


@dataclass(frozen=True)
class ClassProfile:
    """Class-conditional signature knobs for the generator.

    Traffic rates are bytes per accelerator-second at full utilization.
    ``intensity`` is ops per byte of accelerator memory traffic.
    """

    util_noise: float
    node_jitter: float
    diurnal_amp: float
    idle_step_prob: float
    inter_node_rate: float
    inter_node_period: int
    inter_node_amp: float
    intra_node_rate: float
    external_rate: float
    intensity: float
    precision_mix: Mapping[str, float]
    # desk-scale sampling ranges
    nodes: tuple[int, int]
    accel_per_node: tuple[int, int]
    utilization: tuple[float, float]
    duration_h: tuple[float, float]


CLASS_PROFILES: dict[str, ClassProfile] = {
    "pretraining": ClassProfile(
        util_noise=0.015, node_jitter=0.01, diurnal_amp=0.0, idle_step_prob=0.0,
        inter_node_rate=2e9, inter_node_period=4, inter_node_amp=0.8,
        intra_node_rate=2e10, external_rate=1e6, intensity=300.0,
        precision_mix={"bf16": 0.95, "fp32": 0.05},
        nodes=(16, 48), accel_per_node=(8, 8), utilization=(0.3, 0.6), duration_h=(3, 6),
    ),
    "enhancement": ClassProfile(
        util_noise=0.06, node_jitter=0.03, diurnal_amp=0.0, idle_step_prob=0.02,
        inter_node_rate=5e8, inter_node_period=6, inter_node_amp=0.4,
        intra_node_rate=5e9, external_rate=5e7, intensity=250.0,
        precision_mix={"bf16": 0.6, "fp16": 0.3, "fp32": 0.1},
        nodes=(2, 8), accel_per_node=(8, 8), utilization=(0.3, 0.6), duration_h=(2, 5),
    ),
    "design": ClassProfile(
        util_noise=0.15, node_jitter=0.05, diurnal_amp=0.0, idle_step_prob=0.3,
        inter_node_rate=1e8, inter_node_period=7, inter_node_amp=0.1,
        intra_node_rate=2e9, external_rate=2e8, intensity=220.0,
        precision_mix={"bf16": 0.4, "fp32": 0.4, "fp16": 0.2},
        nodes=(1, 2), accel_per_node=(1, 8), utilization=(0.2, 0.6), duration_h=(2, 5),
    ),
    "inference": ClassProfile(
        util_noise=0.08, node_jitter=0.03, diurnal_amp=0.35, idle_step_prob=0.0,
        inter_node_rate=2e7, inter_node_period=1, inter_node_amp=0.0,
        intra_node_rate=3e9, external_rate=1.5e9, intensity=250.0,
        precision_mix={"fp16": 0.7, "bf16": 0.3},
        nodes=(2, 16), accel_per_node=(8, 8), utilization=(0.3, 0.7), duration_h=(4, 8),
    ),
    "graphics": ClassProfile(
        util_noise=0.2, node_jitter=0.05, diurnal_amp=0.2, idle_step_prob=0.05,
        inter_node_rate=0.0, inter_node_period=1, inter_node_amp=0.0,
        intra_node_rate=2e8, external_rate=3e9, intensity=80.0,
        precision_mix={"fp32": 0.85, "fp16": 0.15},
        nodes=(1, 4), accel_per_node=(1, 8), utilization=(0.2, 0.6), duration_h=(2, 6),
    ),
    "hpc": ClassProfile(
        util_noise=0.03, node_jitter=0.02, diurnal_amp=0.0, idle_step_prob=0.0,
        inter_node_rate=3e9, inter_node_period=5, inter_node_amp=0.6,
        intra_node_rate=5e9, external_rate=1e7, intensity=60.0,
        precision_mix={"fp64": 0.5, "fp32": 0.5},
        nodes=(8, 32), accel_per_node=(4, 8), utilization=(0.4, 0.8), duration_h=(3, 6),
    ),
}


def _floor(x: np.ndarray) -> np.ndarray:
    return np.floor(np.maximum(x, 0.0))


def generate_trace(
    spec: WorkloadSpec,
    cluster: ClusterConfig,
    seed: int,
    sample_interval_s: float = DEFAULT_SAMPLE_INTERVAL_S,
    start_t: float = 0.0,
) -> TelemetryTrace:
    """Simulate the telemetry a workload emits on ``cluster``.

    The workload occupies every node of ``cluster`` for
    ``floor(duration_s / sample_interval_s)`` full intervals.  The returned
    trace's ``workload`` is ``spec`` with ``ground_truth_ops`` filled in.
    """
    if not sample_interval_s > 0:
        raise ValueError("sample_interval_s must be > 0")
    accel = cluster.node.accelerator
    for tag in spec.precision_mix:
        if tag not in accel.peak_ops_per_sec_by_precision:
            raise ValueError(f"precision tag {tag!r} not supported by accelerator {accel.id!r}")

    prof = CLASS_PROFILES[spec.workload_class]
    dt = float(sample_interval_s)
    n_steps = int(math.floor(spec.duration_s / dt + 1e-9))
    n_nodes = cluster.node_count
    n_acc = cluster.node.accel_count
    t = start_t + dt * np.arange(n_steps, dtype=float)

    ss = np.random.SeedSequence(int(seed))
    base_ss, obf_ss, sensor_ss = ss.spawn(3)
    rng = np.random.Generator(np.random.PCG64(base_ss))
    obf_rng = np.random.Generator(np.random.PCG64(obf_ss))
    sensor_rng = np.random.Generator(np.random.PCG64(sensor_ss))

    # -- base utilization signal
    phase = rng.uniform(0.0, 2.0 * math.pi)
    node_offset = rng.normal(0.0, prof.node_jitter, size=n_nodes)
    step_noise = rng.normal(0.0, prof.util_noise, size=n_steps)
    sample_noise = rng.normal(0.0, prof.util_noise / 2.0, size=(n_steps, n_nodes))
    idle = rng.random(n_steps) < prof.idle_step_prob
    shape = 1.0 + prof.diurnal_amp * np.sin(2.0 * math.pi * t / 86400.0 + phase)
    rel = 1.0 + step_noise[:, None] + node_offset[None, :] + sample_noise
    util = np.clip(spec.target_utilization * shape[:, None] * rel, 0.0, 1.0)
    util[idle, :] = 0.0

    # -- traffic
    period_phase = rng.uniform(0.0, 2.0 * math.pi)
    steps = np.arange(n_steps, dtype=float)
    pattern = 1.0 + prof.inter_node_amp * np.cos(
        2.0 * math.pi * steps / max(prof.inter_node_period, 1) + period_phase
    )
    traffic_noise = np.clip(1.0 + rng.normal(0.0, 0.05, size=(n_steps, n_nodes)), 0.0, None)
    accel_seconds = util * n_acc * dt
    if n_nodes > 1:
        inter = prof.inter_node_rate * accel_seconds * pattern[:, None] * traffic_noise
    else:
        inter = np.zeros((n_steps, n_nodes))
    intra = prof.intra_node_rate * accel_seconds * traffic_noise
    external = prof.external_rate * accel_seconds * traffic_noise
    intensity_rel = 1.0 + np.clip(
        rng.normal(0.0, MEM_INTENSITY_JITTER, size=(n_steps, n_nodes)),
        -MEM_INTENSITY_CLIP,
        MEM_INTENSITY_CLIP,
    )

    # -- obfuscation layer
    mix = dict(spec.precision_mix)
    if spec.obfuscation == "throttle":
        factor = np.clip(
            THROTTLE_FACTOR + THROTTLE_SPREAD * obf_rng.normal(size=(n_steps, n_nodes)),
            0.3,
            0.9,
        )
        util = util * factor
    elif spec.obfuscation == "precision_shift":
        target = min(
            accel.peak_ops_per_sec_by_precision,
            key=lambda k: (accel.peak_ops_per_sec_by_precision[k], PRECISIONS.index(k)),
        )
        mix = {k: v * (1.0 - PRECISION_SHIFT_FRACTION) for k, v in mix.items()}
        mix[target] = mix.get(target, 0.0) + PRECISION_SHIFT_FRACTION
    elif spec.obfuscation == "traffic_shaping":
        util = util * TRAFFIC_SHAPING_OVERHEAD
        dummy = obf_rng.uniform(0.5, 1.5, size=(n_steps, n_nodes))
        external = external + TRAFFIC_SHAPING_EXTERNAL_BYTES_PER_ACCEL_S * n_acc * dt * dummy
        intra = intra * obf_rng.uniform(1.0, 2.0, size=(n_steps, n_nodes))

    # -- counters
    ops = {}
    total = np.zeros((n_steps, n_nodes))
    for tag in PRECISIONS:
        if tag not in mix:
            continue
        peak = accel.peak_ops_per_sec_by_precision[tag]
        col = _floor(util * n_acc * dt * mix[tag] * peak)
        ops[tag] = col
        total += col

    mem_bytes = total / (prof.intensity * intensity_rel)
    mem_bw_util = np.clip(mem_bytes / (n_acc * accel.mem_bandwidth_bytes_per_sec * dt), 0.0, 1.0)

    sensor = 1.0 + np.clip(
        sensor_rng.normal(0.0, POWER_SENSOR_SIGMA, size=(n_steps, n_nodes)),
        -POWER_SENSOR_CLIP,
        POWER_SENSOR_CLIP,
    )
    power = np.clip(
        n_acc * power_model(accel, util) * sensor,
        n_acc * accel.idle_power_watts,
        n_acc * accel.peak_power_watts,
    )

    trace = TelemetryTrace(
        cluster=cluster,
        workload=spec,
        sample_interval_s=dt,
        t=t,
        accel_util=util,
        mem_bw_util=mem_bw_util,
        power_watts=power,
        inter_node_bytes=_floor(inter),
        intra_node_bytes=_floor(intra),
        external_io_bytes=_floor(external),
        ops_by_precision=ops,
        customer_id=spec.customer_id,
        start_t=float(start_t),
    )
    gt = trace.total_ops()
    return dataclasses.replace(trace, workload=dataclasses.replace(spec, ground_truth_ops=gt))


def default_cluster(node_count: int, accel_per_node: int = 8, provider_id: str = "desk") -> ClusterConfig:
    return ClusterConfig(
        node_count=node_count,
        node=NodeConfig(DEFAULT_ACCELERATOR, accel_per_node),
        inter_node_bandwidth_bits_per_sec=4e11,
        provider_id=provider_id,
    )


def sample_workload(
    workload_class: str, seed: int, obfuscation: str = "none"
) -> tuple[WorkloadSpec, ClusterConfig]:
    """Draw a desk-scale workload and allocation for ``workload_class``."""
    prof = CLASS_PROFILES[workload_class]
    rng = np.random.default_rng([int(seed), WORKLOAD_CLASSES.index(workload_class)])
    nodes = int(rng.integers(prof.nodes[0], prof.nodes[1] + 1))
    accel = int(rng.integers(prof.accel_per_node[0], prof.accel_per_node[1] + 1))
    util = float(rng.uniform(*prof.utilization))
    hours = float(rng.uniform(*prof.duration_h))
    spec = WorkloadSpec(
        workload_class=workload_class,
        duration_s=round(hours * 3600.0 / DEFAULT_SAMPLE_INTERVAL_S) * DEFAULT_SAMPLE_INTERVAL_S,
        target_utilization=util,
        precision_mix=dict(prof.precision_mix),
        obfuscation=obfuscation,
        customer_id=f"desk-{workload_class}-{seed}",
        workload_id=f"{workload_class}-{seed}",
    )
    return spec, default_cluster(nodes, accel)


def sample_trace(workload_class: str, seed: int, obfuscation: str = "none") -> TelemetryTrace:
    spec, cluster = sample_workload(workload_class, seed, obfuscation)
    return generate_trace(spec, cluster, seed)


# -- file format -------------------------------------------------------------

_INT_COLUMNS = ("inter_node_bytes", "intra_node_bytes", "external_io_bytes")


def trace_records(trace: TelemetryTrace) -> Iterator[dict]:
    yield trace.header()
    for s in trace.iter_samples():
        yield s.to_dict()


def write_trace(path: str | Path, trace: TelemetryTrace) -> None:
    serial.write_lines(path, trace_records(trace))


def read_trace(path: str | Path) -> TelemetryTrace:
    it = serial.read_lines(path)
    header = next(it)
    if header.get("record") != "header":
        raise ValueError("trace file must start with a header record")
    if header.get("format_version") != serial.FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {header.get('format_version')!r}")
    cluster = ClusterConfig.from_dict(header["cluster"])
    workload = None if header["workload"] is None else WorkloadSpec.from_dict(header["workload"])
    n_steps = int(header["n_steps"])
    n_nodes = cluster.node_count
    attrs = set(header["attributes"])
    cols: dict[str, Optional[np.ndarray]] = {
        a: (np.zeros((n_steps, n_nodes)) if a in attrs else None) for a in ATTRIBUTES[:-1]
    }
    ops: Optional[dict[str, np.ndarray]] = None
    if "ops_by_precision" in attrs:
        ops = {tag: np.zeros((n_steps, n_nodes)) for tag in header["precision_tags"]}
    t = np.zeros(n_steps)
    count = 0
    for rec in it:
        idx = count // n_nodes
        node = int(rec["node_id"])
        if node != count % n_nodes:
            raise ValueError(f"sample {count} out of (t, node_id) order")
        t[idx] = rec["t"]
        for a, arr in cols.items():
            if arr is not None:
                arr[idx, node] = rec[a]
        if ops is not None:
            for tag, v in rec["ops_by_precision"].items():
                ops[tag][idx, node] = v
        count += 1
    if count != n_steps * n_nodes:
        raise ValueError(f"expected {n_steps * n_nodes} samples, found {count}")
    return TelemetryTrace(
        cluster=cluster,
        workload=workload,
        sample_interval_s=float(header["sample_interval_s"]),
        t=t,
        ops_by_precision=ops,
        customer_id=str(header["customer_id"]),
        start_t=float(header["start_t"]),
        **cols,
    )
