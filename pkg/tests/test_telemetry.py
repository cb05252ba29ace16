import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compute_oversight.telemetry import (
    DEFAULT_ACCELERATOR,
    OBFUSCATIONS,
    WORKLOAD_CLASSES,
    AcceleratorSpec,
    AttributeUnavailable,
    WorkloadSpec,
    bare_metal_view,
    default_cluster,
    generate_trace,
    power_inverse,
    power_model,
    power_only_view,
    provider_view,
    read_trace,
    sample_trace,
    sample_workload,
)

ACC = DEFAULT_ACCELERATOR


def _spec(**kw):
    base = dict(
        workload_class="pretraining",
        duration_s=3600,
        target_utilization=0.4,
        precision_mix={"bf16": 0.95, "fp32": 0.05},
        customer_id="c",
        workload_id="w",
    )
    base.update(kw)
    return WorkloadSpec(**base)


def test_default_accelerator_matches_reference_peak():
    # 1e26 / (60_000 * 90 days * 0.34) rounds to 6.3e14 OP/s
    implied = 1e26 / (60_000 * 90 * 86400 * 0.34)
    assert ACC.peak_ops_per_sec == 6.3e14
    assert abs(implied - ACC.peak_ops_per_sec) / implied < 0.001


def test_trace_shape_and_ground_truth():
    tr = generate_trace(_spec(), default_cluster(4), seed=1)
    assert (tr.n_steps, tr.n_nodes) == (60, 4)
    assert tr.accel_util.shape == (60, 4)
    np.testing.assert_array_equal(tr.t, np.arange(60) * 60.0)
    assert tr.workload.ground_truth_ops == tr.total_ops()
    # independent recount through the per-sample view
    recount = sum(sum(s.ops_by_precision.values()) for s in tr.iter_samples())
    assert recount == tr.total_ops()
    assert isinstance(tr.total_ops(), int)


def test_pretraining_utilization_is_steady():
    tr = generate_trace(_spec(duration_s=6 * 3600), default_cluster(8), seed=7)
    per_step = tr.accel_util.mean(axis=1)
    assert abs(per_step.mean() - 0.4) < 0.02
    assert per_step.std() / per_step.mean() < 0.05


def test_inference_follows_a_diurnal_swing():
    tr = generate_trace(
        _spec(workload_class="inference", duration_s=86400, precision_mix={"fp16": 1.0}, target_utilization=0.5),
        default_cluster(2),
        seed=3,
        sample_interval_s=600,
    )
    per_step = tr.accel_util.mean(axis=1)
    assert per_step.max() - per_step.min() > 0.3


def test_determinism_and_seed_sensitivity():
    a = generate_trace(_spec(), default_cluster(2), seed=5)
    b = generate_trace(_spec(), default_cluster(2), seed=5)
    c = generate_trace(_spec(), default_cluster(2), seed=6)
    np.testing.assert_array_equal(a.power_watts, b.power_watts)
    assert a.total_ops() == b.total_ops()
    assert not np.array_equal(a.accel_util, c.accel_util)


def test_zero_duration_and_short_duration():
    tr = generate_trace(_spec(duration_s=0), default_cluster(2), seed=1)
    assert len(tr) == 0 and tr.total_ops() == 0
    tr = generate_trace(_spec(duration_s=59), default_cluster(2), seed=1)
    assert tr.n_steps == 0


def test_unsupported_precision_rejected():
    with pytest.raises(ValueError):
        generate_trace(_spec(precision_mix={"int8": 1.0}), default_cluster(1), seed=1)


@pytest.mark.parametrize(
    "kw",
    [
        {"workload_class": "mining"},
        {"target_utilization": 1.5},
        {"precision_mix": {"bf16": 0.5}},
        {"precision_mix": {"fp4": 1.0}},
        {"obfuscation": "hide"},
        {"duration_s": -1},
    ],
)
def test_workload_spec_validation(kw):
    with pytest.raises(ValueError):
        _spec(**kw)


def test_accelerator_validation():
    with pytest.raises(ValueError):
        AcceleratorSpec("x", {"bf16": 1e14}, 1e12, 500.0, 400.0)
    with pytest.raises(ValueError):
        AcceleratorSpec("x", {}, 1e12, 100.0, 400.0)


def test_power_model_endpoints_and_inverse():
    assert power_model(ACC, 0.0) == ACC.idle_power_watts
    assert power_model(ACC, 1.0) == ACC.peak_power_watts
    u = np.linspace(0, 1, 101)
    np.testing.assert_allclose(power_inverse(ACC, power_model(ACC, u)), u, atol=1e-12)
    # not linear: halfway utilization draws more than halfway power
    assert power_model(ACC, 0.5) > (ACC.idle_power_watts + ACC.peak_power_watts) / 2
    with pytest.raises(ValueError):
        power_model(ACC, 1.2)
    assert power_inverse(ACC, 10.0) == 0.0 and power_inverse(ACC, 1e4) == 1.0


@given(st.floats(0, 1), st.floats(0, 1))
def test_power_model_monotone(a, b):
    if a < b:
        assert power_model(ACC, a) <= power_model(ACC, b)
    if b - a > 1e-6:
        assert power_model(ACC, a) < power_model(ACC, b)


@settings(max_examples=25, deadline=None)
@given(
    cls=st.sampled_from(WORKLOAD_CLASSES),
    obf=st.sampled_from(OBFUSCATIONS),
    seed=st.integers(0, 2**32 - 1),
)
def test_trace_invariants(cls, obf, seed):
    spec, cluster = sample_workload(cls, seed % 1000, obf)
    spec = dataclasses.replace(spec, duration_s=min(spec.duration_s, 1800))
    tr = generate_trace(spec, cluster, seed)
    n_acc = cluster.node.accel_count
    assert np.all((tr.accel_util >= 0) & (tr.accel_util <= 1))
    assert np.all((tr.mem_bw_util >= 0) & (tr.mem_bw_util <= 1))
    assert np.all(tr.power_watts >= n_acc * ACC.idle_power_watts)
    assert np.all(tr.power_watts <= n_acc * ACC.peak_power_watts)
    per_sample = sum(tr.ops_by_precision.values())
    assert np.all(per_sample >= 0)
    assert np.all(per_sample <= n_acc * tr.sample_interval_s * ACC.peak_ops_per_sec)
    assert np.all(np.diff(tr.t) > 0)
    for col in (tr.inter_node_bytes, tr.intra_node_bytes, tr.external_io_bytes):
        assert np.all(col >= 0) and np.all(col == np.floor(col))
    assert tr.workload.ground_truth_ops == tr.total_ops()


@pytest.mark.parametrize("obf", ["throttle", "traffic_shaping"])
def test_obfuscation_only_lowers_utilization(obf):
    clean = sample_trace("pretraining", 11)
    dirty = sample_trace("pretraining", 11, obf)
    assert np.all(dirty.accel_util <= clean.accel_util)
    assert dirty.total_ops() < clean.total_ops()


def test_precision_shift_moves_work_to_slowest_precision():
    clean = sample_trace("pretraining", 12)
    shifted = sample_trace("pretraining", 12, "precision_shift")
    np.testing.assert_array_equal(clean.accel_util, shifted.accel_util)
    assert "fp64" in shifted.ops_by_precision
    assert shifted.total_ops() < clean.total_ops()


def test_traffic_shaping_inflates_external_traffic():
    clean = sample_trace("pretraining", 13)
    shaped = sample_trace("pretraining", 13, "traffic_shaping")
    assert shaped.external_io_bytes.sum() > 10 * clean.external_io_bytes.sum()


def test_views_hide_attributes():
    tr = sample_trace("design", 1)
    bm = bare_metal_view(tr)
    assert bm.accel_util is None and bm.ops_by_precision is None and bm.power_watts is not None
    with pytest.raises(AttributeUnavailable):
        bm.total_ops()
    assert power_only_view(tr).attributes == ("power_watts",)
    pv = provider_view(tr)
    assert pv.workload is None and pv.workload_id is None and pv.customer_id == tr.customer_id
    with pytest.raises(ValueError):
        tr.without("colour")


def test_slice_time():
    tr = generate_trace(_spec(duration_s=600), default_cluster(2), seed=4, start_t=1000.0)
    part = tr.slice_time(1120.0, 1300.0)
    np.testing.assert_array_equal(part.t, [1120.0, 1180.0, 1240.0])
    assert part.start_t == 1120.0 and part.end_t == 1300.0
    np.testing.assert_array_equal(part.power_watts, tr.power_watts[2:5])
    halves = tr.slice_time(0, 1300).total_ops() + tr.slice_time(1300, 1e9).total_ops()
    assert halves == tr.total_ops()
    assert tr.slice_time(5000, 6000).n_steps == 0


@pytest.mark.parametrize("view", [lambda t: t, bare_metal_view, provider_view])
def test_trace_file_round_trip(tmp_path, view):
    from compute_oversight.telemetry import write_trace

    tr = view(generate_trace(_spec(duration_s=300), default_cluster(3), seed=2, start_t=60.0))
    write_trace(tmp_path / "t.jsonl", tr)
    back = read_trace(tmp_path / "t.jsonl")
    assert back.attributes == tr.attributes
    assert back.workload == tr.workload and back.cluster == tr.cluster
    for a in tr.attributes:
        if a == "ops_by_precision":
            assert {k: v.tolist() for k, v in back.ops_by_precision.items()} == {
                k: v.tolist() for k, v in tr.ops_by_precision.items()
            }
        else:
            np.testing.assert_array_equal(getattr(back, a), getattr(tr, a))
    write_trace(tmp_path / "u.jsonl", back)
    assert (tmp_path / "t.jsonl").read_bytes() == (tmp_path / "u.jsonl").read_bytes()


def test_empty_trace_round_trip(tmp_path):
    from compute_oversight.telemetry import write_trace

    tr = generate_trace(_spec(duration_s=0), default_cluster(2), seed=2)
    write_trace(tmp_path / "e.jsonl", tr)
    back = read_trace(tmp_path / "e.jsonl")
    assert back.n_steps == 0 and set(back.ops_by_precision) == {"bf16", "fp32"}


def test_read_trace_rejects_truncation(tmp_path):
    from compute_oversight.telemetry import write_trace

    tr = generate_trace(_spec(duration_s=300), default_cluster(2), seed=2)
    write_trace(tmp_path / "t.jsonl", tr)
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    (tmp_path / "cut.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError):
        read_trace(tmp_path / "cut.jsonl")
    (tmp_path / "swap.jsonl").write_text("\n".join([lines[0], lines[2], lines[1]] + lines[3:]) + "\n")
    with pytest.raises(ValueError):
        read_trace(tmp_path / "swap.jsonl")
