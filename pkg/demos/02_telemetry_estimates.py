# %% [markdown]
# # Estimating compute from hardware telemetry
#
# We simulate a pretraining job and estimate its ops three ways: exact
# performance counters, memory traffic through a roofline-style intensity
# band, and power draw through an inverted power curve.

# %%
from compute_oversight.accounting import empirical_estimate
from compute_oversight.telemetry import bare_metal_view, sample_trace

trace = sample_trace("pretraining", seed=4)
truth = trace.workload.ground_truth_ops
print(f"{trace.n_nodes} nodes x {trace.cluster.node.accel_count} accelerators, {trace.n_steps} one-minute samples")
print(f"ground truth {truth:.4e} OP")

for method in ("counters", "mem_bw_proxy", "power_proxy"):
    e = empirical_estimate(trace, method)
    print(f"{method:13s} point {e.ops_point:.4e}  bounds [{e.ops_lower:.3e}, {e.ops_upper:.3e}]")

# %% [markdown]
# Power readings carry no precision information, so the power point needs an
# assumed precision mix.  Its bounds hold without one.

# %%
cal = empirical_estimate(trace, "power_proxy", power_calibration=trace.workload.precision_mix)
print(f"calibrated power point {cal.ops_point:.4e} ({(cal.ops_point - truth) / truth:+.2%})")

# %% [markdown]
# On a bare-metal rental the device counters are out of reach.  The fused
# estimate falls back to what remains.

# %%
bm = empirical_estimate(bare_metal_view(trace), "fused")
print(f"bare metal: [{bm.ops_lower:.3e}, {bm.ops_upper:.3e}] contains truth: {bm.ops_lower <= truth <= bm.ops_upper}")

# %% [markdown]
# Evasion costs efficiency: each obfuscation strategy delivers fewer ops on the
# same hardware.

# %%
for obf in ("none", "throttle", "precision_shift", "traffic_shaping"):
    t = sample_trace("pretraining", 4, obf)
    print(f"{obf:16s} {t.workload.ground_truth_ops / truth:6.1%} of baseline ops")
