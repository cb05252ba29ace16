# %% [markdown]
# # How much compute did a training run use?
#
# A provider that knows only what it rented out (devices, hours) can bound a
# run's compute from above.  Here we size the classic frontier-scale example:
# 60,000 accelerators for 90 days at 34% utilization.

# %%
from compute_oversight.accounting import ComputeThresholds, UsageRecord, theoretical_budget
from compute_oversight.telemetry import DEFAULT_ACCELERATOR

specs = {DEFAULT_ACCELERATOR.id: DEFAULT_ACCELERATOR}
run = UsageRecord("lab", "bigcloud", 60_000, 1, DEFAULT_ACCELERATOR.id, 0.0, 90 * 86400.0, 0.34)
budget = theoretical_budget([run], specs, "lab")
print(f"point estimate  {budget.ops_point:.3e} OP")
print(f"full-util bound {budget.ops_upper:.3e} OP")
print(f"peak rate       {budget.peak_rate_ops_per_sec:.3e} OP/s")

# %% [markdown]
# The training threshold is 1e26 OP.  Spread over 90 days it implies a
# sustained rate, which is what a provider can watch in real time.

# %%
th = ComputeThresholds()
print(f"implied training rate {th.implied_training_rate:.3e} OP/s")
print("this run sustains", f"{budget.ops_point / budget.duration_s:.3e}", "OP/s")

# %% [markdown]
# Two allocations that share an id and overlap in time are the same hardware
# and are counted once.

# %%
half = UsageRecord("lab", "bigcloud", 30_000, 1, DEFAULT_ACCELERATOR.id, 0.0, 86400.0, 0.34, allocation_id="a1")
dup = UsageRecord("lab", "bigcloud", 30_000, 1, DEFAULT_ACCELERATOR.id, 3600.0, 86400.0, 0.34, allocation_id="a1")
print(theoretical_budget([half, dup], specs).flags)
