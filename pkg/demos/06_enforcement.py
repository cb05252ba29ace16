# %% [markdown]
# # Enforcement and attested claims
#
# Each customer has a small state machine.  Violations throttle, repeat
# violations terminate, and a regulator directive can suspend or restore.

# %%
from compute_oversight.accounting import ComputeEstimate, ReportableEvent
from compute_oversight.oversight import (
    TRANSITION_GRAPH,
    AttestedClaim,
    Overseer,
    Signals,
    sign_claim,
    verify_attested_claim,
)

for state, targets in TRANSITION_GRAPH.items():
    print(f"{state:10s} -> {sorted(targets)}")

# %%
run = ComputeEstimate(1.1e26, 1.1e26, 1.1e26, 1.4e19, "counters", (0.0, 7.776e6), "lab", "run-1")
event = ReportableEvent("training_run_over_threshold", "lab", run, 7.776e6)
ov = Overseer(["lab"])
state, actions = ov.evaluate("lab", Signals(threshold_events=((event, False),)), 7.776e6)
print(state.state, [a.kind for a in actions])
print(actions[0].report["kind"], "customer hashed as", actions[0].report["customer"])
state, _ = ov.evaluate("lab", Signals(reconcile=("mismatch",)), 7.8e6)
print("second violation ->", state.state)

# %% [markdown]
# Claims signed inside a (simulated) enclave are accepted; a single flipped
# bit is not.

# %%
keys = {"lab": b"shared-secret-key"}
claim = sign_claim(keys["lab"], "lab", "eval_was_run", {"eval": "red-team-v1", "passed": True})
print(verify_attested_claim(claim, keys))
forged = AttestedClaim(claim.key_id, claim.claim_kind, claim.payload.replace("true", "fals"), claim.mac)
print(verify_attested_claim(forged, keys))
