# %% [markdown]
# # Catching a run split across providers
#
# A customer needing 1.35e20 OP/s can keep every provider's share below the
# implied training rate only by using at least eleven providers.  Salted
# identity hashes let providers pool their per-customer rates without
# revealing customer lists.

# %%
from compute_oversight.accounting import ComputeEstimate, ComputeThresholds
from compute_oversight.federation import (
    ProviderState,
    SharedSalt,
    build_digest,
    merge_and_detect,
    min_providers_to_evade,
)

th = ComputeThresholds()
R = 1.35e20
print("providers needed to evade:", min_providers_to_evade(R, th.implied_training_rate))

# %%
salt = SharedSalt(0, "epoch-0", b"agreed-out-of-band")


def digests(n):
    out = []
    for i in range(n):
        rate = R / n
        est = ComputeEstimate(rate * 86400, rate * 86400, rate * 86400, rate, "counters", (0.0, 86400.0), f"acct-{i}")
        state = ProviderState(f"cloud-{i:02d}", {f"acct-{i}": ("Splitting Co., Ltd.", "SG")}, [est])
        out.append(build_digest(state, 0, salt))
    return out


# With ten providers each share is itself reportable, so no alert is needed.
for n in (10, 11, 12):
    alerts = merge_and_detect(digests(n), th)
    print(n, "providers:", [(a.provider_count, a.reasons) for a in alerts])
