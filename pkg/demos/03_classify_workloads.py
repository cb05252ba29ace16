# %% [markdown]
# # What kind of workload is this?
#
# Utilization steadiness, communication periodicity, external traffic and
# precision mix separate pretraining from inference, fine-tuning, prototyping
# and non-AI jobs.  A nearest-centroid model is enough at desk scale.

# %%
from compute_oversight.classify import (
    Declaration,
    accuracy,
    classify_workload,
    extract_features,
    fit_classifier,
    labeled_corpus,
    reconcile,
)
from compute_oversight.accounting import empirical_estimate
from compute_oversight.telemetry import WORKLOAD_CLASSES, sample_trace

model = fit_classifier(labeled_corpus(WORKLOAD_CLASSES, 40, seed=1), seed=1)
print("held-out accuracy", accuracy(model, labeled_corpus(WORKLOAD_CLASSES, 20, seed=2)))

# %%
for cls in WORKLOAD_CLASSES:
    fv = extract_features(sample_trace(cls, 77))
    res = classify_workload(fv, model)
    print(f"{cls:12s} -> {res.top_label:12s} conf {res.confidence:.2f}  periodicity {fv.inter_node_comm_periodicity:.2f}")

# %% [markdown]
# A customer that declares inference but runs pretraining is caught.

# %%
trace = sample_trace("pretraining", 3)
res = classify_workload(extract_features(trace), model)
decl = Declaration("c", "inference", declared_max_ops=1e22)
print(reconcile(decl, res, empirical_estimate(trace, "counters")))

# %% [markdown]
# Obfuscation hurts the evader more than the classifier: a throttled or
# precision-shifted pretraining job still is not confidently mislabelled.

# %%
for obf in ("throttle", "precision_shift", "traffic_shaping"):
    r = classify_workload(extract_features(sample_trace("pretraining", 9, obf)), model)
    print(f"{obf:16s} {r.top_label} ({r.confidence:.2f})")
