import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compute_oversight.accounting import ComputeEstimate
from compute_oversight.classify import (
    ClassificationResult,
    ClassifierModel,
    Declaration,
    FeatureVector,
    InsufficientData,
    accuracy,
    classify_workload,
    extract_features,
    fit_classifier,
    labeled_corpus,
    periodicity_score,
    reconcile,
)
from compute_oversight.telemetry import (
    WORKLOAD_CLASSES,
    bare_metal_view,
    default_cluster,
    generate_trace,
    sample_trace,
    sample_workload,
)


def test_periodicity_score():
    t = np.arange(200)
    assert periodicity_score(np.cos(2 * np.pi * t / 4)) > 0.9
    rng = np.random.default_rng(0)
    assert periodicity_score(rng.normal(size=200)) < 0.3
    # a noisy slow trend (diurnal load) is not periodic communication
    assert periodicity_score(10 * np.sin(2 * np.pi * t / 400) + rng.normal(size=200)) < 0.3
    assert periodicity_score(np.ones(50)) == 0.0
    assert periodicity_score(np.array([1.0, 2.0])) == 0.0


def test_features_of_pretraining():
    fv = extract_features(sample_trace("pretraining", 1))
    assert 0.25 < fv.util_mean < 0.65
    assert fv.util_cv < 0.1
    assert fv.inter_node_comm_periodicity > 0.8
    assert fv.external_io_ratio < 0.01
    assert fv.scale_accel_count >= 16 * 8


def test_features_without_counters_use_power():
    tr = sample_trace("pretraining", 1)
    full, bm = extract_features(tr), extract_features(bare_metal_view(tr))
    assert bm.precision_mix_entropy == 0.0
    assert abs(bm.util_mean - full.util_mean) < 0.05


def test_empty_trace_is_unknown(model):
    spec, cluster = sample_workload("design", 1)
    import dataclasses

    tr = generate_trace(dataclasses.replace(spec, duration_s=0), cluster, 1)
    fv = extract_features(tr)
    assert fv == FeatureVector.zero()
    res = classify_workload(fv, model)
    assert res.top_label == "unknown" and res.confidence == 0.0
    assert sum(res.label_scores.values()) == pytest.approx(1.0)


def test_model_round_trip(model):
    again = ClassifierModel.loads(model.dumps())
    assert again == model
    with pytest.raises(ValueError):
        ClassifierModel.from_dict({**model.to_dict(), "format": "svm/9"})
    with pytest.raises(ValueError):
        ClassifierModel.from_dict({**model.to_dict(), "features": ["a"]})


def test_fit_requires_data():
    corpus = labeled_corpus(["design"], 10, 1)
    with pytest.raises(InsufficientData):
        fit_classifier(corpus)
    with pytest.raises(InsufficientData):
        fit_classifier(labeled_corpus(["design", "hpc"], 5, 1))
    with pytest.raises(ValueError):
        fit_classifier([(FeatureVector.zero(), "mining")] * 10)


def test_fit_is_deterministic():
    corpus = labeled_corpus(["design", "hpc"], 10, 3)
    assert fit_classifier(corpus, 1).centroids == fit_classifier(corpus, 1).centroids


def test_accuracy_on_all_six_classes(model):
    held_out = labeled_corpus(WORKLOAD_CLASSES, 15, 9)
    assert accuracy(model, held_out) >= 0.95


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=7, max_size=7))
def test_scores_are_a_distribution(model, xs):
    fv = FeatureVector.from_array(np.abs(xs) + [0, 0, 0, 0, 0, 0, 1])
    res = classify_workload(fv, model)
    assert sum(res.label_scores.values()) == pytest.approx(1.0)
    assert res.confidence == max(res.label_scores.values())
    assert res.top_label in model.classes


def _result(label, conf):
    return ClassificationResult({label: conf}, label, conf, FeatureVector.zero())


def _estimate(ops):
    return ComputeEstimate(ops, ops, ops, 1.0, "counters", (0, 1))


@pytest.mark.parametrize(
    "declared, label, conf, ops, expected",
    [
        ("inference", "inference", 0.95, 1e20, "match"),
        ("inference", "pretraining", 0.95, 1e20, "mismatch"),
        ("inference", "pretraining", 0.7, 1e20, "match"),
        ("inference", "pretraining", 0.3, 1e20, "follow_up"),
        ("inference", "inference", 0.3, 1e20, "follow_up"),
        ("inference", "inference", 0.95, 1.2e21, "mismatch"),
        ("inference", "inference", 0.95, 1.05e21, "match"),
    ],
)
def test_reconcile_rules(declared, label, conf, ops, expected):
    decl = Declaration("c", declared, 1e21)
    assert reconcile(decl, _result(label, conf), _estimate(ops)) == expected


def test_declaration_validation():
    with pytest.raises(ValueError):
        Declaration("c", "mining", 1.0)
    with pytest.raises(ValueError):
        Declaration("c", "design", -1.0)


def test_obfuscated_pretraining_never_confidently_wrong(model):
    for obf in ("throttle", "precision_shift", "traffic_shaping"):
        for i in range(10):
            res = classify_workload(extract_features(sample_trace("pretraining", 500 + i, obf)), model)
            assert not (res.top_label != "pretraining" and res.confidence >= 0.9), (obf, i, res.top_label)


def test_single_node_has_no_periodicity():
    spec, _ = sample_workload("pretraining", 1)
    fv = extract_features(generate_trace(spec, default_cluster(1), 1))
    assert fv.inter_node_comm_periodicity == 0.0
