import json

import numpy as np
import pytest

from adk.errors import DomainError, MissingClassError, SchemaError
from adk.evaluation import (
    EvalReport,
    Scenario,
    SplitManifest,
    accuracy,
    harmonic_mean,
    kshot_subsample,
    run_scenario,
)
from adk.io import images_from_cache, synthesize_dataset
from adk.knowledge import build_knowledge, subset_descriptions


@pytest.fixture(scope="module")
def synthetic():
    ds = synthesize_dataset(6, 10, 32, 20, 0.9, 0.1, seed=3)
    _, feats, labels = images_from_cache(ds.images)
    return ds, feats, labels, build_knowledge(ds.hand, ds.bank)


def test_accuracy():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([0, 0], [1, 1]) == 0.0
    assert accuracy([0, 1, 2, 3], [0, 1, 2, 0]) == 0.75
    with pytest.raises(SchemaError):
        accuracy([0], [0, 1])


def test_harmonic_mean():
    assert round(harmonic_mean(85.9, 77.8), 1) == 81.6
    assert harmonic_mean(0.7, 0.7) == pytest.approx(0.7)
    assert harmonic_mean(1.0, 1e-9) < 2.1e-9
    with pytest.raises(DomainError):
        harmonic_mean(0.0, 0.5)


def test_kshot_identity_and_determinism():
    labels = np.repeat([0, 1, 2], 5)
    assert kshot_subsample(labels, 5, seed=1).tolist() == list(range(15))
    a, b = kshot_subsample(labels, 2, 42), kshot_subsample(labels, 2, 42)
    assert np.array_equal(a, b)
    with pytest.raises(MissingClassError):
        kshot_subsample(labels, 6, 0)


def test_kshot_sampler_replay():
    labels = np.repeat([0, 1, 2], 5)
    got = kshot_subsample(labels, 2, seed=7)
    rng = np.random.default_rng(7)
    expected = []
    for c in range(3):
        pool = [i for i, y in enumerate(labels.tolist()) if y == c]
        expected += rng.choice(pool, size=2, replace=False).tolist()
    assert got.tolist() == sorted(expected)
    assert np.bincount(labels[got]).tolist() == [2, 2, 2]


def test_manifest_validation():
    with pytest.raises(SchemaError):
        SplitManifest(Scenario.BASE_TO_NOVEL, ("a",), ("a",))
    with pytest.raises(SchemaError):
        SplitManifest(Scenario.ALL_TO_ALL, ("a",), ("b",))
    with pytest.raises(SchemaError):
        SplitManifest(Scenario.ALL_TO_ALL, ("a",), shots_per_class=0)
    m = SplitManifest(Scenario.BASE_TO_NOVEL, ("a", "b"), ("c",), 4, 9)
    assert SplitManifest.from_dict(json.loads(json.dumps(m.to_dict()))) == m


def test_single_class_manifest(synthetic, rng):
    ds, feats, labels, kb = synthetic
    m = SplitManifest(Scenario.CROSS_DOMAIN, (ds.class_names[2],))
    noise = rng.normal(size=feats.shape)
    assert run_scenario(m, noise, labels, kb, ds.bank).base_acc == 1.0


def test_all_to_all_well_separated(synthetic):
    ds, feats, labels, kb = synthetic
    report = run_scenario(SplitManifest(Scenario.ALL_TO_ALL, ds.class_names), feats, labels, kb, ds.bank)
    assert report.base_acc >= 0.99
    assert set(report.per_head_acc["base"]) == {"hand", "comp", "inst", "desc", "fused"}
    assert report.n_images == len(labels)


def test_base_to_novel_reports_hm(synthetic):
    ds, feats, labels, kb = synthetic
    m = SplitManifest(Scenario.BASE_TO_NOVEL, ds.class_names[:3], ds.class_names[3:])
    r = run_scenario(m, feats, labels, kb, ds.bank)
    assert r.harmonic_mean == pytest.approx(2 * r.base_acc * r.novel_acc / (r.base_acc + r.novel_acc), abs=1e-9)
    assert set(r.per_head_acc) == {"base", "novel"}


def test_permuted_manifest_same_accuracy(synthetic):
    ds, _, labels, kb = synthetic
    noisy = synthesize_dataset(6, 10, 32, 20, 0.9, 3.0, seed=3)
    _, feats, _ = images_from_cache(noisy.images)
    names = ds.class_names
    for scenario, base, novel in ((Scenario.BASE_TO_NOVEL, names[:3], names[3:]),
                                  (Scenario.ALL_TO_ALL, names, ())):
        a = run_scenario(SplitManifest(scenario, base, novel), feats, labels, kb, ds.bank)
        b = run_scenario(SplitManifest(scenario, base[::-1], novel[::-1]), feats, labels, kb, ds.bank)
        assert (a.base_acc, a.novel_acc, a.harmonic_mean) == (b.base_acc, b.novel_acc, b.harmonic_mean)
        assert a.per_class_acc == b.per_class_acc


def test_comp_equals_inst_when_m1(synthetic):
    ds, feats, labels, _ = synthetic
    bank = subset_descriptions(ds.bank, 1)
    kb = build_knowledge(ds.hand, bank)
    noisy = feats + np.random.default_rng(0).normal(scale=0.3, size=feats.shape)
    r = run_scenario(SplitManifest(Scenario.ALL_TO_ALL, ds.class_names), noisy, labels, kb, bank)
    assert r.per_head_acc["base"]["comp"] == r.per_head_acc["base"]["inst"]


def test_report_roundtrip_and_determinism(synthetic):
    ds, feats, labels, kb = synthetic
    m = SplitManifest(Scenario.BASE_TO_NOVEL, ds.class_names[:3], ds.class_names[3:])
    r1 = run_scenario(m, feats, labels, kb, ds.bank)
    r2 = run_scenario(m, feats, labels, kb, ds.bank)
    assert r1.to_json() == r2.to_json()
    assert EvalReport.from_json(r1.to_json()) == r1


def test_schema_errors(synthetic):
    ds, feats, labels, kb = synthetic
    with pytest.raises(SchemaError):
        run_scenario(SplitManifest(Scenario.ALL_TO_ALL, ("nope",)), feats, labels, kb, ds.bank)
    with pytest.raises(SchemaError):
        run_scenario(SplitManifest(Scenario.ALL_TO_ALL, ds.class_names), feats[:, :5], labels, kb, ds.bank)
