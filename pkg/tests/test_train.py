import dataclasses
import json

import numpy as np
import pytest

from traumanet.cohort_synth import default_spec, generate
from traumanet.domain import DataValidationError, filter_cohort
from traumanet.pipeline import FeatureMatrix, encode, fit_schema
from traumanet.train import (
    TrainConfig,
    artifact_from_dict,
    dumps_artifact,
    load_artifact,
    predict,
    predict_matrix,
    save_artifact,
    train_single,
    train_transfer,
)
from traumanet.workflow import prepare_cohort, train_model

FAST = TrainConfig(epochs_phase1=2, epochs_phase2=2, hidden=(16, 8), batch_size=256, seed=3)


@pytest.fixture(scope="module")
def prepared():
    return prepare_cohort(generate(default_spec("adults", 40_000, seed=21)), "adults", seed=21)


@pytest.fixture(scope="module")
def matrices(prepared):
    schema = fit_schema(prepared.train)
    return encode(prepared.hospital_train, schema), encode(prepared.ed_train, schema)


@pytest.fixture(scope="module")
def transfer_artifact(matrices):
    return train_transfer(*matrices, FAST, age_group="adults")


def test_config_invariants():
    with pytest.raises(DataValidationError):
        TrainConfig(coarse_lr=1e-4, fine_lr=1e-3)
    with pytest.raises(DataValidationError):
        TrainConfig(threshold=1.0)
    with pytest.raises(DataValidationError):
        TrainConfig(batch_size=1)
    assert TrainConfig.from_dict(FAST.to_dict()) == FAST


def test_zero_phase2_epochs_equals_phase1_only(matrices):
    hosp, ed = matrices
    cfg = dataclasses.replace(FAST, epochs_phase2=0)
    a = train_transfer(hosp, ed, cfg)
    b = train_single(hosp, cfg)
    assert a.network.to_dict() == b.network.to_dict()
    assert a.phase2_loss is None


def test_transfer_deterministic(matrices, transfer_artifact):
    again = train_transfer(*matrices, FAST, age_group="adults")
    assert dumps_artifact(again) == dumps_artifact(transfer_artifact)


def test_transfer_does_not_touch_schema(matrices, transfer_artifact):
    assert transfer_artifact.schema is matrices[0].schema
    assert transfer_artifact.scope == "ed_only"
    assert [p for p, _, _ in transfer_artifact.log] == [1, 1, 2, 2]


def test_transfer_preconditions(matrices):
    hosp, ed = matrices
    other = fit_schema(filter_cohort(generate(default_spec("children", 500, seed=1)))[0][:400])
    with pytest.raises(DataValidationError, match="schema"):
        train_transfer(hosp, FeatureMatrix(np.zeros((2, len(other))), np.array([True, False]), other), FAST)
    one_positive = ed.take(np.concatenate([np.flatnonzero(ed.labels)[:1], np.flatnonzero(~ed.labels)[:50]]))
    with pytest.raises(DataValidationError, match="positive"):
        train_transfer(hosp, one_positive, FAST)


def test_zero_epochs_returns_initialization(matrices):
    hosp, _ = matrices
    cfg = dataclasses.replace(FAST, epochs_phase1=0)
    from traumanet.net import Network

    init = Network.build(len(hosp.schema), cfg.net_config())
    assert train_single(hosp, cfg).network.to_dict() == init.to_dict()


def test_separable_toy_set_is_learned(matrices):
    schema = matrices[0].schema
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2_000, len(schema)))
    y = x[:, 0] + 0.5 * x[:, 1] > 0
    cfg = dataclasses.replace(FAST, epochs_phase1=30, coarse_lr=1e-2, batch_size=64)
    art = train_single(FeatureMatrix(x, y, schema), cfg)
    acc = np.mean((predict_matrix(art, x) >= 0.5) == y)
    assert acc >= 0.95


def test_predict_is_repeatable_and_uses_ge(prepared, transfer_artifact):
    recs = prepared.ed_test[:500]
    p1, y1 = predict(transfer_artifact, recs)
    p2, _ = predict(transfer_artifact, recs)
    assert np.array_equal(p1, p2)
    assert np.all(p1 > 0) and np.all(p1 < 1)
    at = dataclasses.replace(transfer_artifact, config=dataclasses.replace(FAST, threshold=float(p1[0])))
    assert predict(at, recs[:1])[1][0]


def test_round_trip_bit_identical(tmp_path, prepared, transfer_artifact):
    path = tmp_path / "model.json"
    save_artifact(transfer_artifact, str(path), provenance={"seed": 3})
    loaded = load_artifact(str(path))
    recs = prepared.test[:1_000]
    assert np.array_equal(predict(loaded, recs)[0], predict(transfer_artifact, recs)[0])
    assert dumps_artifact(loaded) == dumps_artifact(transfer_artifact)


def test_tampered_shape_rejected(tmp_path, transfer_artifact):
    d = transfer_artifact.to_dict()
    d["network"]["layers"][0]["n_in"] += 1
    with pytest.raises(DataValidationError):
        artifact_from_dict(d)
    d = transfer_artifact.to_dict()
    d["schema"]["numeric"].pop()
    with pytest.raises(DataValidationError, match="columns"):
        artifact_from_dict(d)


def test_old_version_rejected(tmp_path, transfer_artifact):
    d = transfer_artifact.to_dict()
    d["version"] = 0
    with pytest.raises(DataValidationError, match="unsupported artifact version"):
        artifact_from_dict(d)


def test_corrupt_file_rejected(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"format": "traumanet-model", "vers')
    with pytest.raises(DataValidationError, match="corrupt"):
        load_artifact(str(path))
    path.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(DataValidationError, match="not a model artifact"):
        load_artifact(str(path))


def test_same_code_path_for_every_age_group():
    cohort = generate(default_spec("all", 30_000, seed=5))
    for group in ("children", "adults", "all"):
        prep = prepare_cohort(cohort, group, seed=5)
        art = train_model(prep, dataclasses.replace(FAST, epochs_phase1=1, epochs_phase2=1),
                          "hospital_and_ed", group)
        assert art.age_group == group
        ages = {r.is_adult for r in prep.included}
        assert ages == {"children": {False}, "adults": {True}, "all": {False, True}}[group]


@pytest.mark.slow
def test_transfer_beats_scratch_with_scarce_ed_deaths():
    from traumanet.domain import label_mortality
    from traumanet.evaluation import auc
    from traumanet.workflow import train_from_scratch_ed

    transfer, scratch = [], []
    for seed in range(1, 6):
        spec = dataclasses.replace(default_spec("adults", 100_000, seed=seed), ed_death_fraction=0.1)
        prep = prepare_cohort(generate(spec), "adults", seed=seed)
        assert prep.summary()["ed_train_positives"] <= 30
        cfg = TrainConfig(epochs_phase1=5, epochs_phase2=20, seed=seed)
        y = np.array([label_mortality(r.disposition) for r in prep.ed_test])
        transfer.append(auc(predict(train_model(prep, cfg, "ed_only", "adults"), prep.ed_test)[0], y))
        scratch.append(auc(predict(train_from_scratch_ed(prep, cfg, "adults"), prep.ed_test)[0], y))
    assert np.mean(transfer) >= np.mean(scratch)
