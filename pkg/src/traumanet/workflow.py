"""Filter -> scope -> split -> encode -> train, shared by the CLI and the experiment scripts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import DataValidationError, OutcomeScope, PatientRecord, filter_age_group, filter_cohort, label_mortality, partition_by_scope
from .pipeline import FeatureSchema, SplitSpec, encode, fit_schema, stratified_indices, with_smote
from .seeds import derive_seed
from .train import ModelArtifact, TrainConfig, train_single, train_transfer

SCOPES = ("ed_only", "hospital_and_ed")


@dataclass
class PreparedCohort:
    """Included records split 70/30 within each outcome scope."""

    included: list[PatientRecord]
    excluded: list[PatientRecord]
    hospital_train: list[PatientRecord]
    hospital_test: list[PatientRecord]
    ed_train: list[PatientRecord]
    ed_test: list[PatientRecord]

    @property
    def train(self) -> list[PatientRecord]:
        return self.hospital_train + self.ed_train

    @property
    def test(self) -> list[PatientRecord]:
        return self.hospital_test + self.ed_test

    def test_for(self, scope: str) -> list[PatientRecord]:
        return self.ed_test if scope == "ed_only" else self.test

    def summary(self) -> dict:
        def pos(rs):
            return sum(label_mortality(r.disposition) for r in rs)

        return {
            "included": len(self.included), "excluded": len(self.excluded),
            **{f"{name}_rows": len(rs) for name, rs in self._parts()},
            **{f"{name}_positives": pos(rs) for name, rs in self._parts()},
        }

    def _parts(self):
        return (("hospital_train", self.hospital_train), ("hospital_test", self.hospital_test),
                ("ed_train", self.ed_train), ("ed_test", self.ed_test))


def _split(records: list[PatientRecord], spec: SplitSpec, what: str):
    labels = np.array([label_mortality(r.disposition) for r in records], dtype=bool)
    if len(records) < 2:
        raise DataValidationError(f"{what} set has {len(records)} rows; too small to split")
    try:
        tr, te = stratified_indices(labels, spec)
    except DataValidationError as e:
        raise DataValidationError(f"{what} set: {e}") from None
    return [records[i] for i in tr], [records[i] for i in te]


def prepare_cohort(records: Sequence[PatientRecord], age_group: str = "all", seed: int = 0,
                   train_fraction: float = 0.7) -> PreparedCohort:
    included, excluded = filter_cohort(records)
    included = filter_age_group(included, age_group)
    if not included:
        raise DataValidationError(f"no included records for age group {age_group!r}")
    parts = partition_by_scope(included)
    hosp_tr, hosp_te = _split(parts[OutcomeScope.HOSPITAL_AND_ED],
                              SplitSpec(train_fraction, derive_seed(seed, "split/hospital")), "hospital")
    ed_tr, ed_te = _split(parts[OutcomeScope.ED_ONLY], SplitSpec(train_fraction, derive_seed(seed, "split/ed")), "ED")
    return PreparedCohort(included, excluded, hosp_tr, hosp_te, ed_tr, ed_te)


def train_model(prepared: PreparedCohort, cfg: TrainConfig, scope: str = "ed_only",
                age_group: str = "all", schema: FeatureSchema | None = None) -> ModelArtifact:
    """``ed_only``: transfer from hospital outcomes to ED outcomes.
    ``hospital_and_ed``: one phase on every training record.

    The schema is fitted on the union of training records so both arms share it.
    """
    if scope not in SCOPES:
        raise DataValidationError(f"scope must be one of {SCOPES}, got {scope!r}")
    schema = schema or fit_schema(prepared.train)
    if scope == "ed_only":
        return train_transfer(encode(prepared.hospital_train, schema), encode(prepared.ed_train, schema),
                              cfg, age_group=age_group)
    return train_single(encode(prepared.train, schema), cfg, age_group=age_group, scope=scope)


def train_from_scratch_ed(prepared: PreparedCohort, cfg: TrainConfig, age_group: str = "all") -> ModelArtifact:
    """Baseline for the transfer comparison: ED rows plus SMOTE rows only, no hospital phase.

    Trains ``epochs_phase2`` epochs at ``coarse_lr`` from initialization.
    """
    ed = encode(prepared.ed_train, fit_schema(prepared.train))
    n_synth = int(round((cfg.smote_target - 1) * int(ed.labels.sum())))
    augmented = with_smote(ed, cfg.smote_k, n_synth, derive_seed(cfg.seed, "smote"))
    cfg = dataclasses.replace(cfg, epochs_phase1=cfg.epochs_phase2)
    return train_single(augmented, cfg, age_group=age_group, scope="ed_only")
