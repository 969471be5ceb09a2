import dataclasses

import pytest

from traumanet.domain import Disposition, PatientRecord, Sex


def make_record(**overrides) -> PatientRecord:
    base = dict(
        age=40, sex=Sex.MALE, race="white", oxygen_saturation=98.0, systolic_bp=130.0, pulse=85.0,
        respiratory_rate=18.0, temperature=36.6, gcs_eye=4, gcs_verbal=5, gcs_motor=6, iss=9,
        ais=(0, 2, 0, 0, 3, 0, 0, 0, 0), comorbidities=frozenset({"no_comorbidities"}),
        injury_intent="unintentional", injury_type="blunt", injury_mechanism="fall",
        arrived_by_ambulance=True, transferred_in=False, disposition=Disposition.ADMITTED_GENERAL,
    )
    base.update(overrides)
    return PatientRecord(**base)


@pytest.fixture
def record():
    return make_record()


def replace(r: PatientRecord, **kw) -> PatientRecord:
    return dataclasses.replace(r, **kw)
