"""Patient-visit data model, outcome labelling, inclusion filter and Cohort CSV I/O."""

from __future__ import annotations

import csv
import enum
import io
import os
import re
import tempfile
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


class DataValidationError(ValueError):
    """Raised when input data violates a documented contract."""


class Sex(str, enum.Enum):
    FEMALE = "female"
    MALE = "male"


class Disposition(str, enum.Enum):
    DECEASED_EXPIRED = "deceased_expired"
    EXPIRED = "expired"
    HOSPICE = "hospice"
    ADMITTED_GENERAL = "admitted_general"
    ADMITTED_ICU = "admitted_icu"
    ADMITTED_STEPDOWN = "admitted_stepdown"
    TRANSFERRED_OUT = "transferred_out"
    DISCHARGED = "discharged"
    NOT_APPLICABLE = "not_applicable"
    NOT_KNOWN = "not_known"
    LEFT_AMA = "left_ama"


class OutcomeScope(str, enum.Enum):
    ED_ONLY = "ed_only"
    HOSPITAL_AND_ED = "hospital_and_ed"


INVALID_DISPOSITIONS = frozenset(
    {Disposition.NOT_APPLICABLE, Disposition.NOT_KNOWN, Disposition.LEFT_AMA}
)
MORTALITY_DISPOSITIONS = frozenset(
    {Disposition.DECEASED_EXPIRED, Disposition.EXPIRED, Disposition.HOSPICE}
)


def slug(label: str) -> str:
    """Canonical snake_case form of a display label ("MVT Occupant" -> "mvt_occupant")."""
    return re.sub(r"[^a-z0-9]+", "_", label.lower().replace("n/a", "na")).strip("_")


# Display labels in the order of the published cohort table; enum values are their slugs.
RACE_LABELS = (
    "White",
    "Black or African American",
    "Other Race",
    "Asian",
    "American Indian",
    "Race N/A",
    "Native Hawaiian or Other Pacific Islander",
)
COMORBIDITY_LABELS = (
    "Alcoholism",
    "Angina",
    "Ascites within 30 days",
    "Bleeding Disorder",
    "Chemotherapy",
    "Congenital Anomalies",
    "Congestive heart failure",
    "Current smoker",
    "CVA/residual neurological deficit",
    "Diabetes mellitus",
    "Disseminated cancer",
    "Esophageal varices",
    "Functionally dependent health status",
    "Hypertension requiring medication",
    "Myocardial Infarction",
    "Obesity",
    "Prematurity",
    "PVD",
    "Respiratory Disease",
    "Steroid use",
)
NO_COMORBIDITIES_LABEL = "No comorbidities"
INTENT_LABELS = ("Assault", "Other", "Self-inflicted", "Undetermined", "Unintentional")
TYPE_LABELS = ("Blunt", "Burn", "Other/unspecified", "Penetrating")
MECHANISM_LABELS = (
    "Adverse effects, drugs",
    "Adverse effects, medical care",
    "Cut/pierce",
    "Drowning/submersion",
    "Fall",
    "Fire/flame",
    "Firearm",
    "Hot object/substance",
    "MVT Motorcyclist",
    "MVT Occupant",
    "MVT Other",
    "MVT Pedal cyclist",
    "MVT Pedestrian",
    "MVT Unspecified",
    "Machinery",
    "Natural/environmental, Bites and stings",
    "Natural/environmental, Other",
    "Other specified and classifiable",
    "Other specified, not elsewhere classifiable",
    "Overexertion",
    "Pedal cyclist, other",
    "Pedestrian, other",
    "Poisoning",
    "Struck by, against",
    "Suffocation",
    "Transport, other",
    "Unspecified",
)

RACES = tuple(slug(x) for x in RACE_LABELS)
COMORBIDITIES = tuple(slug(x) for x in COMORBIDITY_LABELS)
NO_COMORBIDITIES = slug(NO_COMORBIDITIES_LABEL)
INTENTS = tuple(slug(x) for x in INTENT_LABELS)
INJURY_TYPES = tuple(slug(x) for x in TYPE_LABELS)
MECHANISMS = tuple(slug(x) for x in MECHANISM_LABELS)

VITALS = ("oxygen_saturation", "systolic_bp", "pulse", "respiratory_rate", "temperature")
GCS_FIELDS = ("gcs_eye", "gcs_verbal", "gcs_motor")
GCS_RANGES = {"gcs_eye": (1, 4), "gcs_verbal": (1, 5), "gcs_motor": (1, 6)}
N_AIS_REGIONS = 9
ADULT_AGE = 18
_COMORBIDITY_SET = frozenset(COMORBIDITIES) | {NO_COMORBIDITIES}


@dataclass(frozen=True)
class PatientRecord:
    """One ED visit. Optional fields are ``None`` when missing."""

    age: int
    sex: Sex
    race: str
    oxygen_saturation: Optional[float]
    systolic_bp: Optional[float]
    pulse: Optional[float]
    respiratory_rate: Optional[float]
    temperature: Optional[float]
    gcs_eye: Optional[int]
    gcs_verbal: Optional[int]
    gcs_motor: Optional[int]
    iss: int
    ais: tuple[int, ...]
    comorbidities: frozenset[str]
    injury_intent: str
    injury_type: str
    injury_mechanism: str
    arrived_by_ambulance: Optional[bool]
    transferred_in: Optional[bool]
    disposition: Disposition
    died_in_ed: bool = False

    def __post_init__(self):
        problems = validate_record(self)
        if problems:
            raise DataValidationError("; ".join(problems))

    @property
    def gcs_total(self) -> Optional[int]:
        if None in (self.gcs_eye, self.gcs_verbal, self.gcs_motor):
            return None
        return self.gcs_eye + self.gcs_verbal + self.gcs_motor

    @property
    def is_adult(self) -> bool:
        return self.age >= ADULT_AGE


def validate_record(r: PatientRecord) -> list[str]:
    out = []
    if r.age < 0:
        out.append(f"age {r.age} < 0")
    if not isinstance(r.sex, Sex):
        out.append(f"sex {r.sex!r} is not a Sex")
    if r.race not in RACES:
        out.append(f"unknown race {r.race!r}")
    for name, (lo, hi) in GCS_RANGES.items():
        v = getattr(r, name)
        if v is not None and not lo <= v <= hi:
            out.append(f"{name}={v} outside [{lo},{hi}]")
    if not 0 <= r.iss <= 75:
        out.append(f"iss={r.iss} outside [0,75]")
    if len(r.ais) != N_AIS_REGIONS:
        out.append(f"expected {N_AIS_REGIONS} AIS regions, got {len(r.ais)}")
    elif any(not 0 <= a <= 6 for a in r.ais):
        out.append(f"ais {r.ais} outside [0,6]")
    unknown = r.comorbidities - _COMORBIDITY_SET
    if unknown:
        out.append(f"unknown comorbidities {sorted(unknown)}")
    if NO_COMORBIDITIES in r.comorbidities and len(r.comorbidities) > 1:
        out.append("no_comorbidities combined with other comorbidity flags")
    if r.injury_intent not in INTENTS:
        out.append(f"unknown injury_intent {r.injury_intent!r}")
    if r.injury_type not in INJURY_TYPES:
        out.append(f"unknown injury_type {r.injury_type!r}")
    if r.injury_mechanism not in MECHANISMS:
        out.append(f"unknown injury_mechanism {r.injury_mechanism!r}")
    if not isinstance(r.disposition, Disposition):
        out.append(f"disposition {r.disposition!r} is not a Disposition")
    return out


def exclusion_reasons(record: PatientRecord) -> list[str]:
    """Every reason ``record`` fails the inclusion criteria; empty if it passes."""
    reasons = [f"missing {v}" for v in VITALS + GCS_FIELDS if getattr(record, v) is None]
    if record.arrived_by_ambulance is None:
        reasons.append("missing arrived_by_ambulance")
    if record.transferred_in is None:
        reasons.append("missing transferred_in")
    if record.disposition in INVALID_DISPOSITIONS:
        reasons.append(f"invalid disposition {record.disposition.value}")
    return reasons


def passes_inclusion(record: PatientRecord) -> bool:
    return not exclusion_reasons(record)


def filter_cohort(records: Iterable[PatientRecord]) -> tuple[list[PatientRecord], list[PatientRecord]]:
    """Split into (included, excluded), preserving order."""
    included, excluded = [], []
    for r in records:
        (included if passes_inclusion(r) else excluded).append(r)
    return included, excluded


def label_mortality(disposition: Disposition) -> bool:
    disposition = Disposition(disposition)
    if disposition in INVALID_DISPOSITIONS:
        raise DataValidationError(
            f"disposition {disposition.value!r} carries no outcome; filter the cohort first"
        )
    return disposition in MORTALITY_DISPOSITIONS


def assign_scope(record: PatientRecord) -> OutcomeScope:
    """ED scope holds visits whose outcome was reached in the ED: deaths flagged
    ``died_in_ed`` and discharges. Everything else happened after admission."""
    if record.disposition == Disposition.DISCHARGED:
        return OutcomeScope.ED_ONLY
    if record.disposition in MORTALITY_DISPOSITIONS and record.died_in_ed:
        return OutcomeScope.ED_ONLY
    return OutcomeScope.HOSPITAL_AND_ED


def partition_by_scope(records: Sequence[PatientRecord]) -> dict[OutcomeScope, list[PatientRecord]]:
    out: dict[OutcomeScope, list[PatientRecord]] = {s: [] for s in OutcomeScope}
    for r in records:
        out[assign_scope(r)].append(r)
    return out


def filter_age_group(records: Iterable[PatientRecord], age_group: str) -> list[PatientRecord]:
    if age_group == "all":
        return list(records)
    if age_group == "children":
        return [r for r in records if not r.is_adult]
    if age_group == "adults":
        return [r for r in records if r.is_adult]
    raise DataValidationError(f"unknown age group {age_group!r}")


# ---------------------------------------------------------------------------
# Cohort CSV

AIS_COLUMNS = tuple(f"ais_{i}" for i in range(1, N_AIS_REGIONS + 1))
CSV_COLUMNS = (
    ("age", "sex", "race")
    + VITALS
    + GCS_FIELDS
    + ("iss",)
    + AIS_COLUMNS
    + ("comorbidities", "injury_intent", "injury_type", "injury_mechanism",
       "arrived_by_ambulance", "transferred_in", "disposition", "died_in_ed")
)
COMORBIDITY_SEP = ";"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_to_row(r: PatientRecord) -> list[str]:
    row = [_fmt(r.age), _fmt(r.sex), r.race]
    row += [_fmt(getattr(r, v)) for v in VITALS + GCS_FIELDS]
    row.append(_fmt(r.iss))
    row += [_fmt(a) for a in r.ais]
    row.append(COMORBIDITY_SEP.join(sorted(r.comorbidities)))
    row += [r.injury_intent, r.injury_type, r.injury_mechanism]
    row += [_fmt(r.arrived_by_ambulance), _fmt(r.transferred_in), _fmt(r.disposition), _fmt(r.died_in_ed)]
    return row


def _opt(cell: str, conv):
    return None if cell == "" else conv(cell)


def _bool(cell: str) -> bool:
    if cell not in ("0", "1"):
        raise DataValidationError(f"boolean cell must be 0 or 1, got {cell!r}")
    return cell == "1"


def row_to_record(row: dict[str, str]) -> PatientRecord:
    try:
        return PatientRecord(
            age=int(row["age"]),
            sex=Sex(row["sex"]),
            race=row["race"],
            oxygen_saturation=_opt(row["oxygen_saturation"], float),
            systolic_bp=_opt(row["systolic_bp"], float),
            pulse=_opt(row["pulse"], float),
            respiratory_rate=_opt(row["respiratory_rate"], float),
            temperature=_opt(row["temperature"], float),
            gcs_eye=_opt(row["gcs_eye"], int),
            gcs_verbal=_opt(row["gcs_verbal"], int),
            gcs_motor=_opt(row["gcs_motor"], int),
            iss=int(row["iss"]),
            ais=tuple(int(row[c]) for c in AIS_COLUMNS),
            comorbidities=frozenset(x for x in row["comorbidities"].split(COMORBIDITY_SEP) if x),
            injury_intent=row["injury_intent"],
            injury_type=row["injury_type"],
            injury_mechanism=row["injury_mechanism"],
            arrived_by_ambulance=_opt(row["arrived_by_ambulance"], _bool),
            transferred_in=_opt(row["transferred_in"], _bool),
            disposition=Disposition(row["disposition"]),
            died_in_ed=_bool(row.get("died_in_ed") or "0"),
        )
    except KeyError as e:
        raise DataValidationError(f"missing column {e.args[0]!r}") from None
    except ValueError as e:
        if isinstance(e, DataValidationError):
            raise
        raise DataValidationError(str(e)) from None


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cohort_to_csv(
    records: Iterable[PatientRecord],
    header_comment: Optional[str] = None,
    extra_columns: Sequence[str] = (),
    extra_values: Optional[Sequence[Sequence[str]]] = None,
) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS + tuple(extra_columns))
    for i, r in enumerate(records):
        row = record_to_row(r)
        if extra_values is not None:
            row += list(extra_values[i])
        w.writerow(row)
    return buf.getvalue()


def write_cohort_csv(path: str, records: Iterable[PatientRecord], header_comment: Optional[str] = None) -> None:
    write_text_atomic(path, cohort_to_csv(records, header_comment))


def read_cohort_csv(path: str) -> list[PatientRecord]:
    """Read a Cohort CSV. Leading ``#`` lines (provenance headers) are skipped."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(lines)
        if reader.fieldnames is None:
            raise DataValidationError(f"{path}: empty file, header row required")
        missing = [c for c in CSV_COLUMNS if c != "died_in_ed" and c not in reader.fieldnames]
        if missing:
            raise DataValidationError(f"{path}: missing columns {missing}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(row_to_record(row))
            except DataValidationError as e:
                raise DataValidationError(f"{path}: data row {lineno - 1}: {e}") from None
        return out
