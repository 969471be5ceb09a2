"""Records -> model-ready matrices: one-hot encoding, standard scaling,
stratified splitting and SMOTE oversampling of the minority class."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import (
    AIS_COLUMNS,
    COMORBIDITIES,
    GCS_FIELDS,
    INJURY_TYPES,
    INTENTS,
    MECHANISMS,
    NO_COMORBIDITIES,
    RACES,
    VITALS,
    DataValidationError,
    PatientRecord,
    label_mortality,
)

SCHEMA_VERSION = 1

NUMERIC_COLUMNS = (
    ("age",) + VITALS + GCS_FIELDS + ("iss",) + AIS_COLUMNS
    + ("arrived_by_ambulance", "transferred_in")
    + tuple(f"comorbidity_{c}" for c in COMORBIDITIES + (NO_COMORBIDITIES,))
)
CATEGORICAL_LEVELS = {
    "sex": ("female", "male"),
    "race": RACES,
    "injury_intent": INTENTS,
    "injury_type": INJURY_TYPES,
    "injury_mechanism": MECHANISMS,
}


def numeric_table(records: Sequence[PatientRecord]) -> np.ndarray:
    """(n, len(NUMERIC_COLUMNS)) raw numeric values; booleans as 0/1."""
    cols = [[r.age for r in records]]
    cols += [[getattr(r, v) for r in records] for v in VITALS + GCS_FIELDS]
    cols.append([r.iss for r in records])
    cols += [[r.ais[i] for r in records] for i in range(len(AIS_COLUMNS))]
    cols.append([r.arrived_by_ambulance for r in records])
    cols.append([r.transferred_in for r in records])
    cols += [[c in r.comorbidities for r in records] for c in COMORBIDITIES + (NO_COMORBIDITIES,)]
    try:
        out = np.array(cols, dtype=np.float64).T
    except TypeError:
        raise DataValidationError("records have missing numeric fields; apply the inclusion filter") from None
    if np.isnan(out).any():
        raise DataValidationError("records have missing numeric fields; apply the inclusion filter")
    return out.reshape(len(records), len(NUMERIC_COLUMNS))


def category_of(record: PatientRecord, variable: str) -> str:
    value = getattr(record, variable)
    return getattr(value, "value", value)


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout fitted on a training set.

    Numeric columns come first (standardized with the stored mean/SD), then one
    one-hot block per categorical variable, levels in canonical order.
    """

    numeric: tuple[str, ...]
    means: tuple[float, ...]
    sds: tuple[float, ...]
    categorical: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def columns(self) -> list[str]:
        cols = list(self.numeric)
        for var, levels in self.categorical:
            cols += [f"{var}={lvl}" for lvl in levels]
        return cols

    def __len__(self) -> int:
        return len(self.numeric) + sum(len(levels) for _, levels in self.categorical)

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "numeric": [{"name": n, "mean": m, "sd": s} for n, m, s in zip(self.numeric, self.means, self.sds)],
            "categorical": [{"variable": v, "levels": list(levels)} for v, levels in self.categorical],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        if d.get("version") != SCHEMA_VERSION:
            raise DataValidationError(f"unsupported schema version {d.get('version')!r}")
        return cls(
            numeric=tuple(c["name"] for c in d["numeric"]),
            means=tuple(float(c["mean"]) for c in d["numeric"]),
            sds=tuple(float(c["sd"]) for c in d["numeric"]),
            categorical=tuple((c["variable"], tuple(c["levels"])) for c in d["categorical"]),
        )


@dataclass
class FeatureMatrix:
    data: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema

    def __post_init__(self):
        if self.data.shape != (len(self.labels), len(self.schema)):
            raise DataValidationError(
                f"data shape {self.data.shape} does not match {len(self.labels)} rows x {len(self.schema)} columns"
            )

    @property
    def rows(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.data[idx], self.labels[idx], self.schema)


def fit_schema(records: Sequence[PatientRecord]) -> FeatureSchema:
    if not records:
        raise DataValidationError("cannot fit a schema on zero records")
    x = numeric_table(records)
    means = x.mean(axis=0)
    sds = x.std(axis=0)  # population SD
    sds[sds == 0] = 1.0
    cats = []
    for var, canonical in CATEGORICAL_LEVELS.items():
        seen = {category_of(r, var) for r in records}
        cats.append((var, tuple(lvl for lvl in canonical if lvl in seen)))
    return FeatureSchema(
        numeric=NUMERIC_COLUMNS,
        means=tuple(float(m) for m in means),
        sds=tuple(float(s) for s in sds),
        categorical=tuple(cats),
    )


def encode_features(records: Sequence[PatientRecord], schema: FeatureSchema, strict: bool = True) -> np.ndarray:
    """Feature rows only (no labels), so unlabeled records can be scored."""
    n = len(records)
    if schema.numeric != NUMERIC_COLUMNS:
        raise DataValidationError("schema numeric columns do not match this encoder")
    out = np.zeros((n, len(schema)))
    k = len(schema.numeric)
    if n:
        out[:, :k] = (numeric_table(records) - np.array(schema.means)) / np.array(schema.sds)
    for var, levels in schema.categorical:
        pos = {lvl: j for j, lvl in enumerate(levels)}
        for i, r in enumerate(records):
            j = pos.get(category_of(r, var))
            if j is None:
                if strict:
                    raise DataValidationError(
                        f"row {i}: {var}={category_of(r, var)!r} was not seen when the schema was fitted"
                    )
                continue  # lenient: all-zero block
            out[i, k + j] = 1.0
        k += len(levels)
    return out


def encode(records: Sequence[PatientRecord], schema: FeatureSchema, strict: bool = True) -> FeatureMatrix:
    labels = np.array([label_mortality(r.disposition) for r in records], dtype=bool)
    return FeatureMatrix(encode_features(records, schema, strict), labels, schema)


def decode_categorical(data: np.ndarray, schema: FeatureSchema) -> list[dict[str, str | None]]:
    """Recover category per row from the one-hot blocks (None for an all-zero block)."""
    out: list[dict[str, str | None]] = [{} for _ in range(len(data))]
    k = len(schema.numeric)
    for var, levels in schema.categorical:
        block = data[:, k:k + len(levels)]
        for i, row in enumerate(block):
            out[i][var] = levels[int(np.argmax(row))] if row.any() else None
        k += len(levels)
    return out


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataValidationError(f"train_fraction must be in (0,1), got {self.train_fraction}")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5 + 1e-9))


def stratified_indices(labels: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled allocation: each class sends round(fraction * count) rows to train."""
    labels = np.asarray(labels, dtype=bool)
    rng = np.random.default_rng(spec.seed)
    pos, neg = np.flatnonzero(labels), np.flatnonzero(~labels)
    if not spec.stratified:
        order = rng.permutation(len(labels))
        n_train = _round_half_up(spec.train_fraction * len(labels))
        return order[:n_train], order[n_train:]
    if len(pos) == 0 or len(neg) == 0:
        raise DataValidationError(
            f"stratified split needs both classes, got {len(pos)} positive and {len(neg)} negative rows"
        )
    train, test = [], []
    for idx in (pos, neg):
        idx = rng.permutation(idx)
        n_train = _round_half_up(spec.train_fraction * len(idx))
        train.append(idx[:n_train])
        test.append(idx[n_train:])
    return rng.permutation(np.concatenate(train)), rng.permutation(np.concatenate(test))


def stratified_split(matrix: FeatureMatrix, spec: SplitSpec) -> tuple[FeatureMatrix, FeatureMatrix]:
    tr, te = stratified_indices(matrix.labels, spec)
    return matrix.take(tr), matrix.take(te)


# ---------------------------------------------------------------------------
# SMOTE


def nearest_neighbors(x: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    """Indices of the k nearest other rows of ``x`` (Euclidean), ties broken by index."""
    n = len(x)
    sq = np.einsum("ij,ij->i", x, x)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d = sq[start:stop, None] - 2.0 * x[start:stop] @ x.T + sq[None, :]
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


@dataclass
class SmoteResult:
    rows: np.ndarray
    base: np.ndarray = field(repr=False)  # index of the minority row each sample starts from
    neighbor: np.ndarray = field(repr=False)
    gap: np.ndarray = field(repr=False)


def smote_sample(minority: np.ndarray, k: int, n_synthetic: int, seed: int) -> SmoteResult:
    minority = np.asarray(minority, dtype=np.float64)
    m = len(minority)
    if m < 2:
        raise DataValidationError(f"SMOTE needs at least 2 minority rows, got {m}")
    if k < 1:
        raise DataValidationError(f"k must be >= 1, got {k}")
    if n_synthetic < 0:
        raise DataValidationError(f"n_synthetic must be >= 0, got {n_synthetic}")
    k = min(k, m - 1)
    nn = nearest_neighbors(minority, k)
    rng = np.random.default_rng(seed)
    base = rng.integers(0, m, size=n_synthetic)
    neighbor = nn[base, rng.integers(0, k, size=n_synthetic)]
    gap = rng.random(n_synthetic)
    rows = minority[base] + gap[:, None] * (minority[neighbor] - minority[base])
    return SmoteResult(rows, base, neighbor, gap)


def smote_oversample(minority: np.ndarray, k: int, n_synthetic: int, seed: int) -> np.ndarray:
    """``n_synthetic`` new minority rows, each x + lam*(x' - x) for a random
    minority row x, one of its k nearest minority neighbours x', lam ~ U[0,1].

    k >= number of minority rows is clamped to rows - 1.
    """
    return smote_sample(minority, k, n_synthetic, seed).rows


def with_smote(matrix: FeatureMatrix, k: int, n_synthetic: int, seed: int) -> FeatureMatrix:
    """``matrix`` plus ``n_synthetic`` SMOTE rows built from its positives (labelled positive)."""
    synth = smote_oversample(matrix.data[matrix.labels], k, n_synthetic, seed)
    return FeatureMatrix(
        np.vstack([matrix.data, synth]),
        np.concatenate([matrix.labels, np.ones(len(synth), dtype=bool)]),
        matrix.schema,
    )
