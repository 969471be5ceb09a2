"""Two-phase transfer training, single-phase training, prediction and model persistence."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import DataValidationError, PatientRecord, write_text_atomic
from .net import Adam, NetConfig, Network, bce_loss
from .pipeline import FeatureMatrix, FeatureSchema, encode_features, with_smote
from .seeds import derive_seed

ARTIFACT_FORMAT = "traumanet-model"
ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    coarse_lr: float = 1e-3
    fine_lr: float = 1e-4
    epochs_phase1: int = 30
    epochs_phase2: int = 30
    batch_size: int = 512
    dropout_rate: float = 0.3
    hidden: tuple[int, ...] = (300, 100)
    bn_momentum: float = 0.1
    smote_k: int = 5
    # minority rows after oversampling, as a multiple of the original count
    smote_target: float = 10.0
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if not self.fine_lr < self.coarse_lr:
            raise DataValidationError(f"fine_lr ({self.fine_lr}) must be below coarse_lr ({self.coarse_lr})")
        if self.fine_lr <= 0:
            raise DataValidationError("learning rates must be positive")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise DataValidationError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise DataValidationError("batch_size must be >= 2 (batch normalization)")
        if self.smote_k < 1 or self.smote_target < 1:
            raise DataValidationError("smote_k and smote_target must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise DataValidationError(f"threshold must be in (0,1), got {self.threshold}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataValidationError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")

    def net_config(self) -> NetConfig:
        return NetConfig(hidden=tuple(self.hidden), dropout=self.dropout_rate,
                         bn_momentum=self.bn_momentum, seed=derive_seed(self.seed, "init"))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (300, 100)))
        return cls(**d)


@dataclass
class ModelArtifact:
    schema: FeatureSchema
    network: Network
    config: TrainConfig
    phase1_loss: float | None
    phase2_loss: float | None
    age_group: str = "all"
    scope: str = "ed_only"
    # (phase, epoch, mean training loss) per epoch
    log: list[tuple[int, int, float]] = field(default_factory=list)
    version: int = ARTIFACT_VERSION

    def to_dict(self) -> dict:
        return {
            "format": ARTIFACT_FORMAT,
            "version": self.version,
            "age_group": self.age_group,
            "scope": self.scope,
            "config": self.config.to_dict(),
            "phase1_loss": self.phase1_loss,
            "phase2_loss": self.phase2_loss,
            "log": [list(x) for x in self.log],
            "schema": self.schema.to_dict(),
            "network": self.network.to_dict(),
        }


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    # a trailing single row cannot be batch-normalized; fold it into the previous batch
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()
    for i, s in enumerate(starts):
        e = starts[i + 1] if i + 1 < len(starts) else n
        yield order[s:e]


def fit_epochs(net: Network, opt: Adam, data: FeatureMatrix, epochs: int, batch_size: int,
               rng: np.random.Generator) -> list[float]:
    """Mini-batch training; returns the row-weighted mean training loss of each epoch."""
    if data.rows < 2:
        raise DataValidationError("training needs at least 2 rows")
    net.train()
    y_all = data.labels.astype(np.float64)
    losses = []
    for _ in range(epochs):
        total = 0.0
        for idx in _batches(data.rows, batch_size, rng):
            x, y = data.data[idx], y_all[idx]
            p = net.forward(x)
            total += bce_loss(p, y) * len(idx)
            opt.step(net, net.backward(y))
        loss = total / data.rows
        if not math.isfinite(loss):
            raise FloatingPointError("training loss became non-finite")
        losses.append(loss)
    net.eval()
    return losses


def _check_positives(m: FeatureMatrix, what: str, need: int = 2) -> None:
    n_pos = int(m.labels.sum())
    if n_pos < need:
        raise DataValidationError(f"{what} has {n_pos} positive rows, need at least {need}")


def train_single(data: FeatureMatrix, cfg: TrainConfig, age_group: str = "all",
                 scope: str = "hospital_and_ed") -> ModelArtifact:
    """One phase at the coarse learning rate."""
    _check_positives(data, "training set")
    net = Network.build(len(data.schema), cfg.net_config())
    opt = Adam(lr=cfg.coarse_lr)
    losses = fit_epochs(net, opt, data, cfg.epochs_phase1, cfg.batch_size,
                        np.random.default_rng(derive_seed(cfg.seed, "phase1")))
    net.eval()
    return ModelArtifact(
        schema=data.schema, network=net, config=cfg,
        phase1_loss=losses[-1] if losses else None, phase2_loss=None,
        age_group=age_group, scope=scope,
        log=[(1, i + 1, v) for i, v in enumerate(losses)],
    )


def train_transfer(hospital: FeatureMatrix, ed: FeatureMatrix, cfg: TrainConfig,
                   age_group: str = "all") -> ModelArtifact:
    """Pretrain on hospital outcomes at the coarse rate, then keep training every
    layer on ED outcomes plus SMOTE positives at the fine rate."""
    if hospital.schema != ed.schema:
        raise DataValidationError("hospital and ED matrices must share one feature schema")
    _check_positives(ed, "ED training set")
    artifact = train_single(hospital, cfg, age_group=age_group, scope="ed_only")
    if cfg.epochs_phase2 == 0:
        return artifact
    n_pos = int(ed.labels.sum())
    n_synth = int(round((cfg.smote_target - 1) * n_pos))
    augmented = with_smote(ed, cfg.smote_k, n_synth, derive_seed(cfg.seed, "smote"))
    opt = Adam(lr=cfg.fine_lr)
    losses = fit_epochs(artifact.network, opt, augmented, cfg.epochs_phase2, cfg.batch_size,
                        np.random.default_rng(derive_seed(cfg.seed, "phase2")))
    artifact.phase2_loss = losses[-1]
    artifact.log += [(2, i + 1, v) for i, v in enumerate(losses)]
    return artifact


def predict_matrix(artifact: ModelArtifact, data: np.ndarray) -> np.ndarray:
    net = artifact.network.eval()
    if len(data) == 0:
        return np.zeros(0)
    return net.forward(data)


def predict(artifact: ModelArtifact, records: Sequence[PatientRecord],
            strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities, probability >= threshold) in eval mode."""
    x = encode_features(records, artifact.schema, strict=strict)
    p = predict_matrix(artifact, x)
    return p, p >= artifact.config.threshold


# ---------------------------------------------------------------------------
# persistence


def dumps_artifact(artifact: ModelArtifact, provenance: dict | None = None) -> str:
    d = artifact.to_dict()
    if provenance is not None:
        d = {"provenance": provenance, **d}
    return json.dumps(d, sort_keys=False, separators=(",", ":")) + "\n"


def save_artifact(artifact: ModelArtifact, path: str, provenance: dict | None = None) -> None:
    write_text_atomic(path, dumps_artifact(artifact, provenance))


def artifact_from_dict(d: dict) -> ModelArtifact:
    if d.get("format") != ARTIFACT_FORMAT:
        raise DataValidationError(f"not a model artifact (format={d.get('format')!r})")
    if d.get("version") != ARTIFACT_VERSION:
        raise DataValidationError(
            f"unsupported artifact version {d.get('version')!r}; this build reads version {ARTIFACT_VERSION}"
        )
    try:
        schema = FeatureSchema.from_dict(d["schema"])
        net = Network.from_dict(d["network"])
        cfg = TrainConfig.from_dict(d["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataValidationError(f"corrupt model artifact: {e}") from None
    if net.n_inputs != len(schema):
        raise DataValidationError(
            f"schema has {len(schema)} columns but the network expects {net.n_inputs} inputs"
        )
    return ModelArtifact(
        schema=schema, network=net.eval(), config=cfg,
        phase1_loss=d.get("phase1_loss"), phase2_loss=d.get("phase2_loss"),
        age_group=d.get("age_group", "all"), scope=d.get("scope", "ed_only"),
        log=[tuple(x) for x in d.get("log", [])],
    )


def load_artifact(path: str) -> ModelArtifact:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataValidationError(f"{path}: corrupt model artifact ({e})") from None
    return artifact_from_dict(d)
