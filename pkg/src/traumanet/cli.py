"""Command-line entry point: generate, preprocess, train, evaluate, ablate, stats, predict.

Exit codes: 0 success, 2 usage error, 3 data-validation or I/O error, 4 numeric failure.

Settings come from an optional flat ``key=value`` config file (``--config``);
command-line flags override file values and unknown keys are rejected.  Every
output carries a provenance header with the config hash, seed and version.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
from typing import Sequence

from . import __version__
from .cohort_synth import AGE_GROUPS, CalibrationError, SPEC_KEYS, spec_from_values, sample_cohort
from .domain import (
    DataValidationError,
    cohort_to_csv,
    exclusion_reasons,
    filter_cohort,
    read_cohort_csv,
    write_text_atomic,
)
from .evaluation import BootstrapError, EvalOptions, evaluate, render_table, reports_to_csv
from .seeds import derive_seed
from .stats import compare_cohorts, render_results
from .train import ARTIFACT_VERSION, TrainConfig, load_artifact, predict, save_artifact
from .workflow import SCOPES, prepare_cohort, train_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_SPEC_FIXED = ("n_records", "age_group", "seed")
_LOCATION_KEYS = ("out", "cohort", "model", "test", "included", "excluded", "input")

# flag / config key -> type, per command (``seed`` and ``config`` are global)
_COMMON = {"seed": int, "out": str}
COMMAND_KEYS: dict[str, dict[str, type]] = {
    "generate": {**_COMMON, "age_group": str, "n": int,
                 **{k: t for k, t in SPEC_KEYS.items() if k not in _SPEC_FIXED}},
    "preprocess": {**_COMMON, "cohort": str, "age_group": str, "train_fraction": float},
    "train": {**_COMMON, "cohort": str, "age_group": str, "scope": str, "train_fraction": float,
              **{k: str for k in TRAIN_KEYS if k != "seed"}},
    "evaluate": {**_COMMON, "model": str, "test": str, "age_group": str, "threshold": float,
                 "ablate_mechanism": str, "n_boot": int, "strict": bool},
    "stats": {**_COMMON, "included": str, "excluded": str, "alpha": float, "welch": bool},
    "predict": {**_COMMON, "model": str, "input": str, "strict": bool},
}
COMMAND_KEYS["ablate"] = dict(COMMAND_KEYS["evaluate"])

DEFAULTS = {"seed": 0, "age_group": "all", "scope": "ed_only", "train_fraction": 0.7, "n_boot": 1000,
            "strict": True, "alpha": 0.05, "welch": False, "n": 100_000}


class UsageError(Exception):
    pass


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys use ``_`` or ``-``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def merge_config(command: str, file_values: dict[str, str], flags: dict) -> dict:
    """Defaults < config file < flags, typed per key; unknown keys raise UsageError."""
    allowed = COMMAND_KEYS[command]
    unknown = sorted(set(file_values) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys for {command!r}: {unknown}")
    merged = {k: v for k, v in DEFAULTS.items() if k in allowed}
    merged.update(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None})
    typed = {}
    for k, v in merged.items():
        t = allowed[k]
        try:
            typed[k] = _parse_bool(v) if t is bool else t(v)
        except (TypeError, ValueError) as e:
            raise UsageError(f"bad value for {k}: {v!r} ({e})") from None
    if command == "ablate":
        typed.setdefault("ablate_mechanism", "Fall")
    return typed


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def provenance(command: str, cfg: dict, inputs: Sequence[str] = ()) -> dict:
    """Header embedded in every output.

    Input files enter the hash by content, and output locations are left out,
    so the header (and the bytes after it) do not depend on where files live.
    """
    cfg = {k: v for k, v in cfg.items() if k not in _LOCATION_KEYS}
    digests = {os.path.basename(p): _file_digest(p) for p in inputs}
    blob = json.dumps({"command": command, "config": cfg, "inputs": digests}, sort_keys=True)
    return {
        "tool": "traumanet",
        "version": __version__,
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "seed": cfg.get("seed", 0),
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "config": {k: cfg[k] for k in sorted(cfg)},
        "inputs": digests,
    }


def _header_lines(prov: dict) -> str:
    return "\n".join([
        f"traumanet {prov['version']} {prov['command']}",
        f"config_hash={prov['config_hash']} seed={prov['seed']} artifact_version={prov['artifact_version']}",
        "config=" + json.dumps(prov["config"], sort_keys=True),
    ])


def _comment(prov: dict) -> str:
    return "".join(f"# {line}\n" for line in _header_lines(prov).splitlines())


def _write_json(path: str, prov: dict, payload) -> None:
    write_text_atomic(path, json.dumps({"provenance": prov, "result": payload}, indent=2) + "\n")


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _read(path: str):
    if not os.path.exists(path):
        raise DataValidationError(f"{path}: no such file")
    return read_cohort_csv(path)


def _excluded_csv(records, prov: dict) -> str:
    reasons = [["; ".join(exclusion_reasons(r))] for r in records]
    return cohort_to_csv(records, _header_lines(prov), ("exclusion_reasons",), reasons)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: dict) -> None:
    _require(cfg, "out")
    if cfg["n"] < 1:
        raise UsageError(f"--n must be >= 1, got {cfg['n']}")
    if cfg["age_group"] not in AGE_GROUPS:
        raise UsageError(f"--age-group must be one of {AGE_GROUPS}")
    values = {k: v for k, v in cfg.items() if k in SPEC_KEYS and k not in _SPEC_FIXED}
    values.update(n_records=cfg["n"], age_group=cfg["age_group"], seed=derive_seed(cfg["seed"], "cohort"))
    spec = spec_from_values({k: str(v) for k, v in values.items()})
    spec.validate()
    cohort = sample_cohort(spec)
    prov = provenance("generate", cfg)
    write_text_atomic(cfg["out"], cohort_to_csv(cohort.records, _header_lines(prov)))
    _write_json(cfg["out"] + ".spec.json", prov, {"spec": spec.to_dict(), "intercept": list(cohort.intercept)})


def cmd_preprocess(cfg: dict) -> None:
    _require(cfg, "cohort", "out")
    records = _read(cfg["cohort"])
    prep = prepare_cohort(records, cfg["age_group"], cfg["seed"], cfg["train_fraction"])
    prov = provenance("preprocess", cfg, [cfg["cohort"]])
    out = cfg["out"]
    head = _header_lines(prov)
    write_text_atomic(os.path.join(out, "included.csv"), cohort_to_csv(prep.included, head))
    write_text_atomic(os.path.join(out, "excluded.csv"), _excluded_csv(prep.excluded, prov))
    write_text_atomic(os.path.join(out, "train.csv"), cohort_to_csv(prep.train, head))
    write_text_atomic(os.path.join(out, "test.csv"), cohort_to_csv(prep.test, head))
    write_text_atomic(os.path.join(out, "ed_test.csv"), cohort_to_csv(prep.ed_test, head))
    _write_json(os.path.join(out, "summary.json"), prov, prep.summary())


def train_config_from(cfg: dict) -> TrainConfig:
    kw = {}
    for k, v in cfg.items():
        if k not in TRAIN_KEYS or k == "seed":
            continue
        name = k
        if name == "hidden":
            kw[name] = tuple(int(x) for x in str(v).replace(",", " ").split())
        elif TRAIN_KEYS[name] in (int, "int"):
            kw[name] = int(v)
        else:
            kw[name] = float(v)
    try:
        return TrainConfig(seed=cfg["seed"], **kw)
    except (TypeError, ValueError) as e:
        if isinstance(e, DataValidationError):
            raise UsageError(str(e)) from None
        raise UsageError(f"bad training setting: {e}") from None


def cmd_train(cfg: dict) -> None:
    _require(cfg, "cohort", "out")
    if cfg["scope"] not in SCOPES:
        raise UsageError(f"--scope must be one of {SCOPES}")
    tcfg = train_config_from(cfg)
    records = _read(cfg["cohort"])
    prep = prepare_cohort(records, cfg["age_group"], cfg["seed"], cfg["train_fraction"])
    artifact = train_model(prep, tcfg, cfg["scope"], cfg["age_group"])
    prov = provenance("train", cfg, [cfg["cohort"]])
    out = cfg["out"]
    save_artifact(artifact, os.path.join(out, "model.json"), provenance=prov)
    buf = io.StringIO()
    buf.write(_comment(prov))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase", "epoch", "loss"])
    for phase, epoch, loss in artifact.log:
        w.writerow([phase, epoch, repr(loss)])
    write_text_atomic(os.path.join(out, "train_log.csv"), buf.getvalue())
    head = _header_lines(prov)
    write_text_atomic(os.path.join(out, "test.csv"), cohort_to_csv(prep.test_for(cfg["scope"]), head))
    write_text_atomic(os.path.join(out, "included.csv"), cohort_to_csv(prep.included, head))
    write_text_atomic(os.path.join(out, "excluded.csv"), _excluded_csv(prep.excluded, prov))
    _write_json(os.path.join(out, "run.json"), prov, {"split": prep.summary(), "train_config": tcfg.to_dict()})


def cmd_evaluate(cfg: dict, command: str = "evaluate") -> None:
    _require(cfg, "model", "test", "out")
    if cfg["age_group"] not in AGE_GROUPS:
        raise UsageError(f"--age-group must be one of {AGE_GROUPS}")
    if cfg.get("threshold") is not None and not 0.0 < cfg["threshold"] < 1.0:
        raise UsageError("--threshold must be in (0,1)")
    if cfg["n_boot"] < 1:
        raise UsageError("--n-boot must be >= 1")
    artifact = load_artifact(cfg["model"])
    records = _read(cfg["test"])
    included, _ = filter_cohort(records)
    opts = EvalOptions(threshold=cfg.get("threshold"), ablate_mechanism=cfg.get("ablate_mechanism"),
                       age_group=cfg["age_group"], n_boot=cfg["n_boot"],
                       seed=derive_seed(cfg["seed"], "bootstrap"), strict=cfg["strict"])
    reports = evaluate(artifact, included, opts)
    prov = provenance(command, cfg, [cfg["model"], cfg["test"]])
    out = cfg["out"]
    _write_json(os.path.join(out, "report.json"), prov, [r.to_dict() for r in reports])
    title = f"{artifact.age_group} model ({artifact.scope}), evaluated on age group {cfg['age_group']}"
    write_text_atomic(os.path.join(out, "report.txt"), _comment(prov) + render_table(reports, title))
    write_text_atomic(os.path.join(out, "report.csv"), _comment(prov) + reports_to_csv(reports))


def cmd_stats(cfg: dict) -> None:
    _require(cfg, "included", "excluded", "out")
    included, excluded = _read(cfg["included"]), _read(cfg["excluded"])
    results = compare_cohorts(included, excluded, cfg["alpha"], welch=cfg["welch"])
    prov = provenance("stats", cfg, [cfg["included"], cfg["excluded"]])
    out = cfg["out"]
    _write_json(os.path.join(out, "stats.json"), prov, [r.to_dict() for r in results])
    write_text_atomic(os.path.join(out, "stats.txt"), _comment(prov) + render_results(results, cfg["alpha"]))


def cmd_predict(cfg: dict) -> None:
    _require(cfg, "model", "input", "out")
    artifact = load_artifact(cfg["model"])
    records = _read(cfg["input"])
    included, excluded = filter_cohort(records)
    p, label = predict(artifact, included, strict=cfg["strict"])
    prov = provenance("predict", cfg, [cfg["model"], cfg["input"]])
    extra = [[repr(float(a)), str(int(b))] for a, b in zip(p, label)]
    out = cfg["out"]
    write_text_atomic(os.path.join(out, "scores.csv"),
                      cohort_to_csv(included, _header_lines(prov), ("probability", "predicted_death"), extra))
    write_text_atomic(os.path.join(out, "excluded.csv"), _excluded_csv(excluded, prov))


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": lambda cfg: cmd_evaluate(cfg, "ablate"),
    "stats": cmd_stats,
    "predict": cmd_predict,
}


# ---------------------------------------------------------------------------
# argument parsing


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="traumanet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"traumanet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a synthetic cohort CSV (plus <out>.spec.json)",
        "preprocess": "apply inclusion filter and 70/30 split without training",
        "train": "filter, split, fit schema and train (transfer for ed_only, single phase for hospital_and_ed)",
        "evaluate": "metrics with bootstrap CIs on a held-out CSV",
        "ablate": "evaluate with and without one injury mechanism (default Fall)",
        "stats": "compare included vs excluded cohorts",
        "predict": "score records with a trained model",
    }
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="flat key=value settings file; flags take precedence")
        for key, typ in keys.items():
            dest = key.replace(".", "__")
            if typ is bool:
                p.add_argument(_flag(key), dest=dest, action=argparse.BooleanOptionalAction, default=None)
            elif key in ("n", "n_boot"):
                p.add_argument(_flag(key), dest=dest, type=int, default=None)
            else:
                p.add_argument(_flag(key), dest=dest, default=None)
        if name in ("evaluate", "ablate", "predict"):
            p.add_argument("--lenient", dest="strict", action="store_const", const=False, default=None,
                           help="score unseen categories as an all-zero one-hot block")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with status 2 on usage errors
    command = args.command
    flags = {k.replace("__", "."): v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = merge_config(command, file_values, flags)
        COMMANDS[command](cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"traumanet {command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, CalibrationError, BootstrapError, ArithmeticError) as e:
        print(f"traumanet {command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataValidationError, OSError, ValueError) as e:
        print(f"traumanet {command}: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
