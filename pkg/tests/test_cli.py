import csv
import dataclasses
import json
import subprocess
import sys

import pytest

from traumanet.cli import UsageError, main, merge_config, read_config_file
from traumanet.domain import read_cohort_csv, write_cohort_csv
from traumanet.train import load_artifact

SMALL_NET = ["--epochs-phase1", "1", "--epochs-phase2", "2", "--hidden", "8", "--batch-size", "256"]


def data_rows(path):
    with open(path) as fh:
        return [line for line in fh if not line.startswith("#")][1:]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cohort = str(d / "cohort.csv")
    assert main(["generate", "--n", "20000", "--age-group", "children", "--seed", "3", "--out", cohort]) == 0
    assert main(["train", "--cohort", cohort, "--age-group", "children", "--seed", "3",
                 "--out", str(d / "ed"), *SMALL_NET]) == 0
    return d, cohort


def test_generate_writes_requested_rows(work):
    d, cohort = work
    assert len(data_rows(cohort)) == 20_000
    spec = json.loads(open(cohort + ".spec.json").read())
    assert spec["result"]["spec"]["n_records"] == 20_000
    assert spec["provenance"]["seed"] == 3


def test_generate_is_byte_identical(tmp_path):
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    for out in (a, b):
        assert main(["generate", "--n", "300", "--seed", "9", "--out", out]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["generate", "--n", "0", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["generate", "--n", "10"]) == 2  # no --out
    with pytest.raises(SystemExit) as e:
        main(["generate", "--colour", "blue"])
    assert e.value.code == 2
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nn = 40\nseed = 5\n")
    out = str(tmp_path / "x.csv")
    assert main(["generate", "--config", str(cfg), "--n", "25", "--out", out]) == 0
    assert len(data_rows(out)) == 25
    merged = merge_config("generate", read_config_file(str(cfg)), {"n": None})
    assert (merged["n"], merged["seed"]) == (40, 5)
    cfg.write_text("just words\n")
    with pytest.raises(UsageError):
        read_config_file(str(cfg))


def test_missing_input_exits_3(tmp_path):
    assert main(["train", "--cohort", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 3


def test_train_outputs(work):
    d, _ = work
    ed = d / "ed"
    log = list(csv.DictReader(line for line in open(ed / "train_log.csv") if not line.startswith("#")))
    assert [int(r["phase"]) for r in log] == [1, 2, 2]
    art = load_artifact(str(ed / "model.json"))
    assert art.scope == "ed_only" and art.config.hidden == (8,)
    run = json.loads(open(ed / "run.json").read())
    split = run["result"]["split"]
    assert len(read_cohort_csv(str(ed / "test.csv"))) == split["ed_test_rows"]
    assert len(data_rows(str(ed / "included.csv"))) + len(data_rows(str(ed / "excluded.csv"))) == 20_000


def test_train_hospital_scope_is_single_phase(work):
    d, cohort = work
    out = d / "hed"
    assert main(["train", "--cohort", cohort, "--age-group", "children", "--seed", "3",
                 "--scope", "hospital_and_ed", "--out", str(out), *SMALL_NET]) == 0
    art = load_artifact(str(out / "model.json"))
    assert art.scope == "hospital_and_ed"
    assert {p for p, _, _ in art.log} == {1}
    assert main(["train", "--cohort", cohort, "--scope", "icu", "--out", str(out)]) == 2


def test_evaluate_and_ablate(work):
    d, _ = work
    ed = d / "ed"
    out = d / "eval"
    args = ["--model", str(ed / "model.json"), "--test", str(ed / "test.csv"), "--n-boot", "50"]
    assert main(["evaluate", *args, "--out", str(out)]) == 0
    (rep,) = json.loads(open(out / "report.json").read())["result"]
    assert 0 <= rep["auc"] <= 1 and rep["auc_ci"][0] <= rep["auc"] <= rep["auc_ci"][1]
    assert "AUC (95% CI)" in open(out / "report.txt").read()
    assert main(["ablate", *args, "--out", str(d / "abl")]) == 0
    with_fall, no_fall = json.loads(open(d / "abl" / "report.json").read())["result"]
    assert (with_fall["label"], no_fall["label"]) == ("with_fall", "no_fall")
    assert with_fall["n_rows"] - no_fall["n_rows"] == no_fall["rows_removed"] > 0
    assert main(["evaluate", *args, "--threshold", "1.5", "--out", str(out)]) == 2


def test_evaluate_is_reproducible(work):
    d, _ = work
    ed = d / "ed"
    outs = []
    for name in ("r1", "r2"):
        assert main(["evaluate", "--model", str(ed / "model.json"), "--test", str(ed / "test.csv"),
                     "--n-boot", "30", "--seed", "4", "--out", str(d / name)]) == 0
        outs.append(open(d / name / "report.json", "rb").read())
    assert outs[0] == outs[1]


def test_stats_reports_five_comparisons(work):
    d, _ = work
    ed = d / "ed"
    out = d / "stats"
    assert main(["stats", "--included", str(ed / "included.csv"), "--excluded", str(ed / "excluded.csv"),
                 "--out", str(out)]) == 0
    results = json.loads(open(out / "stats.json").read())["result"]
    assert [r["label"] for r in results] == ["age", "gcs_total", "iss", "sex", "comorbidity_presence"]
    assert all(0 <= r["p_value"] <= 1 for r in results)


def test_predict_rows_and_exclusions(work):
    d, cohort = work
    out = d / "pred"
    assert main(["predict", "--model", str(d / "ed" / "model.json"), "--input", cohort, "--out", str(out)]) == 0
    scores = data_rows(str(out / "scores.csv"))
    excluded = data_rows(str(out / "excluded.csv"))
    assert len(scores) + len(excluded) == 20_000
    header = next(line for line in open(out / "scores.csv") if not line.startswith("#"))
    assert header.rstrip().endswith("probability,predicted_death")


def test_lenient_scoring_of_unseen_category(work, tmp_path):
    _, cohort = work
    records = read_cohort_csv(cohort)
    without = str(tmp_path / "no_drowning.csv")
    write_cohort_csv(without, [r for r in records if r.injury_mechanism != "drowning_submersion"])
    model = tmp_path / "m"
    assert main(["train", "--cohort", without, "--age-group", "children", "--scope", "hospital_and_ed",
                 "--out", str(model), *SMALL_NET]) == 0
    odd = str(tmp_path / "odd.csv")
    write_cohort_csv(odd, [dataclasses.replace(records[0], injury_mechanism="drowning_submersion")])
    args = ["predict", "--model", str(model / "model.json"), "--input", odd]
    assert main([*args, "--out", str(tmp_path / "strict")]) == 3
    assert main([*args, "--out", str(tmp_path / "lenient"), "--lenient"]) == 0
    assert len(data_rows(str(tmp_path / "lenient" / "scores.csv"))) == 1


def test_console_script_runs():
    r = subprocess.run([sys.executable, "-m", "traumanet.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip().endswith("0.1.0")
