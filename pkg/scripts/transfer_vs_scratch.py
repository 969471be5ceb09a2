"""Does hospital-outcome pretraining help when ED deaths are scarce?

Shrinks the share of deaths that happen in the ED so the ED training set holds
only a few dozen positives, then compares the transfer model against one
trained on the ED rows (plus SMOTE) alone, over several seeds.

    python scripts/transfer_vs_scratch.py --seeds 1,2,3,4,5
"""

import argparse
import dataclasses

import numpy as np

from traumanet.cohort_synth import default_spec, generate
from traumanet.domain import label_mortality
from traumanet.evaluation import auc
from traumanet.train import TrainConfig, predict
from traumanet.workflow import prepare_cohort, train_from_scratch_ed, train_model


def run(seed: int, n: int, ed_death_fraction: float, e1: int, e2: int) -> tuple[int, float, float]:
    spec = dataclasses.replace(default_spec("adults", n, seed=seed), ed_death_fraction=ed_death_fraction)
    prep = prepare_cohort(generate(spec), "adults", seed=seed)
    cfg = TrainConfig(epochs_phase1=e1, epochs_phase2=e2, seed=seed)
    y = np.array([label_mortality(r.disposition) for r in prep.ed_test])
    transfer = auc(predict(train_model(prep, cfg, "ed_only", "adults"), prep.ed_test)[0], y)
    scratch = auc(predict(train_from_scratch_ed(prep, cfg, "adults"), prep.ed_test)[0], y)
    return prep.summary()["ed_train_positives"], transfer, scratch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--ed-death-fraction", type=float, default=0.1)
    ap.add_argument("--epochs-phase1", type=int, default=5)
    ap.add_argument("--epochs-phase2", type=int, default=20)
    args = ap.parse_args()

    rows = []
    print(f"{'seed':>5}{'ED train positives':>20}{'transfer AUC':>14}{'scratch AUC':>13}")
    for seed in (int(s) for s in args.seeds.split(",")):
        pos, t, s = run(seed, args.n, args.ed_death_fraction, args.epochs_phase1, args.epochs_phase2)
        rows.append((t, s))
        print(f"{seed:>5}{pos:>20}{t:>14.4f}{s:>13.4f}")
    t, s = np.mean(rows, axis=0)
    print(f"{'mean':>5}{'':>20}{t:>14.4f}{s:>13.4f}")


if __name__ == "__main__":
    main()
