"""Hospital & ED versus ED-only models per age group on one synthetic cohort.

    python scripts/scope_comparison.py --n 200000 --epochs-phase1 10 --epochs-phase2 20
"""

import argparse

from traumanet.cohort_synth import default_spec, generate
from traumanet.evaluation import EvalOptions, evaluate, render_table
from traumanet.train import TrainConfig
from traumanet.workflow import prepare_cohort, train_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--age-groups", default="children,adults")
    ap.add_argument("--epochs-phase1", type=int, default=10)
    ap.add_argument("--epochs-phase2", type=int, default=20)
    ap.add_argument("--n-boot", type=int, default=1000)
    args = ap.parse_args()

    cfg = TrainConfig(epochs_phase1=args.epochs_phase1, epochs_phase2=args.epochs_phase2, seed=args.seed)
    for group in args.age_groups.split(","):
        prep = prepare_cohort(generate(default_spec(group, args.n, seed=args.seed)), group, seed=args.seed)
        reports = []
        for scope, name in (("hospital_and_ed", "Hospital & ED"), ("ed_only", "ED Only")):
            art = train_model(prep, cfg, scope, group)
            rep, = evaluate(art, prep.test_for(scope), EvalOptions(age_group=group, n_boot=args.n_boot,
                                                                  seed=args.seed))
            rep.label = name
            reports.append(rep)
        print(render_table(reports, f"{group}: outcome scope comparison"))


if __name__ == "__main__":
    main()
