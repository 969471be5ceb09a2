"""Test-time removal of one injury mechanism (default Fall) for the ED-only model.

    python scripts/fall_ablation.py --age-group children --n 200000
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
    ap.add_argument("--age-group", default="children")
    ap.add_argument("--mechanism", default="Fall")
    ap.add_argument("--scope", default="ed_only", choices=("ed_only", "hospital_and_ed"))
    ap.add_argument("--epochs-phase1", type=int, default=10)
    ap.add_argument("--epochs-phase2", type=int, default=20)
    ap.add_argument("--n-boot", type=int, default=1000)
    args = ap.parse_args()

    prep = prepare_cohort(generate(default_spec(args.age_group, args.n, seed=args.seed)),
                          args.age_group, seed=args.seed)
    cfg = TrainConfig(epochs_phase1=args.epochs_phase1, epochs_phase2=args.epochs_phase2, seed=args.seed)
    art = train_model(prep, cfg, args.scope, args.age_group)
    opts = EvalOptions(ablate_mechanism=args.mechanism, age_group=args.age_group,
                       n_boot=args.n_boot, seed=args.seed)
    reports = evaluate(art, prep.test_for(args.scope), opts)
    print(render_table(reports, f"{args.age_group} {args.scope}: with and without {args.mechanism}"))
    print(f"rows removed: {reports[1].extra['rows_removed']} "
          f"({reports[1].extra['fraction_removed']:.2%} of {reports[0].n_rows})")


if __name__ == "__main__":
    main()
