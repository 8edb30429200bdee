"""Run the whole staged experiment at toy scale in a few minutes: tiny
cohort, short trainings, a handful of synthesized candidates, QC gating,
downstream arms and the final report.

The point is to show the stage graph and the artifacts each stage leaves
behind, not to reach good numbers; see demos/full_experiment_config.json for
a configuration sized to produce meaningful results.

    python3 demos/small_experiment_end_to_end.py --out /tmp/small_experiment
"""

import argparse
import json
import os

from lgesynthlab import pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="/tmp/small_experiment")
    args = ap.parse_args()

    cfg = pipeline.ExperimentConfig.from_dict({
        "cohort": {"n_patients": 12, "images_per_patient": 2,
                   "split_fractions": [0.5, 0.25, 0.25]},
        "gen": {"ae_max_epochs": 40, "ae_error_ceiling": 0.06,
                "base_epochs": 30, "control_epochs": 10, "batch_size": 8},
        "reward_seg": {"epochs": 30, "batch_size": 8},
        "downstream_seg": {"epochs": 10, "batch_size": 8},
        "synthesis": {"n_candidates": 8, "n_targets": [0],
                      "sampling_steps": 10, "guidance_scale": 9.0},
        "seed": 0, "seeds": [0], "out_root": args.out,
    })

    for entry in pipeline.run_all(cfg):
        print(f"{entry.stage:<14} {entry.wall_time:7.1f}s  outputs {entry.outputs_hash[:12]}")

    with open(os.path.join(args.out, "qc", "qc_results.jsonl")) as fh:
        rows = [json.loads(line) for line in fh]
    n_pass = sum(r["passed"] for r in rows)
    print(f"\nQC: {n_pass}/{len(rows)} candidates passed the Dice > 0.6 gate")
    print(f"report: {os.path.join(args.out, 'report', 'report.txt')}")
    with open(os.path.join(args.out, "report", "report.txt")) as fh:
        print("\n" + fh.read())


if __name__ == "__main__":
    main()
