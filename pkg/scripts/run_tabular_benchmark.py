"""Desk-scale tabular benchmark on the synthetic two-class heterogeneous table.

Runs eps in {inf, 1} x 5 seeds with the desk_tabular preset and prints the
mean ROC per epsilon. Point --dataset/--schema-spec at a real table (e.g.
the adult benchmark) via CLI instead for a real-data run.

Usage: python scripts/run_tabular_benchmark.py [out_root]
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from ntksynth.toydata import write_two_class_table_with_spec

SEEDS = [0, 1, 2, 3, 4]
EPSILONS = ["none", "1"]


def main():
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/tabular")
    root.mkdir(parents=True, exist_ok=True)
    csv_path, spec_path = root / "table.csv", root / "spec.json"
    if not csv_path.exists():
        write_two_class_table_with_spec(csv_path, spec_path, 2500, seed=0)

    for eps in EPSILONS:
        for seed in SEEDS:
            cmd = [sys.executable, "-m", "ntksynth.cli", "pipeline",
                   "--preset", "desk_tabular", "--dataset", str(csv_path),
                   "--schema-spec", str(spec_path),
                   "--out-dir", str(root / f"eps_{eps}_seed_{seed}"),
                   "--epsilon", eps, "--seed", str(seed)]
            if subprocess.run(cmd).returncode != 0:
                sys.exit(f"failed: seed {seed} eps {eps}")

    for eps in EPSILONS:
        reports = [json.loads((root / f"eps_{eps}_seed_{s}" / "report.json").read_text())
                   for s in SEEDS]
        for clf in sorted(reports[0]["averaged"]):
            roc = float(np.mean([r["averaged"][clf]["roc_auc"] for r in reports]))
            prc = float(np.mean([r["averaged"][clf]["prc_auc"] for r in reports]))
            print(f"eps={eps:<4} {clf:<7} roc={roc:.4f} prc={prc:.4f}")


if __name__ == "__main__":
    main()
