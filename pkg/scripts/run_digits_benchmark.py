"""Desk-scale image benchmark: 8x8 digits at eps in {inf, 1}, 5 seeds each.

Builds the digit container if needed, fans out pipeline runs two at a time,
and prints the per-epsilon mean metrics. Roughly 10 minutes on two cores.

Usage: python scripts/run_digits_benchmark.py [out_root]
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

SEEDS = [0, 1, 2, 3, 4]
EPSILONS = ["none", "1"]


def run_batch(commands, max_parallel=2):
    pending = list(commands)
    running = []
    while pending or running:
        while pending and len(running) < max_parallel:
            cmd = pending.pop(0)
            running.append((subprocess.Popen(cmd), cmd))
        proc, cmd = running.pop(0)
        if proc.wait() != 0:
            sys.exit(f"failed: {' '.join(map(str, cmd))}")


def main():
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/digits")
    root.mkdir(parents=True, exist_ok=True)
    container = root / "digits.ntki"
    if not container.exists():
        subprocess.run([sys.executable, "scripts/make_digits_container.py",
                        str(container)], check=True)

    commands = []
    for eps in EPSILONS:
        for seed in SEEDS:
            commands.append([
                sys.executable, "-m", "ntksynth.cli", "pipeline",
                "--preset", "desk_digits", "--dataset", str(container),
                "--out-dir", str(root / f"eps_{eps}_seed_{seed}"),
                "--epsilon", eps, "--seed", str(seed)])
    run_batch(commands)

    for eps in EPSILONS:
        reports = [json.loads((root / f"eps_{eps}_seed_{s}" / "report.json").read_text())
                   for s in SEEDS]
        for clf in sorted(reports[0]["averaged"]):
            means = {m: float(np.mean([r["averaged"][clf][m] for r in reports]))
                     for m in reports[0]["averaged"][clf]}
            print(f"eps={eps:<4} {clf:<7} "
                  + " ".join(f"{k}={v:.4f}" for k, v in sorted(means.items())))


if __name__ == "__main__":
    main()
