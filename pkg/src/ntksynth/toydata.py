"""Synthetic toy datasets for demos, tests, and desk-scale benchmark runs."""

from __future__ import annotations

import csv
import json

import numpy as np

from ntksynth import data as D
from ntksynth.tensor import Rng

__all__ = ["two_class_table_spec", "write_two_class_table", "write_blob_images"]

_SECTORS = ("services", "industry", "agriculture")
_CONTRACTS = ("permanent", "temporary")


def two_class_table_spec() -> dict:
    """Schema spec for the two-class heterogeneous table."""
    return {"columns": {"age": "numeric", "income": "numeric",
                        "sector": "categorical", "contract": "categorical",
                        "outcome": "label"},
            "round_on_decode": ["age"]}


def write_two_class_table(path, n: int, seed: int, positive_fraction: float = 0.5):
    """CSV with two numeric and two categorical columns, class-separated.

    The classes differ in both numeric means and categorical frequencies,
    so a linear model on the real data scores ROC well above 0.9.
    """
    rng = Rng(seed)
    n_pos = int(round(positive_fraction * n))
    rows = []
    for i in range(n):
        pos = i < n_pos
        if pos:
            age = 52.0 + 8.0 * float(rng.normal(()))
            income = 72.0 + 12.0 * float(rng.normal(()))
            sector = _SECTORS[int(rng.choice_weighted(3, 1, np.array([0.6, 0.3, 0.1]))[0])]
            contract = _CONTRACTS[int(rng.choice_weighted(2, 1, np.array([0.75, 0.25]))[0])]
        else:
            age = 34.0 + 8.0 * float(rng.normal(()))
            income = 41.0 + 12.0 * float(rng.normal(()))
            sector = _SECTORS[int(rng.choice_weighted(3, 1, np.array([0.15, 0.3, 0.55]))[0])]
            contract = _CONTRACTS[int(rng.choice_weighted(2, 1, np.array([0.3, 0.7]))[0])]
        rows.append({"age": round(age), "income": round(income, 2),
                     "sector": sector, "contract": contract,
                     "outcome": "pos" if pos else "neg"})
    order = rng.permutation(n)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["age", "income", "sector",
                                                "contract", "outcome"])
        writer.writeheader()
        for i in order:
            writer.writerow(rows[int(i)])


def write_two_class_table_with_spec(csv_path, spec_path, n: int, seed: int,
                                    positive_fraction: float = 0.5):
    write_two_class_table(csv_path, n, seed, positive_fraction)
    with open(spec_path, "w") as fh:
        json.dump(two_class_table_spec(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_blob_images(path, n: int, seed: int, side: int = 6, n_classes: int = 3):
    """Tiny images whose class is a bright blob at a class-specific corner."""
    rng = Rng(seed)
    labels = rng.integers(0, n_classes, size=n).astype(np.uint8)
    centers = [(1, 1), (side - 2, side - 2), (1, side - 2), (side - 2, 1)][:n_classes]
    yy, xx = np.mgrid[0:side, 0:side]
    pixels = np.zeros((n, side, side))
    for i, lab in enumerate(labels):
        cy, cx = centers[lab]
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 2.5)
        pixels[i] = np.clip(bump + 0.08 * rng.normal((side, side)), 0.0, 1.0)
    D.write_images(path, pixels, labels, n_classes=n_classes)
