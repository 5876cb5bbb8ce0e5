"""Write the 8x8 handwritten-digit corpus into the binary image container.

Usage: python scripts/make_digits_container.py [out.ntki]
"""

import sys

import numpy as np
from sklearn.datasets import load_digits

from ntksynth.data import write_images


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "digits.ntki"
    d = load_digits()
    write_images(out, d.images / 16.0, d.target.astype(np.uint8), n_classes=10)
    print(f"wrote {len(d.target)} 8x8 images to {out}")


if __name__ == "__main__":
    main()
