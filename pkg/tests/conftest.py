import numpy as np


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar f(arrays) wrt every entry.

    ``arrays`` are mutated in place during probing and restored afterwards.
    Returns one gradient array per input, same shapes.
    """
    grads = [np.zeros_like(a) for a in arrays]
    for a, g in zip(arrays, grads):
        flat, gflat = a.ravel(), g.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = f(arrays)
            flat[j] = orig - h
            fm = f(arrays)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * h)
    return grads


def max_rel_err(got, want, floor=1e-8):
    """Max elementwise |got-want| / max(|want|, floor)."""
    got, want = np.asarray(got), np.asarray(want)
    return float(np.max(np.abs(got - want) / np.maximum(np.abs(want), floor)))
