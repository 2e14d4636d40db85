"""Central finite differences for gradient checks."""

import numpy as np


def fd_grad(f, arr, coords, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. ``arr`` at flat ``coords``."""
    out = np.empty(len(coords))
    flat = arr.reshape(-1)
    for i, c in enumerate(coords):
        old = flat[c]
        flat[c] = old + h
        fp = f()
        flat[c] = old - h
        fm = f()
        flat[c] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def sample_coords(params, n, rng):
    """``n`` (name, flat index) pairs spread over a dict of tensors."""
    names = sorted(params)
    sizes = np.array([params[k].data.size for k in names])
    picks = []
    for _ in range(n):
        k = rng.choice(len(names), p=sizes / sizes.sum())
        picks.append((names[k], int(rng.integers(sizes[k]))))
    return picks
