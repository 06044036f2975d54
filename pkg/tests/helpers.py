import numpy as np


def fd_grad(f, w, h=1e-6):
    """Central-difference gradient of scalar ``f`` w.r.t. the array `w` (modified in place)."""
    g = np.zeros_like(w, dtype=np.float64)
    flat, gflat = w.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def direction_error(u, v):
    """Distance between the unit vectors of `u` and `v`."""
    return float(np.linalg.norm(u / np.linalg.norm(u) - v / np.linalg.norm(v)))
