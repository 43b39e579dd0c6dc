import numpy as np

from hitlfusion.neural import loss_and_gradient

# Central differences at step 1e-6 carry round-off of roughly eps * E / h,
# about 1e-10 here, so coordinates with |g| below the floor are compared
# on an absolute scale of floor * tol.
DENOM_FLOOR = 1e-4


def fd_gradient(flat, dims, X, Y, step=1e-6):
    out = np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        out[i] = (loss_and_gradient(flat + e, dims, X, Y)[0] - loss_and_gradient(flat - e, dims, X, Y)[0]) / (2 * step)
    return out


def relative_error(analytic, numeric) -> np.ndarray:
    """Per coordinate: |a - n| / max(|a|, |n|, DENOM_FLOOR)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return np.abs(analytic - numeric) / denom
