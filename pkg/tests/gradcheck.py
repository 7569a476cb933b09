"""Central finite-difference gradient checking helpers (float64, h=1e-4)."""

import numpy as np

H = 1e-4
REL_TOL = 1e-4
ZERO_TOL = 1e-9  # both analytic and numeric below this: treat as matching


def relative_error(a: float, b: float) -> float:
    if abs(a) < ZERO_TOL and abs(b) < ZERO_TOL:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def check_group(params, loss_fn, grad, sl, rng, max_checks=None):
    """FD-check a layout slice of the parameter vector against ``grad``.

    Checks every index when the slice is small (or max_checks is None),
    otherwise a random sample. Returns the worst relative error seen.
    """
    idxs = np.arange(sl.start, sl.stop)
    if max_checks is not None and idxs.size > max_checks:
        idxs = rng.choice(idxs, size=max_checks, replace=False)
    worst = 0.0
    for j in idxs:
        orig = params[j]
        params[j] = orig + H
        up = loss_fn()
        params[j] = orig - H
        down = loss_fn()
        params[j] = orig
        fd = (up - down) / (2.0 * H)
        worst = max(worst, relative_error(fd, grad[j]))
    return worst
