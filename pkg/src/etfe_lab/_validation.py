"""Input validation helpers shared across modules."""
import numpy as np

from .exceptions import InvalidDelta, LengthMismatch


def check_records(x, name="x"):
    """Coerce experiment records to a finite float array ``(n_exp, N, channels)``.

    Accepts a single 1-D record, a 2-D ``(N, channels)`` record, or a
    sequence of equally long records.
    """
    if isinstance(x, (list, tuple)) and x and np.ndim(x[0]) >= 1:
        lengths = {np.shape(r)[0] for r in x}
        if len(lengths) > 1:
            raise LengthMismatch(f"{name}: experiments have different lengths {sorted(lengths)}")
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :, None]
    elif arr.ndim == 2:
        arr = arr[None]
    elif arr.ndim != 3:
        raise ValueError(f"{name} must be 1-, 2- or 3-dimensional, got {arr.ndim}")
    if arr.shape[1] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or inf")
    return arr


def op_norms(A):
    """Spectral norms of a stack of matrices ``(..., m, n)``."""
    A = np.asarray(A)
    if A.shape[-1] == 1 or A.shape[-2] == 1:
        return np.sqrt(np.sum(np.abs(A) ** 2, axis=(-2, -1)))
    return np.linalg.norm(A, ord=2, axis=(-2, -1))


def check_probability(delta, name="delta"):
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"{name} must lie in (0, 1), got {delta}")
    return float(delta)
