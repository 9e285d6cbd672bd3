"""Empirical transfer function estimate on the ``M``-point grid and its
piecewise-constant extension to all frequencies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from types import SimpleNamespace
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_records, op_norms
from .exceptions import GridMismatch, MissingCell
from .lti import frequency_response, impulse_response, strict_stability_norm
from .spectral import grid_indices, stack

DEFAULT_COND_CAP = 1e8
ZERO_INPUT_RTOL = 1e-12


@dataclass(frozen=True)
class EtfeResult:
    """Grid estimates ``G_hat[l]`` at ``w = 2 pi l / M``.

    Absent estimates (singular or ill-conditioned input) are NaN and flagged
    ``False`` in ``defined``.
    """

    M: int
    N: int
    estimates: np.ndarray
    defined: np.ndarray
    condition: np.ndarray
    errors: np.ndarray | None = None

    @property
    def N_p(self):
        return self.N // self.M

    @property
    def omegas(self):
        return 2 * np.pi * np.arange(self.M) / self.M

    @property
    def singular(self):
        return np.flatnonzero(~self.defined).tolist()

    def with_errors(self, truth):
        return replace(self, errors=frequency_errors(self, truth))

    def to_csv(self, path):
        d_y, d_u = self.estimates.shape[1:]
        entries = [(i, j) for i in range(d_y) for j in range(d_u)]
        header = ["ell", "omega"]
        for i, j in entries:
            header += [f"G_{i}{j}_re", f"G_{i}{j}_im"]
        header += ["condition", "error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for ell in range(self.M):
                row = [ell, repr(2 * math.pi * ell / self.M)]
                for i, j in entries:
                    g = self.estimates[ell, i, j]
                    row += [repr(float(g.real)), repr(float(g.imag))]
                row.append(repr(float(self.condition[ell])))
                row.append("" if self.errors is None else repr(float(self.errors[ell])))
                w.writerow(row)


def etfe(dfts, M, cond_cap=DEFAULT_COND_CAP):
    """``G_hat_k = Y_k U_k^{-1}`` at ``k = l N_p`` wherever ``cond(U_k) <= cond_cap``."""
    N = dfts.N
    if N % M:
        raise GridMismatch(f"M={M} does not divide N={N}")
    ks = grid_indices(M, N)
    pos = {int(k): n for n, k in enumerate(dfts.ks)}
    try:
        idx = np.array([pos[int(k)] for k in ks])
    except KeyError as err:
        raise ValueError(f"stacked DFTs lack grid index {err.args[0]}") from None
    U = dfts.U[idx]
    Y = dfts.Y[idx]
    s = np.linalg.svd(U, compute_uv=False)
    # rounding residue of an unexcited frequency counts as exactly singular
    zero = ZERO_INPUT_RTOL * float(np.max(s[:, 0])) if s.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(s[:, -1] > zero, s[:, 0] / s[:, -1], np.inf)
    ok = cond <= cond_cap
    est = np.full((M, Y.shape[1], U.shape[2]), np.nan + 0j)
    if ok.any():
        # G U = Y  <=>  U^T G^T = Y^T
        GT = np.linalg.solve(np.swapaxes(U[ok], 1, 2), np.swapaxes(Y[ok], 1, 2))
        est[ok] = np.swapaxes(GT, 1, 2)
    return EtfeResult(M=M, N=N, estimates=est, defined=ok, condition=cond)


def cell_index(omega, M):
    """Grid cell whose half-open interval ``[w_l - pi/M, w_l + pi/M)`` contains ``omega``."""
    x = np.asarray(omega, dtype=float) * M / (2 * np.pi)
    return np.mod(np.floor(x + 0.5).astype(np.int64), M)


def naive_extend(result, omega):
    """Piecewise-constant extension of the grid estimates to arbitrary ``omega``."""
    cells = cell_index(omega, result.M)
    missing = ~result.defined[np.atleast_1d(cells)]
    if missing.any():
        raise MissingCell(f"no estimate for cell {int(np.atleast_1d(cells)[missing][0])}")
    return result.estimates[cells]


def frequency_errors(result, truth):
    """``||G(e^{j 2 pi l/M}) - G_hat[l]||_op`` per grid index (NaN where absent)."""
    G = frequency_response(truth, result.omegas)
    return op_norms(G - result.estimates)


def grid_error(result, truth):
    """Maximum operator-norm error over the ``M`` grid frequencies."""
    if not result.defined.all():
        raise MissingCell(f"grid estimates absent at {result.singular}")
    return float(np.max(frequency_errors(result, truth)))


class HinfError(NamedTuple):
    value: float
    slack: float


def hinf_error(result, truth, grid_density=None, G_star=None):
    """Fine-grid surrogate of ``sup_w ||G - G_hat^N||_op``.

    The maximum is taken over ``grid_density`` uniform frequencies; ``slack``
    is ``||G||_* pi / grid_density`` and bounds what the grid can miss of the
    truth's variation.
    """
    M = result.M
    if grid_density is None:
        grid_density = 8 * M
    if grid_density < 4 * M:
        raise ValueError(f"grid_density must be at least 4 M = {4 * M}")
    w = 2 * np.pi * np.arange(grid_density) / grid_density
    diff = frequency_response(truth, w) - naive_extend(result, w)
    if G_star is None:
        G_star = strict_stability_norm(impulse_response(truth))
    return HinfError(float(np.max(op_norms(diff))), G_star * np.pi / grid_density)


class EmpiricalTransferFunctionEstimator(BaseEstimator):
    """ETFE as an estimator: ``fit(u, y)`` on periodic-input records, ``predict(omega)``.

    Parameters
    ----------
    M : int
        Number of grid frequencies; must divide the record length.
    cond_cap : float
        Grid frequencies whose stacked input DFT has a larger condition number
        are left undefined.

    Attributes
    ----------
    result_ : EtfeResult
    estimates_ : ndarray of shape (M, d_y, d_u)
    grid_frequencies_ : ndarray of shape (M,)
    """

    def __init__(self, M=127, cond_cap=DEFAULT_COND_CAP):
        self.M = M
        self.cond_cap = cond_cap

    def fit(self, X, y=None):
        """Fit from input records ``X`` and output records ``y``, each
        ``(n_exp, N, channels)``; ``X`` may also be a ``TrajectorySet``."""
        if y is None:
            traj = X
            u, yy = check_records(traj.u, "u"), check_records(traj.y, "y")
        else:
            u, yy = check_records(X, "X"), check_records(y, "y")
        if u.shape[:2] != yy.shape[:2]:
            raise ValueError("X and y must hold the same number of equally long records")
        N = u.shape[1]
        if N % self.M:
            raise GridMismatch(f"M={self.M} does not divide N={N}")
        dfts = stack(SimpleNamespace(u=u, y=yy), grid_indices(self.M, N))
        self.result_ = etfe(dfts, self.M, self.cond_cap)
        self.estimates_ = self.result_.estimates
        self.grid_frequencies_ = self.result_.omegas
        self.n_features_in_ = u.shape[2]
        return self

    def predict(self, omega):
        check_is_fitted(self, "result_")
        return naive_extend(self.result_, omega)

    def grid_error(self, truth):
        check_is_fitted(self, "result_")
        return grid_error(self.result_, truth)

    def hinf_error(self, truth, grid_density=None):
        check_is_fitted(self, "result_")
        return hinf_error(self.result_, truth, grid_density)
