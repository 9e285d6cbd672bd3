"""DFTs under the unitary ``1/sqrt(N)`` convention, stacked experiment DFTs,
and noise power spectra computed from a known autocovariance."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GridMismatch, IndexOutOfRange, LengthMismatch, ZeroNoise
from .lti import frequency_response, impulse_response, noise_autocovariance


def dft(signal, k):
    """``(1/sqrt(N)) sum_t z_t exp(-j 2 pi k t / N)`` for one index ``k``."""
    z = np.asarray(signal, dtype=float)
    N = z.shape[0]
    if not 0 <= k < N:
        raise IndexOutOfRange(f"k={k} outside [0, {N})")
    phase = np.exp(-2j * np.pi * k * np.arange(N) / N)
    return np.tensordot(phase, z, axes=(0, 0)) / math.sqrt(N)


def dft_all(signal, axis=0):
    z = np.asarray(signal)
    return np.fft.fft(z, axis=axis) / math.sqrt(z.shape[axis])


def grid_indices(M, N):
    """DFT indices ``l * N/M`` of the ``M`` grid frequencies; requires ``M | N``."""
    if N % M:
        raise GridMismatch(f"M={M} does not divide N={N}")
    return np.arange(M) * (N // M)


@dataclass(frozen=True)
class StackedDfts:
    """Stacked DFTs at the indices ``ks``; arrays are ``(len(ks), rows, n_exp)``."""

    N: int
    ks: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    V: np.ndarray | None = None
    Y_clean: np.ndarray | None = None

    @property
    def omegas(self):
        return 2 * np.pi * self.ks / self.N


def _experiment_array(records):
    if records is None:
        return None
    if isinstance(records, np.ndarray):
        arr = records
    else:
        lengths = {np.shape(r)[0] for r in records}
        if len(lengths) > 1:
            raise LengthMismatch(f"experiments have different lengths {sorted(lengths)}")
        arr = np.asarray(records, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def stack(trajectories, ks=None):
    """Stack per-experiment DFTs column-wise, experiment ``i`` in column ``i``."""
    u = _experiment_array(trajectories.u)
    y = _experiment_array(trajectories.y)
    if u.shape[:2] != y.shape[:2]:
        raise LengthMismatch("input and output records differ in length or count")
    N = u.shape[1]
    ks = np.arange(N) if ks is None else np.asarray(ks, dtype=int)
    if ks.size and (ks.min() < 0 or ks.max() >= N):
        raise IndexOutOfRange("frequency index outside [0, N)")

    def _stack(x):
        if x is None:
            return None
        F = np.fft.fft(x, axis=1)[:, ks, :] / math.sqrt(N)
        return np.transpose(F, (1, 2, 0))

    return StackedDfts(
        N=N, ks=ks, Y=_stack(y), U=_stack(u),
        V=_stack(_experiment_array(getattr(trajectories, "v", None))),
        Y_clean=_stack(_experiment_array(getattr(trajectories, "y_clean", None))),
    )


def transient_term(dfts, plant):
    """``T_{k,N} = Ybar_k - G(e^{j w_k}) U_k`` from the noiseless-output DFTs."""
    if dfts.Y_clean is None:
        raise ValueError("noiseless output DFTs are required")
    G = frequency_response(plant, dfts.omegas)
    return dfts.Y_clean - G @ dfts.U


# ---------------------------------------------------------------------------
# spectra from autocovariance
# ---------------------------------------------------------------------------

def _spectrum(R, omegas, weights):
    lags = R.lags[: weights.size]
    tau = np.arange(lags.shape[0])
    E = np.exp(-1j * np.outer(omegas, tau[1:])) * weights[1:]
    S = np.einsum("kt,tij->kij", E, lags[1:])
    phi = weights[0] * lags[0][None] + S + np.conj(np.swapaxes(S, 1, 2))
    return 0.5 * (phi + np.conj(np.swapaxes(phi, 1, 2)))


def _omegas(N, k):
    k = np.asarray(k)
    return 2 * np.pi * np.atleast_1d(k) / N, k.ndim == 0


def exact_spectrum(R, N, k):
    """``Phi_v(k) = sum_t R_t exp(-j w_k t)`` over all tabulated lags, ``R_-t = R_t^T``."""
    w, scalar = _omegas(N, k)
    phi = _spectrum(R, w, np.ones(R.tau_max + 1))
    return phi[0] if scalar else phi


def aliased_spectrum(R, N, k):
    """``Phi_{v,N}(k) = E V_k V_k^*`` as the Bartlett-weighted lag sum over ``|tau| < N``."""
    w, scalar = _omegas(N, k)
    L = min(N - 1, R.tau_max)
    weights = 1.0 - np.arange(L + 1) / N
    phi = _spectrum(R, w, weights)
    return phi[0] if scalar else phi


def spectrum_gap(R, N, ks):
    phi = exact_spectrum(R, N, ks)
    phin = aliased_spectrum(R, N, ks)
    return np.linalg.norm(phi - phin, ord=2, axis=(-2, -1))


def default_autocovariance(spec):
    """Autocovariance tabulated far enough that omitted lags sit below the tail tolerance."""
    T = impulse_response(spec.noise_filter).horizon
    return noise_autocovariance(spec, 2 * T + 1)


def snr(sigma_u_ell, phi_vN_k):
    """``sigma_u / sqrt(||Phi_{v,N}(k)||_op)``."""
    phi = np.atleast_2d(phi_vN_k)
    op = float(np.linalg.norm(phi, ord=2))
    if op == 0.0:
        raise ZeroNoise("noise spectrum vanishes; SNR is infinite")
    return float(sigma_u_ell) / math.sqrt(op)


@dataclass(frozen=True)
class SpectrumTable:
    N: int
    ks: np.ndarray
    aliased: np.ndarray
    exact: np.ndarray
    gap_bound: float

    @classmethod
    def build(cls, R, N, ks):
        ks = np.asarray(ks, dtype=int)
        return cls(N=N, ks=ks, aliased=aliased_spectrum(R, N, ks),
                   exact=exact_spectrum(R, N, ks), gap_bound=2.0 * R.star_norm / N)

    def to_csv(self, path):
        d = self.aliased.shape[1]
        entries = [(i, j) for i in range(d) for j in range(d)]
        header = ["k", "omega"]
        for name in ("phi_vN", "phi_v"):
            for i, j in entries:
                header += [f"{name}_{i}{j}_re", f"{name}_{i}{j}_im"]
        header.append("gap_bound")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for n, k in enumerate(self.ks):
                row = [int(k), repr(2 * math.pi * k / self.N)]
                for arr in (self.aliased, self.exact):
                    for i, j in entries:
                        row += [repr(float(arr[n, i, j].real)), repr(float(arr[n, i, j].imag))]
                row.append(repr(self.gap_bound))
                w.writerow(row)
