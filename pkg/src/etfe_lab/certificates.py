"""Finite-sample error certificates for the ETFE, evaluated as numbers.

All tail probabilities are returned raw (they may exceed one); pass
``clip=True`` or use :func:`as_probability` when reporting.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_probability, op_norms
from .exceptions import GridInfeasible, MissingSigmaU, ZeroNoise
from .lti import impulse_response, strict_stability_norm
from .spectral import aliased_spectrum, default_autocovariance, grid_indices


def universal_constant():
    """``c = sqrt(144) * sqrt(4 log 9)``."""
    return 12.0 * math.sqrt(4.0 * math.log(9.0))


def as_probability(p):
    return np.minimum(1.0, p)


def transient_bound(G_star, D_u, N):
    """Uniform bound ``2 ||G||_* D_u / sqrt(N)`` on the deterministic transient."""
    if N < 1:
        raise ValueError("N must be positive")
    return 2.0 * G_star * D_u / math.sqrt(N)


def spectrum_gap_bound(R_star, N):
    """Bound ``2 ||R||_* / N`` on ``||Phi_v(k) - Phi_{v,N}(k)||``."""
    if N < 1:
        raise ValueError("N must be positive")
    return 2.0 * R_star / N


@dataclass(frozen=True)
class Theorem1Terms:
    transient: np.ndarray
    noise: np.ndarray
    snr: np.ndarray

    @property
    def epsilon(self):
        return self.transient + self.noise


def _noise_factor(d_y, d_u, K, sigma_e, log_term, c_on_dy):
    c = universal_constant()
    ratio = K * K / (sigma_e * sigma_e)
    root = math.sqrt(d_u + log_term)
    if c_on_dy:
        return c * (math.sqrt(d_y) + ratio * root)
    return math.sqrt(d_y) + c * ratio * root


def theorem1_bound(delta, M, N, d_u, d_y, K, sigma_e, D_u, G_star, sigma_u, phi_vN):
    """Per-frequency radius ``epsilon_l`` holding jointly with probability ``1 - delta``.

    ``phi_vN`` holds ``Phi_{v,N}(l N_p)`` for every ``l``, shape ``(M, d_y, d_y)``.
    """
    check_probability(delta)
    if N % M:
        raise GridInfeasible(f"M={M} does not divide N={N}")
    sigma_u = np.asarray(sigma_u, dtype=float) if sigma_u is not None else None
    if sigma_u is None or sigma_u.shape != (M,):
        raise MissingSigmaU("sigma_u must be given for every grid frequency")
    if np.any(sigma_u <= 0):
        raise MissingSigmaU(f"sigma_u vanishes at {np.flatnonzero(sigma_u <= 0).tolist()}")
    phi = np.asarray(phi_vN).reshape(M, d_y, d_y)
    phi_op = op_norms(phi)
    if np.any(phi_op == 0) or sigma_e == 0:
        raise ZeroNoise("noise spectrum vanishes")
    snr = sigma_u / np.sqrt(phi_op)
    transient = 2.0 * G_star * D_u * math.sqrt(M) / (sigma_u * N)
    factor = _noise_factor(d_y, d_u, K, sigma_e, math.log(M / delta), c_on_dy=False)
    noise = math.sqrt(M / N) / snr * factor
    return Theorem1Terms(transient=transient, noise=noise, snr=snr)


@dataclass(frozen=True)
class Theorem3Terms:
    lipschitz: float
    transient: float
    noise: float

    @property
    def total(self):
        return self.lipschitz + self.transient + self.noise


def realize_grid(c1_target, N, rtol=0.25, candidates=None):
    """Pick an integer ``M`` dividing ``N`` closest to ``c1_target * N^(1/3)``.

    Returns ``(M, N_p, realized_c1)``. ``candidates`` restricts the admissible
    ``M`` (e.g. ``2**d - 1`` for PRBS).
    """
    target = c1_target * N ** (1.0 / 3.0)
    pool = [m for m in (candidates or range(1, N + 1)) if m >= 1 and N % m == 0]
    if not pool:
        raise GridInfeasible(f"no admissible M divides N={N}")
    M = min(pool, key=lambda m: (abs(m - target), m))
    if abs(M - target) > rtol * target:
        raise GridInfeasible(f"closest M={M} is not within {rtol:.0%} of target {target:.3g}")
    return M, N // M, M / N ** (1.0 / 3.0)


def theorem3_bound(c_1, N, d_u, d_y, K, sigma_e, D_u, G_star, worst_snr, worst_sigma_u, delta):
    """H-infinity bound for the naive estimator with ``M = c_1 N^(1/3)``."""
    check_probability(delta)
    M = c_1 * N ** (1.0 / 3.0)
    Mi = round(M)
    if abs(M - Mi) > 1e-6 * max(1.0, M) or Mi < 1 or N % Mi:
        raise GridInfeasible(f"c_1={c_1} gives M={M:.6g}, not an integer divisor of N={N}")
    lip = math.pi / c_1 * N ** (-1.0 / 3.0) * G_star
    transient = math.sqrt(c_1) * N ** (-5.0 / 6.0) * 2.0 * G_star * D_u / worst_sigma_u
    factor = _noise_factor(d_y, d_u, K, sigma_e, math.log(N / delta), c_on_dy=True)
    noise = math.sqrt(c_1) * N ** (-1.0 / 3.0) / worst_snr * factor
    return Theorem3Terms(lipschitz=lip, transient=transient, noise=noise)


def hw_log_tail(alpha, frob, op, K):
    """Natural log of the Hanson-Wright right-hand side."""
    if op > frob * (1 + 1e-12):
        raise ValueError("operator norm cannot exceed Frobenius norm")
    r = frob * frob / (op * op)
    return math.log(2.0) - min(alpha * alpha * r / (144.0 * K ** 4),
                               alpha * r / (16.0 * math.sqrt(2.0) * K * K))


def hw_tail(alpha, frob, op, K, clip=False):
    """``2 exp(-min(a^2 |A|_F^2 / (144 K^4 |A|^2), a |A|_F^2 / (16 sqrt2 K^2 |A|^2)))``."""
    p = math.exp(hw_log_tail(alpha, frob, op, K))
    return min(1.0, p) if clip else p


def lemma4_log_tail(s, K, sigma_e, phi_vN_k, d_u):
    phi = np.atleast_2d(phi_vN_k)
    tr = float(np.real(np.trace(phi)))
    op = float(np.linalg.norm(phi, ord=2))
    return (2 * d_u * math.log(9.0) + math.log(2.0)
            - s * s * sigma_e ** 4 / K ** 4 * tr / op / 144.0)


def lemma4_tail(s, K, sigma_e, phi_vN_k, d_u, clip=False):
    """``9^(2 d_u) 2 exp(-(s^2/144) (sigma_e^4/K^4) tr(Phi)/||Phi||)``."""
    p = math.exp(lemma4_log_tail(s, K, sigma_e, phi_vN_k, d_u))
    return min(1.0, p) if clip else p


# ---------------------------------------------------------------------------
# assembled report
# ---------------------------------------------------------------------------

@dataclass
class CertificateReport:
    delta: float
    M: int
    N: int
    N_p: int
    d_u: int
    d_y: int
    K: float
    sigma_e: float
    D_u: float
    G_star: float
    R_star: float
    c: float
    c_1: float
    sigma_u: np.ndarray
    snr: np.ndarray
    transient: np.ndarray
    noise: np.ndarray
    transient_cap: float
    spectrum_gap_cap: float
    theorem3: Theorem3Terms | None = None
    worst_snr: float = field(init=False)
    worst_sigma_u: float = field(init=False)

    def __post_init__(self):
        self.worst_snr = float(np.min(self.snr))
        self.worst_sigma_u = float(np.min(self.sigma_u))

    @property
    def epsilon(self):
        return self.transient + self.noise

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "theorem3"}
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["epsilon"] = self.epsilon.tolist()
        d["N_tot"] = self.d_u * self.N
        if self.theorem3 is not None:
            d["theorem3"] = {**asdict(self.theorem3), "total": self.theorem3.total}
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, allow_nan=True)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "omega", "sigma_u", "snr", "transient", "noise", "epsilon"])
            for ell in range(self.M):
                w.writerow([ell, repr(2 * math.pi * ell / self.M), repr(float(self.sigma_u[ell])),
                            repr(float(self.snr[ell])), repr(float(self.transient[ell])),
                            repr(float(self.noise[ell])), repr(float(self.epsilon[ell]))])


def certificate_report(spec, exc, N, delta, G_star=None, R=None):
    """Evaluate every certificate for a simulation setup and a certified excitation.

    With ``spec.noise_std == 0`` the stochastic terms are reported as zero and
    the SNR as infinite.
    """
    check_probability(delta)
    M = exc.period
    if N % M:
        raise GridInfeasible(f"M={M} does not divide N={N}")
    if exc.sigma_u is None:
        raise MissingSigmaU("excitation has not been certified")
    d_u, d_y = spec.plant.input_dim, spec.plant.output_dim
    if G_star is None:
        G_star = strict_stability_norm(impulse_response(spec.plant))
    if R is None:
        R = default_autocovariance(spec)
    sigma_u = np.asarray(exc.sigma_u, dtype=float)
    phi = aliased_spectrum(R, N, grid_indices(M, N))
    if spec.noise_std == 0.0:
        if np.any(sigma_u <= 0):
            raise MissingSigmaU(f"sigma_u vanishes at {np.flatnonzero(sigma_u <= 0).tolist()}")
        snr = np.full(M, np.inf)
        transient = 2.0 * G_star * exc.amplitude_bound * math.sqrt(M) / (sigma_u * N)
        noise = np.zeros(M)
    else:
        terms = theorem1_bound(delta, M, N, d_u, d_y, spec.subgaussian_K, spec.noise_std,
                               exc.amplitude_bound, G_star, sigma_u, phi)
        snr, transient, noise = terms.snr, terms.transient, terms.noise
    c1 = M / N ** (1.0 / 3.0)
    th3 = None
    if spec.noise_std > 0:
        th3 = theorem3_bound(c1, N, d_u, d_y, spec.subgaussian_K, spec.noise_std,
                             exc.amplitude_bound, G_star, float(np.min(snr)),
                             float(np.min(sigma_u)), delta)
    return CertificateReport(
        delta=delta, M=M, N=N, N_p=N // M, d_u=d_u, d_y=d_y, K=spec.subgaussian_K,
        sigma_e=spec.noise_std, D_u=exc.amplitude_bound, G_star=G_star, R_star=R.star_norm,
        c=universal_constant(), c_1=c1, sigma_u=sigma_u, snr=snr, transient=transient,
        noise=noise, transient_cap=transient_bound(G_star, exc.amplitude_bound, N),
        spectrum_gap_cap=spectrum_gap_bound(R.star_norm, N), theorem3=th3,
    )
