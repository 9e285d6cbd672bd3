"""Discrete-time LTI systems in the backward-shift operator.

Systems are rational, ``G(q) = b(q^-1) / a(q^-1)``, stored entry-wise for the
MIMO case. The impulse-response truncation carries a certified geometric tail
so that the strict-stability functional ``sum_t t ||g_t||`` can be bounded from
above without summing to infinity.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .exceptions import DimensionMismatch, NoConvergence, NotStable

NOISE_LAWS = ("gaussian", "rademacher", "uniform")

# sub-Gaussian parameter per unit standard deviation
_K_FACTOR = {"gaussian": 1.0, "rademacher": 1.0, "uniform": math.sqrt(3.0)}


def subgaussian_parameter(law, std):
    """Declared sub-Gaussian parameter ``K`` of each noise law at standard deviation ``std``."""
    return _K_FACTOR[law] * std


DEFAULT_REL_TOL = 1e-10
ENVELOPE_MARGIN = 0.05
HORIZON_CAP = 2_000_000


def _trim(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.flatnonzero(c)
    return c[: nz[-1] + 1] if nz.size else c[:1] * 0.0


def _as_entries(coeffs, shape=None):
    """Normalise coefficient input to a nested ``[d_y][d_u]`` list of 1-D arrays."""
    if isinstance(coeffs, np.ndarray) and coeffs.ndim == 3:
        return [[coeffs[i, j] for j in range(coeffs.shape[1])] for i in range(coeffs.shape[0])]
    seq = (list, tuple, np.ndarray)
    if len(coeffs) and isinstance(coeffs[0], seq) and len(coeffs[0]) and isinstance(coeffs[0][0], seq):
        return [[np.asarray(e, dtype=float) for e in row] for row in coeffs]
    flat = np.asarray(coeffs, dtype=float)
    if flat.ndim != 1:
        raise ValueError("coefficients must be a flat list or a [d_y][d_u] nested list of lists")
    if shape is None:
        return [[flat]]
    return [[flat for _ in range(shape[1])] for _ in range(shape[0])]


class RationalTransferFunction:
    """Rational transfer function ``b(q^-1)/a(q^-1)``.

    Parameters
    ----------
    numerator : sequence of float, or nested ``[d_y][d_u]`` sequences
        Coefficients ``b_0..b_nb``; index ``s`` holds the ``q^-s`` coefficient.
    denominator : sequence of float, or nested ``[d_y][d_u]`` sequences
        Coefficients ``a_0..a_na``. A flat denominator is shared by every entry.
        Each entry is rescaled so that ``a_0 = 1``.
    """

    def __init__(self, numerator, denominator=(1.0,)):
        num = _as_entries(numerator)
        d_y, d_u = len(num), len(num[0])
        if any(len(row) != d_u for row in num):
            raise DimensionMismatch("ragged numerator matrix")
        den = _as_entries(denominator, shape=(d_y, d_u))
        if len(den) != d_y or any(len(row) != d_u for row in den):
            raise DimensionMismatch("denominator shape does not match numerator")

        self.output_dim = d_y
        self.input_dim = d_u
        self.numerators = []
        self.denominators = []
        for i in range(d_y):
            nrow, drow = [], []
            for j in range(d_u):
                a = np.atleast_1d(np.asarray(den[i][j], dtype=float))
                if a.size == 0 or a[0] == 0.0:
                    raise ValueError("leading denominator coefficient must be non-zero")
                b = np.atleast_1d(np.asarray(num[i][j], dtype=float))
                nrow.append(_trim(b / a[0]))
                drow.append(_trim(a / a[0]))
            self.numerators.append(tuple(nrow))
            self.denominators.append(tuple(drow))
        self.numerators = tuple(self.numerators)
        self.denominators = tuple(self.denominators)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_dict(cls, d):
        return cls(d["numerator"], d.get("denominator", [1.0]))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        if self.output_dim == self.input_dim == 1:
            return {"numerator": self.numerators[0][0].tolist(),
                    "denominator": self.denominators[0][0].tolist()}
        return {"numerator": [[b.tolist() for b in row] for row in self.numerators],
                "denominator": [[a.tolist() for a in row] for row in self.denominators]}

    def scaled(self, c):
        num = [[c * b for b in row] for row in self.numerators]
        return RationalTransferFunction(num, [[a for a in row] for row in self.denominators])

    def __repr__(self):
        return f"RationalTransferFunction({self.to_dict()!r})"

    # -- analysis -------------------------------------------------------------
    @property
    def is_fir(self):
        return all(a.size == 1 for row in self.denominators for a in row)

    def poles(self):
        """Roots of ``z^na a(z^-1)`` collected over all entries."""
        roots = [np.roots(a) for row in self.denominators for a in row if a.size > 1]
        return np.concatenate(roots) if roots else np.zeros(0, dtype=complex)

    def max_pole_modulus(self):
        p = self.poles()
        return float(np.max(np.abs(p))) if p.size else 0.0

    def frequency_response(self, omega):
        return frequency_response(self, omega)

    def filter(self, x):
        """Apply the system from zero initial state.

        ``x`` has shape ``(..., L, d_u)``; leading axes are independent records.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"expected {self.input_dim} input channels, got {x.shape[-1]}")
        out = np.zeros(x.shape[:-1] + (self.output_dim,))
        for i in range(self.output_dim):
            for j in range(self.input_dim):
                b = self.numerators[i][j]
                if not b.any():
                    continue
                out[..., i] += lfilter(b, self.denominators[i][j], x[..., j], axis=-1)
        return out


def load_system(source):
    """Build a system from a mapping or a JSON file path."""
    if isinstance(source, RationalTransferFunction):
        return source
    if isinstance(source, (str, Path)):
        return RationalTransferFunction.from_json(source)
    return RationalTransferFunction.from_dict(source)


# ---------------------------------------------------------------------------
# impulse response and stability functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImpulseResponseTruncation:
    """Impulse-response coefficients ``g_0..g_T`` with a certified tail.

    ``tail_bound`` bounds ``sum_{t>T} t ||g_t||_op``. For ``t > T`` the
    envelope ``||g_t||_op <= envelope_constant * envelope_rate**t`` holds.
    """

    coefficients: np.ndarray
    tail_bound: float
    envelope_constant: float = 0.0
    envelope_rate: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim == 1:
            c = c[:, None, None]
        object.__setattr__(self, "coefficients", c)
        if self.tail_bound < 0:
            raise ValueError("tail_bound must be non-negative")

    @property
    def horizon(self):
        return self.coefficients.shape[0] - 1

    @property
    def op_norms(self):
        g = self.coefficients
        if g.shape[1] == 1 or g.shape[2] == 1:
            return np.sqrt(np.sum(g * g, axis=(1, 2)))
        return np.linalg.norm(g, ord=2, axis=(1, 2))

    def envelope(self, t):
        return self.envelope_constant * np.power(self.envelope_rate, t)


def _weighted_geometric_tail(rho, T):
    """``sum_{t>T} t rho^t`` in closed form."""
    if rho == 0.0:
        return 0.0
    n = T + 1
    return rho ** n * (n - (n - 1) * rho) / (1.0 - rho) ** 2


def _raw_impulse(tf, length):
    imp = np.zeros(length)
    imp[0] = 1.0
    g = np.zeros((length, tf.output_dim, tf.input_dim))
    for i in range(tf.output_dim):
        for j in range(tf.input_dim):
            b = tf.numerators[i][j]
            if b.any():
                g[:, i, j] = lfilter(b, tf.denominators[i][j], imp)
    return g


def _norms(g):
    if g.shape[1] == 1 or g.shape[2] == 1:
        return np.sqrt(np.sum(g * g, axis=(1, 2)))
    return np.linalg.norm(g, ord=2, axis=(1, 2))


def impulse_response(tf, tol=None, horizon=None):
    """Truncated impulse response with certified weighted tail.

    Parameters
    ----------
    tf : RationalTransferFunction
    tol : float, optional
        Target for the certified tail ``sum_{t>T} t ||g_t||``. Defaults to
        ``1e-10`` times the largest coefficient norm.
    horizon : int, optional
        Force the truncation horizon ``T`` instead of choosing it from ``tol``.

    Raises
    ------
    NotStable
        If any pole has modulus ``>= 1``.
    NoConvergence
        If the geometric envelope cannot be fitted below the hard horizon cap.
    """
    if tol is not None and tol <= 0:
        raise ValueError("tol must be positive")
    rho0 = tf.max_pole_modulus()
    if rho0 >= 1.0:
        raise NotStable(f"pole modulus {rho0:.6g} >= 1")

    if tf.is_fir:
        length = max(b.size for row in tf.numerators for b in row)
        T = length - 1 if horizon is None else int(horizon)
        g = _raw_impulse(tf, max(T + 1, length))
        tail = float(np.sum(np.arange(T + 1, g.shape[0]) * _norms(g[T + 1:])))
        return ImpulseResponseTruncation(g[: T + 1], tail, 0.0, 0.0)

    rho = rho0 + ENVELOPE_MARGIN * (1.0 - rho0)
    gap = math.log(rho / rho0) if rho0 > 0 else 1.0
    H = max(256, int(math.ceil(40.0 / gap)))
    while True:
        if H > HORIZON_CAP:
            raise NoConvergence("geometric envelope fit exceeded the horizon cap")
        g = _raw_impulse(tf, H + 1)
        norms = _norms(g)
        t = np.arange(H + 1)
        with np.errstate(divide="ignore"):
            log_ratio = np.where(norms > 0, np.log(np.where(norms > 0, norms, 1.0)) - t * math.log(rho), -np.inf)
        C = float(np.exp(np.max(log_ratio)))
        if np.max(log_ratio[H // 2:]) <= math.log(C) - math.log(2.0):
            break
        H *= 2

    if horizon is None:
        if tol is None:
            tol = DEFAULT_REL_TOL * float(np.max(norms))
        T = 0
        while C * _weighted_geometric_tail(rho, T) > tol:
            T += 1
            if T > HORIZON_CAP:
                raise NoConvergence("tail tolerance not reached below the horizon cap")
    else:
        T = int(horizon)
    if T + 1 > g.shape[0]:
        g = _raw_impulse(tf, T + 1)
    return ImpulseResponseTruncation(g[: T + 1], C * _weighted_geometric_tail(rho, T), C, rho)


def strict_stability_norm(ir):
    """Upper estimate of ``||G||_* = sum_t t ||g_t||_op``."""
    t = np.arange(ir.horizon + 1)
    return float(np.sum(t * ir.op_norms) + ir.tail_bound)


def lipschitz_bound(ir):
    """Bound on ``sup_w ||dG(e^{jw})/dw||_op``; equals the strict-stability norm."""
    return strict_stability_norm(ir)


def frequency_response(tf, omega):
    """Exact ``b(e^{-jw}) / a(e^{-jw})``.

    Returns shape ``(d_y, d_u)`` for scalar ``omega``, else ``(len(omega), d_y, d_u)``.
    """
    w = np.asarray(omega, dtype=float)
    z = np.exp(-1j * np.atleast_1d(w))
    out = np.empty((z.size, tf.output_dim, tf.input_dim), dtype=complex)
    for i in range(tf.output_dim):
        for j in range(tf.input_dim):
            b = tf.numerators[i][j]
            a = tf.denominators[i][j]
            out[:, i, j] = np.polyval(b[::-1], z) / np.polyval(a[::-1], z)
    return out[0] if w.ndim == 0 else out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationSpec:
    """Plant, noise filter, and noise law for ``y = G u + H e``.

    ``past_input`` selects how the input behaves before ``t = 0``:
    ``"periodic"`` keeps the periodic excitation running through the burn-in,
    ``"zero"`` holds it at zero (noise still runs through the burn-in).
    """

    plant: RationalTransferFunction
    noise_filter: RationalTransferFunction
    noise_std: float
    noise_law: str = "gaussian"
    subgaussian_K: float | None = None
    burn_in: int | None = None
    past_input: str = "periodic"

    def __post_init__(self):
        if self.noise_law not in NOISE_LAWS:
            raise ValueError(f"noise_law must be one of {NOISE_LAWS}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.noise_filter.output_dim != self.plant.output_dim:
            raise DimensionMismatch("noise filter and plant must share the output dimension")
        if self.past_input not in ("periodic", "zero"):
            raise ValueError("past_input must be 'periodic' or 'zero'")
        if self.subgaussian_K is None:
            object.__setattr__(self, "subgaussian_K", subgaussian_parameter(self.noise_law, self.noise_std))
        if self.subgaussian_K < self.noise_std:
            raise ValueError("subgaussian_K must dominate noise_std")
        if self.burn_in is None:
            rho = max(self.plant.max_pole_modulus(), self.noise_filter.max_pole_modulus())
            if rho >= 1.0:
                raise NotStable(f"pole modulus {rho:.6g} >= 1")
            object.__setattr__(self, "burn_in", int(math.ceil(10.0 / (1.0 - rho))))
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")

    @property
    def noise_dim(self):
        return self.noise_filter.input_dim

    @classmethod
    def from_dict(cls, d):
        if "noise_std" in d:
            std = float(d["noise_std"])
        else:
            std = math.sqrt(float(d.get("noise_variance", 0.0)))
        return cls(
            plant=load_system(d["plant"]),
            noise_filter=load_system(d.get("noise_filter", {"numerator": [1.0]})),
            noise_std=std,
            noise_law=d.get("noise_law", "gaussian"),
            subgaussian_K=d.get("subgaussian_K"),
            burn_in=d.get("burn_in"),
            past_input=d.get("past_input", "periodic"),
        )

    def to_dict(self):
        return {
            "plant": self.plant.to_dict(),
            "noise_filter": self.noise_filter.to_dict(),
            "noise_std": self.noise_std,
            "noise_law": self.noise_law,
            "subgaussian_K": self.subgaussian_K,
            "burn_in": self.burn_in,
            "past_input": self.past_input,
        }


@dataclass(frozen=True)
class TrajectorySet:
    """``d_u`` independent records of length ``N``; arrays are ``(n_exp, N, channels)``."""

    u: np.ndarray
    y: np.ndarray
    v: np.ndarray
    y_clean: np.ndarray = field(repr=False)

    @property
    def n_experiments(self):
        return self.u.shape[0]

    @property
    def N(self):
        return self.u.shape[1]


def _seed_sequence(seed, *extra):
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    return np.random.SeedSequence(entropy + [int(x) for x in extra])


def draw_noise(law, std, shape, rng):
    if std == 0.0:
        return np.zeros(shape)
    if law == "gaussian":
        return std * rng.standard_normal(shape)
    if law == "rademacher":
        return std * (2.0 * rng.integers(0, 2, size=shape) - 1.0)
    if law == "uniform":
        a = math.sqrt(3.0) * std
        return rng.uniform(-a, a, size=shape)
    raise ValueError(f"unknown noise law {law!r}")


def simulate(spec, excitation, N, seed=0):
    """Simulate ``d_u`` independent experiments of length ``N``.

    Experiment ``i`` draws its noise from a stream derived from ``(seed, i)``;
    the recorded window is ``t = 0..N-1`` after ``spec.burn_in`` warm-up samples.
    """
    if N < 1:
        raise ValueError("N must be positive")
    plant = spec.plant
    experiments = excitation.experiments
    if len(experiments) != plant.input_dim:
        raise DimensionMismatch(
            f"excitation provides {len(experiments)} experiments, plant needs {plant.input_dim}")
    B = spec.burn_in
    L = B + N
    t = np.arange(-B, N)
    n_exp = len(experiments)
    u = np.empty((n_exp, N, plant.input_dim))
    y = np.empty((n_exp, N, plant.output_dim))
    v = np.empty((n_exp, N, plant.output_dim))
    y_clean = np.empty((n_exp, N, plant.output_dim))
    for i, period in enumerate(experiments):
        period = np.asarray(period, dtype=float)
        if period.ndim == 1:
            period = period[:, None]
        M = period.shape[0]
        full_u = period[t % M]
        if spec.past_input == "zero":
            full_u[:B] = 0.0
        yc = plant.filter(full_u)
        rng = np.random.default_rng(_seed_sequence(seed, i))
        e = draw_noise(spec.noise_law, spec.noise_std, (L, spec.noise_dim), rng)
        vi = spec.noise_filter.filter(e)
        u[i] = full_u[B:]
        y_clean[i] = yc[B:]
        v[i] = vi[B:]
        y[i] = y_clean[i] + v[i]
    return TrajectorySet(u=u, y=y, v=v, y_clean=y_clean)


# ---------------------------------------------------------------------------
# noise second-order statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Autocovariance:
    """Noise autocovariance ``R_0..R_tau_max`` with bound on ``sum_{t>tau_max} t ||R_t||``."""

    lags: np.ndarray
    tail_bound: float
    sigma_e: float

    @property
    def tau_max(self):
        return self.lags.shape[0] - 1

    @property
    def op_norms(self):
        return np.linalg.norm(self.lags, ord=2, axis=(1, 2))

    @property
    def star_norm(self):
        """Upper estimate of ``||R||_* = sum_t t ||R_t||_op``."""
        t = np.arange(self.tau_max + 1)
        return float(np.sum(t * self.op_norms) + self.tail_bound)


def _autocov_from_ir(h, sigma2, tau_max):
    T = h.shape[0] - 1
    d_y = h.shape[1]
    R = np.zeros((tau_max + 1, d_y, d_y))
    for tau in range(min(tau_max, T) + 1):
        R[tau] = sigma2 * np.einsum("sij,skj->ik", h[tau:], h[: T + 1 - tau])
    return R


def noise_autocovariance(spec, tau_max):
    """``R_tau = sigma_e^2 sum_s h_{s+tau} h_s^T`` for ``tau = 0..tau_max``."""
    if tau_max < 0:
        raise ValueError("tau_max must be non-negative")
    base = impulse_response(spec.noise_filter)
    T0 = base.horizon
    ir = impulse_response(spec.noise_filter, horizon=T0 + tau_max)
    sigma2 = spec.noise_std ** 2
    ext = tau_max + T0
    R_ext = _autocov_from_ir(ir.coefficients, sigma2, ext)
    norms = np.linalg.norm(R_ext, ord=2, axis=(1, 2))
    t = np.arange(ext + 1)
    tail = float(np.sum(t[tau_max + 1:] * norms[tau_max + 1:]))
    C, rho = ir.envelope_constant, ir.envelope_rate
    if C > 0:
        tail += sigma2 * C * C / (1.0 - rho * rho) * _weighted_geometric_tail(rho, ext)
    return Autocovariance(lags=R_ext[: tau_max + 1], tail_bound=tail, sigma_e=spec.noise_std)
