"""Periodic excitation signals and their excitation certificate."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import (DimensionMismatch, DuplicateLine, NotExciting,
                         TooManyExperiments, UnsupportedOrder)

# Fibonacci LFSR feedback taps (1-indexed) of primitive polynomials
PRBS_TAPS = {
    2: (2, 1),
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 11, 10, 4),
    13: (13, 12, 11, 8),
    14: (14, 13, 12, 2),
    15: (15, 14),
    16: (16, 15, 13, 4),
}

DEFAULT_AMPLITUDE = 1.0
DEFAULT_OFFSET = 0.3


def lfsr_bits(order):
    """One period of the maximal-length bit sequence, LFSR started at all ones."""
    if order not in PRBS_TAPS:
        raise UnsupportedOrder(f"PRBS order {order} not in {min(PRBS_TAPS)}..{max(PRBS_TAPS)}")
    taps = PRBS_TAPS[order]
    mask = (1 << order) - 1
    state = mask
    n = mask
    bits = np.empty(n, dtype=np.int8)
    for t in range(n):
        bits[t] = state & 1
        fb = 0
        for tap in taps:
            fb ^= (state >> (order - tap)) & 1
        state = ((state >> 1) | (fb << (order - 1))) & mask
    return bits


def prbs(order, amplitude=DEFAULT_AMPLITUDE, offset=DEFAULT_OFFSET):
    """Maximal-length PRBS period of length ``2**order - 1``, values ``offset +- amplitude``."""
    bits = lfsr_bits(order)
    return offset + amplitude * (2.0 * bits - 1.0)


def multisine(M, lines):
    """Sum of cosines ``a cos(2 pi l t / M + phase)`` over one period.

    ``lines`` is a list of ``(l, amplitude, phase)`` or bare indices ``l``
    (unit amplitude, zero phase). The indices ``l`` and ``M - l`` describe the
    same real sinusoid and count as a duplicate.
    """
    if M < 1:
        raise ValueError("M must be positive")
    seen = set()
    t = np.arange(M)
    u = np.zeros(M)
    for line in lines:
        ell, amp, phase = (line, 1.0, 0.0) if np.isscalar(line) else line
        ell = int(ell)
        if not 0 <= ell < M:
            raise ValueError(f"frequency index {ell} outside [0, {M})")
        key = min(ell, (M - ell) % M)
        if key in seen:
            raise DuplicateLine(f"frequency index {ell} appears twice")
        seen.add(key)
        u += amp * np.cos(2.0 * np.pi * ell * t / M + phase)
    return u


@dataclass(frozen=True)
class PeriodicExcitation:
    """One period of each of the ``d_u`` experiments.

    ``experiments`` has shape ``(n_exp, M, d_u)``; ``sigma_u`` is filled by
    :func:`certify`.
    """

    experiments: np.ndarray
    amplitude_bound: float
    sigma_u: np.ndarray | None = None
    meta: dict | None = None

    def __post_init__(self):
        x = np.asarray(self.experiments, dtype=float)
        if x.ndim == 1:
            x = x[None, :, None]
        elif x.ndim == 2:
            x = x[:, :, None]
        object.__setattr__(self, "experiments", x)
        if self.amplitude_bound <= 0:
            raise ValueError("amplitude_bound must be positive")
        peak = float(np.max(np.linalg.norm(x, axis=2)))
        if peak > self.amplitude_bound * (1 + 1e-12):
            raise ValueError(f"signal norm {peak:g} exceeds amplitude_bound {self.amplitude_bound:g}")

    @property
    def period(self):
        return self.experiments.shape[1]

    @property
    def n_experiments(self):
        return self.experiments.shape[0]

    @property
    def input_dim(self):
        return self.experiments.shape[2]

    @classmethod
    def from_signal(cls, signal, amplitude_bound=None, meta=None):
        x = np.asarray(signal, dtype=float)
        if x.ndim == 1:
            x = x[None, :, None]
        elif x.ndim == 2:
            x = x[None]
        if amplitude_bound is None:
            amplitude_bound = float(np.max(np.linalg.norm(x, axis=2)))
            if amplitude_bound == 0.0:
                amplitude_bound = 1.0
        return cls(x, amplitude_bound, meta=meta)

    def tiled(self, N):
        """Experiments extended periodically to length ``N``: ``(n_exp, N, d_u)``."""
        idx = np.arange(N) % self.period
        return self.experiments[:, idx, :]

    def stacked_dft(self):
        """``U~_l`` for every ``l``: shape ``(M, d_u, n_exp)``, column ``i`` is experiment ``i``."""
        F = np.fft.fft(self.experiments, axis=1) / math.sqrt(self.period)
        return np.transpose(F, (1, 2, 0))


def shift_schedule(base, d_u, amplitude_bound=None):
    """Build ``d_u`` experiments from one base period by cyclic delays of ``floor(M/d_u)``.

    A single-channel base is spread over the ``d_u`` channels as a circulant:
    channel ``j`` of experiment ``i`` is the base delayed by
    ``((j - i) mod d_u) * floor(M / d_u)``. A base that already has ``d_u``
    channels is delayed as a whole by ``i * floor(M / d_u)``.
    """
    if d_u < 1:
        raise ValueError("d_u must be at least 1")
    base = np.asarray(base, dtype=float)
    M = base.shape[0]
    if d_u > M:
        raise TooManyExperiments(f"d_u={d_u} exceeds period {M}")
    s = M // d_u
    if base.ndim == 1:
        exps = np.empty((d_u, M, d_u))
        for i in range(d_u):
            for j in range(d_u):
                exps[i, :, j] = np.roll(base, ((j - i) % d_u) * s)
    else:
        if base.shape[1] != d_u:
            raise DimensionMismatch(f"base has {base.shape[1]} channels, expected {d_u}")
        exps = np.stack([np.roll(base, i * s, axis=0) for i in range(d_u)])
    if amplitude_bound is None:
        amplitude_bound = float(np.max(np.linalg.norm(exps, axis=2))) or 1.0
    return PeriodicExcitation(exps, amplitude_bound)


def certify(exc, required=None, rtol=1e-12):
    """Fill ``sigma_u[l]``, the smallest singular value of ``U~_l``.

    Parameters
    ----------
    required : None, "all", "nonzero", or iterable of int
        Frequency indices that must be excited. Independently of this, an
        excitation that excites no frequency at all is rejected.

    Raises
    ------
    NotExciting
        At the first required index whose ``sigma_u`` is numerically zero.
    """
    M = exc.period
    if exc.n_experiments != exc.input_dim:
        raise DimensionMismatch(
            f"{exc.n_experiments} experiments for {exc.input_dim} input channels")
    U = exc.stacked_dft()
    sigma = np.linalg.svd(U, compute_uv=False)[:, -1]
    zero_level = rtol * math.sqrt(M) * exc.amplitude_bound
    sigma = np.where(sigma <= zero_level, 0.0, sigma)
    if not np.any(sigma > 0):
        raise NotExciting(0, 0.0)
    if required is None:
        req = []
    elif required == "all":
        req = range(M)
    elif required == "nonzero":
        req = range(1, M)
    else:
        req = [int(r) for r in required]
    for ell in req:
        if sigma[ell] == 0.0:
            raise NotExciting(ell, float(sigma[ell]))
    if np.sum(sigma ** 2) > M * exc.amplitude_bound ** 2 * (1 + 1e-9):
        raise ValueError("excitation energy exceeds M * D_u^2; amplitude bound is wrong")
    return replace(exc, sigma_u=sigma)


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

def read_signal_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                continue  # header
    return np.asarray(rows, dtype=float)


def build_excitation(cfg, base_dir=None):
    """Construct a :class:`PeriodicExcitation` from a JSON-style mapping.

    Keys: ``type`` (``prbs`` | ``multisine`` | ``custom``), ``d_u``, and per type
    ``order``/``amplitude``/``offset``, ``period``/``lines``, or ``csv``.
    """
    kind = cfg.get("type", "prbs")
    d_u = int(cfg.get("d_u", 1))
    if kind == "prbs":
        amp = float(cfg.get("amplitude", DEFAULT_AMPLITUDE))
        off = float(cfg.get("offset", DEFAULT_OFFSET))
        order = int(cfg["order"]) if "order" in cfg else int(round(math.log2(int(cfg["period"]) + 1)))
        base = prbs(order, amp, off)
        if "period" in cfg and int(cfg["period"]) != base.size:
            raise ValueError(f"PRBS order {order} has period {base.size}, not {cfg['period']}")
        bound = cfg.get("amplitude_bound")
        if bound is None and d_u == 1:
            bound = abs(amp) + abs(off)
    elif kind == "multisine":
        base = multisine(int(cfg["period"]), cfg.get("lines", []))
        bound = cfg.get("amplitude_bound")
    elif kind == "custom":
        path = Path(cfg["csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        base = read_signal_csv(path)
        if base.shape[1] == 1:
            base = base[:, 0]
        bound = cfg.get("amplitude_bound")
        if "period" in cfg and int(cfg["period"]) != base.shape[0]:
            raise ValueError("custom signal length does not match period")
    else:
        raise ValueError(f"unknown excitation type {kind!r}")
    exc = shift_schedule(base, d_u, amplitude_bound=bound)
    return replace(exc, meta=dict(cfg))


def excitation_to_dict(exc):
    d = dict(exc.meta or {})
    d.update({
        "period": exc.period,
        "d_u": exc.input_dim,
        "amplitude_bound": exc.amplitude_bound,
        "experiments": exc.experiments.tolist(),
    })
    if exc.sigma_u is not None:
        d["sigma_u"] = exc.sigma_u.tolist()
    return d


def excitation_from_dict(d, base_dir=None):
    if "experiments" in d:
        exc = PeriodicExcitation(np.asarray(d["experiments"], dtype=float),
                                 float(d["amplitude_bound"]),
                                 meta={k: v for k, v in d.items() if k not in ("experiments", "sigma_u")})
        if "sigma_u" in d:
            exc = replace(exc, sigma_u=np.asarray(d["sigma_u"], dtype=float))
        return exc
    return build_excitation(d, base_dir=base_dir)


def write_sigma_csv(exc, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "omega", "sigma_u"])
        for ell, s in enumerate(exc.sigma_u):
            w.writerow([ell, repr(2 * math.pi * ell / exc.period), repr(float(s))])


def save_excitation(exc, path):
    with open(path, "w") as fh:
        json.dump(excitation_to_dict(exc), fh, indent=1)
