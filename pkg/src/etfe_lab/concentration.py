"""Monte Carlo checks of the semi-infinite Hanson-Wright inequality and of the
noise-norm concentration, on finite truncations of the underlying operators."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .certificates import hw_tail, lemma4_tail
from .exceptions import TruncationTooShort
from .lti import draw_noise, subgaussian_parameter
from .spectral import aliased_spectrum, default_autocovariance, snr

_CHUNK_ENTRIES = 4_000_000


@dataclass(frozen=True)
class TruncatedOperator:
    """Dense ``d x (p k_max)`` truncation of a map from sequences to ``R^d``."""

    matrix: np.ndarray
    frobenius: float
    operator_norm: float
    declared_tail: float = 0.0

    @classmethod
    def from_matrix(cls, A, declared_tail=0.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        frob = float(np.sqrt(np.sum(A * A)))
        op = float(np.linalg.norm(A, ord=2)) if A.size else 0.0
        return cls(A, frob, min(op, frob), declared_tail)


def _filter_dft_blocks(h, N, k, n_cols):
    """Complex blocks ``B_j`` with ``V_k = sum_j B_j e_{N-1-j}``; shape ``(n_cols, d_y, d_e)``."""
    g = h.coefficients
    T = g.shape[0] - 1
    omega = 2 * np.pi * k / N
    m = N - 1 - np.arange(n_cols)
    B = np.zeros((n_cols, g.shape[1], g.shape[2]), dtype=complex)
    for s in range(T + 1):
        t = m + s
        ok = (t >= 0) & (t <= N - 1)
        B[ok] += np.exp(-1j * omega * t[ok])[:, None, None] * g[s][None]
    return B / math.sqrt(N)


def filter_dft_operator(h, N, k, k_max=None):
    """Real lifting ``[Re; Im]`` of ``e -> V_k`` restricted to ``e_{N-1}, ..., e_{N-k_max}``.

    ``declared_tail`` bounds the Frobenius norm of the discarded part: exactly
    for noise samples reached by the tabulated coefficients, and through the
    geometric envelope for coefficients past the truncation horizon.
    """
    rho = h.envelope_rate
    if k_max is None:
        k_max = N + int(math.ceil(50.0 / (1.0 - rho)))
    if k_max < N:
        raise ValueError("k_max must be at least N")
    T = h.horizon
    d_y, d_e = h.coefficients.shape[1:]
    n_cols = max(k_max, N + T)
    B = _filter_dft_blocks(h, N, k, n_cols)
    kept = B[:k_max]
    A = np.concatenate([kept.real, kept.imag], axis=1)  # (k_max, 2 d_y, d_e)
    A = np.transpose(A, (1, 0, 2)).reshape(2 * d_y, k_max * d_e)

    beyond = float(np.sqrt(np.sum(np.abs(B[k_max:]) ** 2)))
    C = h.envelope_constant * math.sqrt(min(d_y, d_e))
    envelope = 0.0
    if C > 0:
        envelope = C / ((1 - rho) * math.sqrt(N)) * math.sqrt(
            (N + T + 1) * rho ** (2 * (T + 1)) + rho ** (2 * (T + 2)) / (1 - rho * rho))
    op = TruncatedOperator.from_matrix(A, declared_tail=beyond + envelope)
    if op.declared_tail > 0.01 * op.frobenius:
        raise TruncationTooShort(
            f"declared tail {op.declared_tail:.3g} exceeds 1% of Frobenius norm {op.frobenius:.3g}")
    return op


def sample_quadratic_form(op, law, n_trials, seed, sigma_e=1.0):
    """``n_trials`` draws of ``||A z||^2`` with i.i.d. entries of the given law."""
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    A = op.matrix
    n_cols = A.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out = np.empty(n_trials)
    chunk = max(1, _CHUNK_ENTRIES // max(1, n_cols))
    for start in range(0, n_trials, chunk):
        stop = min(n_trials, start + chunk)
        Z = draw_noise(law, sigma_e, (stop - start, n_cols), rng)
        AZ = Z @ A.T
        out[start:stop] = np.sum(AZ * AZ, axis=1)
    return out


@dataclass(frozen=True)
class VerificationRow:
    level: float
    empirical: float
    bound: float
    stderr: float

    @property
    def clipped_bound(self):
        return min(1.0, self.bound)

    @property
    def passed(self):
        return self.empirical <= self.clipped_bound + 3.0 * self.stderr


@dataclass(frozen=True)
class VerificationTable:
    """One row per deviation level; ``level`` is ``alpha`` or ``s``."""

    kind: str
    rows: tuple
    n_trials: int
    sample_mean: float
    mean_stderr: float
    expected_mean: float

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    @property
    def mean_ok(self):
        return abs(self.sample_mean - self.expected_mean) <= 3.0 * self.mean_stderr

    def to_csv(self, path):
        name = "alpha" if self.kind == "hw" else "s"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([name, "empirical", "bound", "clipped_bound", "stderr", "pass"])
            for r in self.rows:
                w.writerow([repr(r.level), repr(r.empirical), repr(r.bound),
                            repr(r.clipped_bound), repr(r.stderr), int(r.passed)])


def _binomial_stderr(p, n):
    return math.sqrt(p * (1.0 - p) / n)


def verify_hw(op, law, alphas, n_trials, seed, sigma_e=1.0, K=None):
    """Empirical ``P(| ||Az||^2 - E| > alpha ||A||_F^2)`` against the Hanson-Wright bound."""
    if not len(alphas):
        raise ValueError("alphas must not be empty")
    if K is None:
        K = subgaussian_parameter(law, sigma_e)
    q = sample_quadratic_form(op, law, n_trials, seed, sigma_e)
    frob2 = op.frobenius ** 2
    expected = sigma_e ** 2 * frob2
    dev = np.abs(q - expected)
    rows = []
    for a in alphas:
        if a <= 0:
            raise ValueError("alpha must be positive")
        p = float(np.mean(dev > a * frob2))
        bound = hw_tail(a, op.frobenius, op.operator_norm, K) if frob2 > 0 else 0.0
        rows.append(VerificationRow(float(a), p, bound, _binomial_stderr(p, n_trials)))
    return VerificationTable("hw", tuple(rows), n_trials, float(q.mean()),
                             float(q.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else 0.0,
                             expected)


def noise_dft_samples(spec, N, k, n_trials, seed):
    """Draws of the stacked noise DFT ``V_k``: shape ``(n_trials, d_y, d_u)``."""
    d_u = spec.plant.input_dim
    B = spec.burn_in
    L = B + N
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    phase = np.exp(-2j * np.pi * k * np.arange(N) / N) / math.sqrt(N)
    out = np.empty((n_trials, spec.plant.output_dim, d_u), dtype=complex)
    chunk = max(1, _CHUNK_ENTRIES // (L * d_u * spec.noise_dim))
    for start in range(0, n_trials, chunk):
        stop = min(n_trials, start + chunk)
        e = draw_noise(spec.noise_law, spec.noise_std, (stop - start, d_u, L, spec.noise_dim), rng)
        v = spec.noise_filter.filter(e)[:, :, B:, :]
        V = np.einsum("t,nitj->nji", phase, v)
        out[start:stop] = V
    return out


def verify_lemma4(spec, N, k, s_grid, n_trials, seed):
    """Empirical ``P(| ||V_k|| - sqrt(tr Phi) | > 2 s sqrt(tr Phi))`` against the bound.

    Raises ``ZeroNoise`` when the noise spectrum vanishes.
    """
    R = default_autocovariance(spec)
    phi = aliased_spectrum(R, N, k)
    snr(1.0, phi)
    tr = float(np.real(np.trace(phi)))
    d_u = spec.plant.input_dim
    V = noise_dft_samples(spec, N, k, n_trials, seed)
    if V.shape[1] == 1 or V.shape[2] == 1:
        norms = np.sqrt(np.sum(np.abs(V) ** 2, axis=(1, 2)))
    else:
        norms = np.linalg.norm(V, ord=2, axis=(1, 2))
    col_sq = np.sum(np.abs(V) ** 2, axis=1).mean(axis=1)
    root = math.sqrt(tr)
    dev = np.abs(norms - root)
    rows = []
    for s in s_grid:
        p = float(np.mean(dev > 2.0 * s * root))
        bound = lemma4_tail(s, spec.subgaussian_K, spec.noise_std, phi, d_u)
        rows.append(VerificationRow(float(s), p, bound, _binomial_stderr(p, n_trials)))
    return VerificationTable("lemma4", tuple(rows), n_trials, float(col_sq.mean()),
                             float(col_sq.std(ddof=1) / math.sqrt(n_trials)), tr)
