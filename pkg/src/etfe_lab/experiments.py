"""Monte Carlo sweeps: fixed-grid error rates, resolution ratio, H-infinity
rates with pilot-selected resolution, and certificate coverage.

Every trial draws its noise from ``SeedSequence([seed, phase, N, M, trial,
experiment])``. Keying on the values of ``N`` and ``M`` rather than on their
positions in the schedule means adding or removing sweep points never perturbs
the remaining trials; results also do not depend on the number of workers.
``phase`` separates the hinf pilot batch (1) from the reported trials (0).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .certificates import certificate_report
from .exceptions import EtfeLabError, NonPositive, SweepAborted
from .estimator import etfe, frequency_errors, hinf_error
from .excitation import build_excitation, certify
from .lti import SimulationSpec, impulse_response, simulate, strict_stability_norm
from .spectral import grid_indices, stack

MODES = ("fixed-grid", "hinf", "ratio", "coverage")
MAX_FAILURE_FRACTION = 0.01

REFERENCE_PLANT = {"numerator": [0.0, 0.12, 0.18],
                   "denominator": [1.0, -1.4, 1.443, -1.123, 0.7729]}
REFERENCE_NOISE_FILTER = {"numerator": [1.0], "denominator": [1.0, -0.2]}


@dataclass
class SweepConfig:
    """Sweep definition; see the ``sweep`` CLI help for the meaning of every key."""

    mode: str = "fixed-grid"
    plant: dict = field(default_factory=lambda: dict(REFERENCE_PLANT))
    noise_filter: dict = field(default_factory=lambda: dict(REFERENCE_NOISE_FILTER))
    noise_variance: float = 0.1
    noise_law: str = "gaussian"
    subgaussian_K: float | None = None
    burn_in: int | None = None
    past_input: str = "periodic"
    excitation: dict = field(default_factory=lambda: {"type": "prbs", "amplitude": 1.0, "offset": 0.3})
    M_values: list = field(default_factory=lambda: [127])
    N_p_values: list = field(default_factory=lambda: [8, 16, 32, 64, 128, 256, 512, 1024])
    N_values: list = field(default_factory=list)
    orders: list = field(default_factory=lambda: list(range(3, 17)))
    pilot_trials: int = 10
    grid_density: int = 16384
    n_monte_carlo: int = 100
    delta: float = 0.05
    seed: int = 0
    normalization: str = "first-point"
    cond_cap: float = 1e8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.normalization not in ("first-point", "none"):
            raise ValueError("normalization must be 'first-point' or 'none'")
        if self.n_monte_carlo < 1:
            raise ValueError("n_monte_carlo must be positive")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"description", "name"}
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def simulation_spec(self):
        return SimulationSpec.from_dict({
            "plant": self.plant,
            "noise_filter": self.noise_filter,
            "noise_variance": self.noise_variance,
            "noise_law": self.noise_law,
            "subgaussian_K": self.subgaussian_K,
            "burn_in": self.burn_in,
            "past_input": self.past_input,
        })

    def excitation_for(self, M):
        cfg = dict(self.excitation)
        if cfg.get("type", "prbs") == "prbs":
            order = int(round(math.log2(M + 1)))
            if 2 ** order - 1 != M:
                raise ValueError(f"PRBS needs M = 2^d - 1, got {M}")
            cfg["order"] = order
            cfg.pop("period", None)
        else:
            cfg["period"] = M
        return certify(build_excitation(cfg))


# ---------------------------------------------------------------------------
# per-trial work; module level so worker processes can run it
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _setup(config_json):
    cfg = SweepConfig.from_dict(json.loads(config_json))
    spec = cfg.simulation_spec()
    G_star = strict_stability_norm(impulse_response(spec.plant))
    return cfg, spec, G_star


@lru_cache(maxsize=64)
def _excitation(config_json, M):
    cfg, _, _ = _setup(config_json)
    return cfg.excitation_for(M)


def _run_trial(task):
    """Return the error metric of one trial, or ``None`` if the estimate failed."""
    config_json, phase, M, N, trial, metric, eps = task
    cfg, spec, G_star = _setup(config_json)
    exc = _excitation(config_json, M)
    traj = simulate(spec, exc, N, seed=(cfg.seed, phase, N, M, trial))
    dfts = stack(traj, grid_indices(M, N))
    res = etfe(dfts, M, cfg.cond_cap)
    if not res.defined.all():
        return None
    try:
        if metric == "grid":
            return float(np.max(frequency_errors(res, spec.plant)))
        if metric == "hinf":
            density = max(cfg.grid_density, 4 * M)
            return hinf_error(res, spec.plant, density, G_star=G_star).value
        if metric == "coverage":
            errs = frequency_errors(res, spec.plant)
            return float(np.max(errs / np.asarray(eps)))
    except EtfeLabError:
        return None
    raise ValueError(f"unknown metric {metric!r}")


def _map(tasks, jobs):
    if jobs is None or jobs <= 1 or len(tasks) < 2:
        return [_run_trial(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class Cell:
    M: int
    N: int
    trials: np.ndarray
    certificate: float = float("nan")
    failures: int = 0

    @property
    def N_p(self):
        return self.N // self.M

    @property
    def mean(self):
        return float(np.mean(self.trials))

    @property
    def std(self):
        return float(np.std(self.trials, ddof=1)) if self.trials.size > 1 else 0.0


@dataclass
class RateFit:
    slope: float
    intercept: float
    stderr: float


@dataclass
class SweepResult:
    mode: str
    cells: list
    config_hash: str
    normalization: str
    slopes: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def curve(self, M=None):
        cells = [c for c in self.cells if M is None or c.M == M]
        return sorted(cells, key=lambda c: c.N)

    def normalizer(self, cells):
        if self.normalization == "first-point" and cells:
            return cells[0].mean
        return 1.0

    def rates(self):
        out = {"mode": self.mode, "config_hash": self.config_hash,
               "normalization": self.normalization,
               "slopes": {str(k): asdict(v) for k, v in self.slopes.items()}}
        out.update(self.extra)
        return out


def fit_rate(points):
    """Least-squares slope of ``log(mean)`` against ``log(N)``."""
    if len(points) < 3:
        raise ValueError("at least three points are needed to fit a rate")
    N = np.array([p[0] for p in points], dtype=float)
    e = np.array([p[1] for p in points], dtype=float)
    if np.any(e <= 0) or np.any(N <= 0):
        raise NonPositive("rate fit needs positive N and errors")
    x, y = np.log(N), np.log(e)
    (slope, intercept), res, *_ = np.linalg.lstsq(np.column_stack([x, np.ones_like(x)]), y, rcond=None)
    # residual-based standard error; scipy's linregress goes through 1 - r^2,
    # which loses half the digits when the fit is exact
    resid = y - (slope * x + intercept)
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(float(resid @ resid) / (x.size - 2) / sxx) if sxx > 0 else math.inf
    return RateFit(float(slope), float(intercept), stderr)


def _collect(tasks_by_cell, cfg, jobs, n_expected=None):
    tasks = [t for ts in tasks_by_cell.values() for t in ts]
    values = _map(tasks, jobs)
    out = {}
    pos = 0
    for key, ts in tasks_by_cell.items():
        vals = values[pos: pos + len(ts)]
        pos += len(ts)
        good = np.array([v for v in vals if v is not None], dtype=float)
        fails = len(vals) - good.size
        if fails > MAX_FAILURE_FRACTION * len(vals):
            raise SweepAborted(f"{fails} of {len(vals)} trials failed in cell {key}")
        out[key] = (good, fails)
    return out


def _tasks(cfg, phase, M, N, n, metric, eps=None):
    key = cfg.canonical_json()
    return [(key, phase, M, N, t, metric, eps) for t in range(n)]


def _report(cfg, M, N):
    key = cfg.canonical_json()
    _, spec, G_star = _setup(key)
    return certificate_report(spec, _excitation(key, M), N, cfg.delta, G_star=G_star)


def run_fixed_grid(config, jobs=None):
    """Maximum grid error against ``N`` for each fixed ``M``."""
    cfg = config
    Ms = sorted(set(int(m) for m in cfg.M_values))
    tasks = {}
    for M in Ms:
        for Np in cfg.N_p_values:
            tasks[(M, M * int(Np))] = _tasks(cfg, 0, M, M * int(Np),
                                             cfg.n_monte_carlo, "grid")
    got = _collect(tasks, cfg, jobs)
    cells = []
    for (M, N), (vals, fails) in got.items():
        rep = _report(cfg, M, N)
        cells.append(Cell(M, N, vals, float(np.max(rep.epsilon)), fails))
    result = SweepResult("fixed-grid", cells, cfg.config_hash(), cfg.normalization)
    for M in Ms:
        curve = result.curve(M)
        if len(curve) >= 3:
            result.slopes[M] = fit_rate([(c.N, c.mean) for c in curve])
    return result


def run_m_ratio(config, jobs=None):
    """Mean-error ratio of the larger over the smaller ``M`` at (nearly) common ``N``.

    The smaller ``M`` runs at ``N = M_small * N_p``; the larger uses
    ``N_p' = max(1, round(N / M_large))``.
    """
    cfg = config
    Ms = sorted(set(int(m) for m in cfg.M_values))
    if len(Ms) > 2 or len(cfg.M_values) != 2:
        raise ValueError("ratio mode needs exactly two M values")
    small, large = Ms[0], Ms[-1]
    targets = [small * int(Np) for Np in cfg.N_p_values]
    tasks = {}
    for M in Ms:
        for Nt in targets:
            N = M * max(1, round(Nt / M))
            tasks[(M, N)] = _tasks(cfg, 0, M, N, cfg.n_monte_carlo, "grid")
    got = _collect(tasks, cfg, jobs)
    cells = [Cell(M, N, vals, float(np.max(_report(cfg, M, N).epsilon)), fails)
             for (M, N), (vals, fails) in got.items()]
    result = SweepResult("ratio", cells, cfg.config_hash(), cfg.normalization)
    rows = []
    for Nt in targets:
        Ns = small * max(1, round(Nt / small))
        Nl = large * max(1, round(Nt / large))
        ms = np.mean(got[(small, Ns)][0])
        ml = np.mean(got[(large, Nl)][0])
        rows.append({"N_small": Ns, "N_large": Nl, "mean_small": float(ms),
                     "mean_large": float(ml), "ratio": float(ml / ms)})
    pooled = float(np.exp(np.mean([math.log(r["ratio"]) for r in rows])))
    result.extra = {"M_small": small, "M_large": large, "ratios": rows, "pooled_ratio": pooled}
    for M in Ms:
        curve = result.curve(M)
        if len(curve) >= 3:
            result.slopes[M] = fit_rate([(c.N, c.mean) for c in curve])
    return result


def run_hinf(config, jobs=None):
    """H-infinity error of the naive estimator with ``M = 2^d - 1`` chosen per ``N`` by a pilot batch."""
    cfg = config
    if not cfg.N_values:
        raise ValueError("hinf mode needs N_values")
    Ms = sorted(2 ** int(d) - 1 for d in cfg.orders)
    pilot = {}
    for n_idx, Nt in enumerate(cfg.N_values):
        for M in Ms:
            if M > Nt:
                continue
            N = M * max(1, round(Nt / M))
            pilot[(n_idx, M, N)] = _tasks(cfg, 1, M, N, cfg.pilot_trials, "hinf")
    pilot_got = _collect(pilot, cfg, jobs)
    chosen = []
    for n_idx, Nt in enumerate(cfg.N_values):
        cands = [(np.mean(v[0]), M, N) for (i, M, N), v in pilot_got.items() if i == n_idx]
        _, M, N = min(cands)
        chosen.append((n_idx, M, N))
    main = {}
    for n_idx, M, N in chosen:
        main[(M, N)] = _tasks(cfg, 0, M, N, cfg.n_monte_carlo, "hinf")
    got = _collect(main, cfg, jobs)
    cells = []
    spec = cfg.simulation_spec()
    for (M, N), (vals, fails) in got.items():
        cert = float("nan")
        if spec.noise_std > 0:
            cert = _report(cfg, M, N).theorem3.total
        cells.append(Cell(M, N, vals, cert, fails))
    result = SweepResult("hinf", cells, cfg.config_hash(), cfg.normalization)
    curve = result.curve()
    if len(curve) >= 3:
        result.slopes["all"] = fit_rate([(c.N, c.mean) for c in curve])
    result.extra = {
        "selected": [{"N_target": int(cfg.N_values[i]), "M": int(M), "N": int(N)} for i, M, N in chosen],
        "pilot": [{"N_target": int(cfg.N_values[i]), "M": int(M), "N": int(N),
                   "mean": float(np.mean(v[0]))} for (i, M, N), v in sorted(pilot_got.items())],
    }
    return result


def run_coverage(config, jobs=None):
    """Fraction of trials in which some grid error exceeds its per-frequency radius."""
    cfg = config
    Ms = sorted(set(int(m) for m in cfg.M_values))
    tasks = {}
    for M in Ms:
        for Np in cfg.N_p_values:
            N = M * int(Np)
            rep = _report(cfg, M, N)
            tasks[(M, N)] = _tasks(cfg, 0, M, N, cfg.n_monte_carlo, "coverage",
                                   tuple(float(x) for x in rep.epsilon))
    got = _collect(tasks, cfg, jobs)
    cells = []
    coverage = []
    for (M, N), (vals, fails) in got.items():
        cells.append(Cell(M, N, vals, 1.0, fails))
        frac = float(np.mean(vals > 1.0))
        coverage.append({"M": M, "N": N, "violation_fraction": frac, "delta": cfg.delta,
                         "max_error_over_epsilon": float(np.max(vals)),
                         "within_delta": frac <= cfg.delta})
    result = SweepResult("coverage", cells, cfg.config_hash(), "none")
    result.extra = {"coverage": coverage}
    return result


RUNNERS = {"fixed-grid": run_fixed_grid, "ratio": run_m_ratio,
           "hinf": run_hinf, "coverage": run_coverage}


def run_sweep(config, jobs=None):
    if config.mode not in RUNNERS:
        raise ValueError(f"unknown mode {config.mode!r}")
    return RUNNERS[config.mode](config, jobs=jobs)


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def write_results_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "N", "trial", "error"])
        for c in sorted(result.cells, key=lambda c: (c.M, c.N)):
            for t, e in enumerate(c.trials):
                w.writerow([c.M, c.N, t, repr(float(e))])


def write_summary_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "N", "N_p", "n_trials", "failures", "mean", "std",
                    "normalized_mean", "normalized_std", "certificate"])
        Ms = sorted({c.M for c in result.cells})
        groups = [result.curve(M) for M in Ms] if result.mode != "hinf" else [result.curve()]
        for cells in groups:
            z = result.normalizer(cells)
            for c in cells:
                w.writerow([c.M, c.N, c.N_p, c.trials.size, c.failures, repr(c.mean), repr(c.std),
                            repr(c.mean / z), repr(c.std / z), repr(c.certificate)])


def write_rates_json(result, path):
    with open(path, "w") as fh:
        json.dump(result.rates(), fh, indent=1, sort_keys=True)


def write_plot(result, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "etfe-lab"
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = ([(f"M={M}", result.curve(M)) for M in sorted({c.M for c in result.cells})]
              if result.mode != "hinf" else [("tuned M", result.curve())])
    for label, cells in groups:
        z = result.normalizer(cells)
        N = np.array([c.N for c in cells], dtype=float)
        m = np.array([c.mean for c in cells]) / z
        s = np.array([c.std for c in cells]) / z
        ax.plot(N, m, marker="o", label=label)
        ax.fill_between(N, np.maximum(m - s, 1e-12), m + s, alpha=0.25)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ylabel = {"hinf": "H-inf error", "coverage": "max error / epsilon"}.get(result.mode, "max grid error")
    if result.normalization == "first-point" and result.mode != "coverage":
        ylabel += " (normalized)"
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_outputs(result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(result, out / "results.csv")
    write_summary_csv(result, out / "summary.csv")
    write_rates_json(result, out / "rates.json")
    write_plot(result, out / "plot.svg")
    return out
