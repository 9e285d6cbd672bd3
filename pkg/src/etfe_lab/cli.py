"""``etfe-lab`` command line: design, etfe, sweep, verify-hw."""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .certificates import certificate_report
from .concentration import TruncatedOperator, filter_dft_operator, verify_hw, verify_lemma4
from .estimator import etfe
from .exceptions import EtfeLabError
from .excitation import build_excitation, certify, save_excitation, write_sigma_csv
from .experiments import REFERENCE_NOISE_FILTER, SweepConfig, run_sweep, write_outputs
from .lti import SimulationSpec, impulse_response, load_system, simulate
from .spectral import grid_indices, stack

EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3

DESIGN_KEYS = """\
config keys (design):
  type             "prbs" | "multisine" | "custom"            (default "prbs")
  order            PRBS register length d, period M = 2^d - 1 (prbs)
  amplitude        PRBS level, values are offset +/- amplitude (default 1.0)
  offset           PRBS offset                                 (default 0.3)
  period           period M (multisine, custom; optional check for prbs)
  lines            multisine lines: indices l in 1..M-1 or [l, amplitude, phase]
  csv              custom signal file, one column per input channel
  d_u              number of input channels / experiments      (default 1)
  amplitude_bound  peak-norm bound D_u                         (default |amplitude|+|offset|)
  required         frequencies that must be excited: "all" | "nonzero" | list
                   of indices                                 (default: any one)
outputs: excitation.json, sigma_u.csv, manifest.json
"""

SYSTEM_KEYS = """\
  system.plant          {"numerator": [...], "denominator": [...]}; MIMO entries
                        are nested lists indexed [output][input]
  system.noise_filter   same shape as plant, noise input dimension columns
  system.noise_variance sigma_e^2 (or system.noise_std)
  system.noise_law      "gaussian" | "rademacher" | "uniform"   (default gaussian)
  system.subgaussian_K  sub-Gaussian parameter K >= sigma_e    (default from law)
  system.burn_in        samples simulated before recording     (default 10/(1-rho))
  system.past_input     "periodic" | "zero": input before t=0   (default periodic)
"""

ETFE_KEYS = f"""\
config keys (etfe):
{SYSTEM_KEYS}  excitation            a design config (see `etfe-lab design --help`)
  N_p                   number of recorded periods; N = M N_p
  N                     record length instead of N_p; must be a multiple of M
  seed                  master seed (overridden by --seed)       (default 0)
  delta                 failure probability for the certificate  (default 0.05)
  cond_cap              largest accepted condition number of U_l (default 1e8)
outputs: estimates.csv, certificate.json, certificate.csv, manifest.json
"""

SWEEP_KEYS = """\
config keys (sweep):
  mode            "fixed-grid" | "ratio" | "hinf" | "coverage"
  plant, noise_filter, noise_variance, noise_law, subgaussian_K, burn_in,
  past_input      system definition as in `etfe-lab etfe --help` (flat here)
  excitation      design config without order/period; M picks the PRBS order
  M_values        resolutions M (fixed-grid, coverage; exactly two for ratio)
  N_p_values      periods per record; ratio mode uses N = M_small * N_p for
                  both M, rounding N_p for the larger M
  N_values        target record lengths (hinf)
  orders          candidate PRBS orders d, M = 2^d - 1 (hinf)
  pilot_trials    trials per candidate M in the hinf pilot batch (default 10)
  grid_density    fine-grid points for the H-infinity error (default 16384,
                  raised to 4M when smaller)
  n_monte_carlo   trials per cell (default 100)
  delta           failure probability of the certificates (default 0.05)
  seed            master seed (overridden by --seed) (default 0)
  normalization   "first-point" | "none" (plots and summary.csv)
  cond_cap        largest accepted condition number of U_l (default 1e8)
outputs: results.csv, summary.csv, rates.json, plot.svg, manifest.json
"""

VERIFY_KEYS = """\
config keys (verify-hw):
  operators   list of operators, each one of
                {"kind": "identity", "dim": n}
                {"kind": "diagonal", "values": [...]}
                {"kind": "matrix", "matrix": [[...], ...]}
                {"kind": "gaussian", "rows": r, "cols": c, "seed": s}
                {"kind": "filter_dft", "N": N, "k": k, "filter": {...}}
                  (filter defaults to 1/(1 - 0.2 q^-1))
  laws        noise laws to test, each "gaussian" | "rademacher" | "uniform"
  alphas      deviation levels alpha > 0, at least one
  n_trials    Monte Carlo draws per operator and law (default 100000)
  seed        master seed (overridden by --seed) (default 0)
  sigma_e     standard deviation of the entries (default 1.0)
  lemma4      optional {"system": {...}, "N": N, "k": k, "s_grid": [...],
              "n_trials": n}: norm concentration of the noise DFT
outputs: hw.csv, lemma4.csv (if requested), verify.json, manifest.json
"""


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration and manifest
# ---------------------------------------------------------------------------

def preset_names():
    return sorted(p.name[:-5] for p in resources.files("etfe_lab.presets").iterdir()
                  if p.name.endswith(".json"))


def load_config(args):
    if args.preset and args.config:
        raise UsageError("give either --config or --preset, not both")
    if args.preset:
        if args.preset not in preset_names():
            raise UsageError(f"unknown preset {args.preset!r}; available: {', '.join(preset_names())}")
        text = resources.files("etfe_lab.presets").joinpath(args.preset + ".json").read_text()
        return json.loads(text), f"preset:{args.preset}", None
    if args.config:
        path = Path(args.config)
        try:
            return json.loads(path.read_text()), str(path), path.parent
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    raise UsageError("a --config or --preset is required")


def output_dir(args):
    out = os.environ.get("ETFE_LAB_OUT") or args.out or os.path.join("etfe_lab_out", args.command)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_path: str
    config_hash: str
    seed: int
    output_dir: str
    version: str
    created: str

    def write(self, directory):
        """Write ``manifest.json`` atomically (temporary file, then rename)."""
        directory = Path(directory)
        fd, tmp = tempfile.mkstemp(prefix=".manifest-", suffix=".json", dir=directory)
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(asdict(self), fh, indent=1, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, directory / "manifest.json")
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _manifest(args, source, cfg, seed, out):
    return RunManifest(
        command=args.command, config_path=source, config_hash=config_hash(cfg), seed=int(seed),
        output_dir=str(out), version=__version__,
        created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )


def _seed(args, cfg):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not 0 <= int(seed) < 2 ** 64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return int(seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_design(args):
    cfg, source, base = load_config(args)
    seed = _seed(args, cfg)
    out = output_dir(args)
    _manifest(args, source, cfg, seed, out).write(out)
    exc_cfg = {k: v for k, v in cfg.items() if k not in ("required", "seed")}
    exc = certify(build_excitation(exc_cfg, base_dir=base), required=cfg.get("required"))
    save_excitation(exc, out / "excitation.json")
    write_sigma_csv(exc, out / "sigma_u.csv")
    print(f"M={exc.period} d_u={exc.input_dim} D_u={exc.amplitude_bound:g} "
          f"min sigma_u={float(np.min(exc.sigma_u)):.6g} "
          f"excited={int(np.sum(exc.sigma_u > 0))}/{exc.period}")
    return 0


def _system_spec(cfg):
    system = cfg.get("system")
    if system is None:
        raise UsageError("config needs a 'system' entry")
    return SimulationSpec.from_dict(system)


def cmd_etfe(args):
    cfg, source, base = load_config(args)
    seed = _seed(args, cfg)
    out = output_dir(args)
    _manifest(args, source, cfg, seed, out).write(out)
    spec = _system_spec(cfg)
    if "excitation" not in cfg:
        raise UsageError("config needs an 'excitation' entry")
    exc_cfg = dict(cfg["excitation"])
    required = exc_cfg.pop("required", None)
    exc = certify(build_excitation(exc_cfg, base_dir=base), required=required)
    M = exc.period
    if "N" in cfg:
        N = int(cfg["N"])
    elif "N_p" in cfg:
        N = M * int(cfg["N_p"])
    else:
        raise UsageError("config needs 'N_p' or 'N'")
    ks = grid_indices(M, N)
    traj = simulate(spec, exc, N, seed=seed)
    result = etfe(stack(traj, ks), M, float(cfg.get("cond_cap", 1e8)))
    result = result.with_errors(spec.plant) if result.defined.all() else result
    result.to_csv(out / "estimates.csv")
    delta = float(cfg.get("delta", 0.05))
    report = certificate_report(spec, exc, N, delta)
    report.to_json(out / "certificate.json")
    report.to_csv(out / "certificate.csv")
    worst = float(np.nanmax(result.errors)) if result.errors is not None else math.nan
    print(f"M={M} N={N} defined={int(result.defined.sum())}/{M} max grid error={worst:.6g} "
          f"max epsilon={float(np.max(report.epsilon)):.6g}")
    return 0


def cmd_sweep(args):
    cfg, source, _ = load_config(args)
    seed = _seed(args, cfg)
    cfg = {**cfg, "seed": seed}
    try:
        sweep = SweepConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = output_dir(args)
    _manifest(args, source, cfg, seed, out).write(out)
    result = run_sweep(sweep, jobs=args.jobs)
    write_outputs(result, out)
    for key, fit in result.slopes.items():
        print(f"slope[{key}] = {fit.slope:.4f} +/- {fit.stderr:.4f}")
    if "pooled_ratio" in result.extra:
        print(f"pooled ratio = {result.extra['pooled_ratio']:.4f}")
    for row in result.extra.get("coverage", []):
        print(f"M={row['M']} N={row['N']} violation fraction={row['violation_fraction']:.4f} "
              f"(delta={row['delta']})")
    return 0


def build_operator(op_cfg):
    kind = op_cfg.get("kind")
    if kind == "identity":
        return TruncatedOperator.from_matrix(np.eye(int(op_cfg["dim"])))
    if kind == "diagonal":
        return TruncatedOperator.from_matrix(np.diag(np.asarray(op_cfg["values"], dtype=float)))
    if kind == "matrix":
        return TruncatedOperator.from_matrix(np.asarray(op_cfg["matrix"], dtype=float))
    if kind == "gaussian":
        rng = np.random.default_rng(np.random.SeedSequence(int(op_cfg.get("seed", 0))))
        A = rng.standard_normal((int(op_cfg["rows"]), int(op_cfg["cols"])))
        return TruncatedOperator.from_matrix(A / math.sqrt(A.shape[1]))
    if kind == "filter_dft":
        h = impulse_response(load_system(op_cfg.get("filter", REFERENCE_NOISE_FILTER)))
        return filter_dft_operator(h, int(op_cfg["N"]), int(op_cfg["k"]), op_cfg.get("k_max"))
    raise UsageError(f"unknown operator kind {kind!r}")


def _describe(op_cfg):
    return ",".join(f"{k}={v}" for k, v in op_cfg.items() if k not in ("matrix", "filter", "values"))


def cmd_verify_hw(args):
    cfg, source, _ = load_config(args)
    seed = _seed(args, cfg)
    alphas = cfg.get("alphas") or []
    if not alphas:
        raise UsageError("alphas must list at least one deviation level")
    if any(float(a) <= 0 for a in alphas):
        raise UsageError("alphas must be positive")
    laws = cfg.get("laws") or ["gaussian"]
    operators = cfg.get("operators") or []
    if not operators:
        raise UsageError("operators must list at least one operator")
    n_trials = int(cfg.get("n_trials", 100_000))
    sigma_e = float(cfg.get("sigma_e", 1.0))
    out = output_dir(args)
    _manifest(args, source, cfg, seed, out).write(out)

    summary = {"hw": [], "lemma4": None}
    ok = True
    lines = ["operator,law,alpha,empirical,bound,clipped_bound,stderr,pass"]
    for i, op_cfg in enumerate(operators):
        op = build_operator(op_cfg)
        for j, law in enumerate(laws):
            table = verify_hw(op, law, [float(a) for a in alphas], n_trials, [seed, i, j], sigma_e)
            ok &= table.passed
            for r in table.rows:
                lines.append(f"{_describe(op_cfg)!r},{law},{r.level!r},{r.empirical!r},{r.bound!r},"
                             f"{r.clipped_bound!r},{r.stderr!r},{int(r.passed)}")
                print(f"{'PASS' if r.passed else 'FAIL'}  op[{i}] {_describe(op_cfg)} {law:<10} "
                      f"alpha={r.level:<4g} empirical={r.empirical:.5f} bound={r.clipped_bound:.5f}")
            summary["hw"].append({"operator": i, "law": law, "passed": table.passed,
                                  "frobenius": op.frobenius, "operator_norm": op.operator_norm})
    (out / "hw.csv").write_text("\n".join(lines) + "\n")

    if cfg.get("lemma4"):
        l4 = cfg["lemma4"]
        spec = SimulationSpec.from_dict(l4.get("system", {
            "plant": {"numerator": [1.0]}, "noise_filter": REFERENCE_NOISE_FILTER,
            "noise_variance": 0.1}))
        table = verify_lemma4(spec, int(l4["N"]), int(l4["k"]), [float(s) for s in l4["s_grid"]],
                              int(l4.get("n_trials", n_trials)), [seed, len(operators)])
        table.to_csv(out / "lemma4.csv")
        ok &= table.passed and table.mean_ok
        for r in table.rows:
            print(f"{'PASS' if r.passed else 'FAIL'}  noise DFT norm  s={r.level:<4g} "
                  f"empirical={r.empirical:.5f} bound={r.clipped_bound:.5f}")
        print(f"{'PASS' if table.mean_ok else 'FAIL'}  noise DFT mean  sample={table.sample_mean:.5f} "
              f"expected={table.expected_mean:.5f} stderr={table.mean_stderr:.5f}")
        summary["lemma4"] = {"passed": table.passed, "mean_ok": table.mean_ok,
                             "sample_mean": table.sample_mean, "expected_mean": table.expected_mean}
    summary["passed"] = bool(ok)
    with open(out / "verify.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print("PASS" if ok else "FAIL")
    return 0 if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p, jobs=False):
    src = p.add_argument_group("configuration")
    src.add_argument("--config", metavar="PATH", help="JSON configuration file")
    src.add_argument("--preset", metavar="NAME", help="bundled configuration (see `etfe-lab presets`)")
    p.add_argument("--out", metavar="DIR",
                   help="output directory (default etfe_lab_out/<command>; ETFE_LAB_OUT overrides)")
    p.add_argument("--seed", metavar="U64", type=int, help="master seed, overrides the config's seed")
    if jobs:
        p.add_argument("--jobs", metavar="N", type=int, default=1,
                       help="worker processes for Monte Carlo trials (results do not depend on it)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="etfe-lab",
        description="Non-parametric frequency response estimation from periodic excitation, "
                    "with finite-sample certificates.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("design", help="build and certify a periodic excitation",
                       epilog=DESIGN_KEYS, formatter_class=fmt)
    _common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("etfe", help="simulate one data set, estimate, and certify",
                       epilog=ETFE_KEYS, formatter_class=fmt)
    _common(p)
    p.set_defaults(func=cmd_etfe)

    p = sub.add_parser("sweep", help="Monte Carlo sweep over record lengths",
                       epilog=SWEEP_KEYS, formatter_class=fmt)
    _common(p, jobs=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-hw", help="Monte Carlo check of the quadratic-form tail bounds",
                       epilog=VERIFY_KEYS, formatter_class=fmt)
    _common(p)
    p.set_defaults(func=cmd_verify_hw)

    p = sub.add_parser("presets", help="list bundled configurations")
    p.set_defaults(func=lambda args: print("\n".join(preset_names())) or 0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except EtfeLabError as exc:
        print(f"etfe-lab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (KeyError, TypeError, ValueError) as exc:
        print(f"etfe-lab {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
