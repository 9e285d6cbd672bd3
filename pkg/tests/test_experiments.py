import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etfe_lab import NonPositive, SweepAborted
from etfe_lab.experiments import (Cell, SweepConfig, fit_rate, run_sweep, write_outputs,
                                  write_results_csv)


def small(**kw):
    base = dict(N_p_values=[8, 32, 128], n_monte_carlo=20)
    base.update(kw)
    return SweepConfig(**base)


@pytest.fixture(scope="module")
def fixed_grid():
    return run_sweep(small())


class TestFitRate:
    @given(c=st.floats(0.01, 100), p=st.floats(-2, 2))
    @settings(max_examples=40, deadline=None)
    def test_recovers_exact_power_law(self, c, p):
        Ns = [2.0 ** j for j in range(6, 14)]
        fit = fit_rate([(N, c * N ** p) for N in Ns])
        assert fit.slope == pytest.approx(p, abs=1e-9)
        assert fit.intercept == pytest.approx(math.log(c), abs=1e-8)
        assert fit.stderr < 1e-12

    def test_two_points_is_an_error(self):
        with pytest.raises(ValueError):
            fit_rate([(10, 1.0), (100, 0.3)])

    def test_nonpositive_mean_rejected(self):
        with pytest.raises(NonPositive):
            fit_rate([(10, 1.0), (100, 0.0), (1000, 0.1)])

    def test_stderr_positive_for_noisy_points(self):
        fit = fit_rate([(10, 1.0), (100, 0.4), (1000, 0.09)])
        assert fit.stderr > 0


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            SweepConfig.from_dict({"mode": "fixed-grid", "N_p": 3})

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            SweepConfig(mode="adaptive")

    def test_description_is_ignored(self):
        cfg = SweepConfig.from_dict({"description": "x", "name": "y", "seed": 4})
        assert cfg.seed == 4

    def test_hash_tracks_content(self):
        assert small().config_hash() == small().config_hash()
        assert small().config_hash() != small(seed=1).config_hash()

    def test_prbs_requires_mersenne_period(self):
        with pytest.raises(ValueError):
            SweepConfig().excitation_for(100)

    def test_excitation_for_sets_order(self):
        exc = SweepConfig().excitation_for(255)
        assert exc.period == 255
        assert np.all(exc.sigma_u > 0)


class TestFixedGrid:
    def test_one_cell_per_record_length(self, fixed_grid):
        assert [(c.M, c.N) for c in fixed_grid.curve(127)] == [(127, 1016), (127, 4064), (127, 16256)]

    def test_errors_decay_roughly_like_inverse_root(self, fixed_grid):
        assert -0.7 < fixed_grid.slopes[127].slope < -0.3

    def test_raw_trial_audit(self, fixed_grid):
        for c in fixed_grid.cells:
            assert c.trials.size == 20
            assert c.mean == float(np.mean(c.trials))
            assert c.std == float(np.std(c.trials, ddof=1))

    def test_certificate_dominates_mean_plus_three_std(self, fixed_grid):
        for c in fixed_grid.cells:
            assert c.certificate >= c.mean + 3 * c.std

    def test_rerun_is_bit_identical(self, fixed_grid):
        again = run_sweep(small())
        for a, b in zip(fixed_grid.cells, again.cells):
            assert np.array_equal(a.trials, b.trials)

    def test_worker_count_does_not_change_results(self, fixed_grid):
        parallel = run_sweep(small(), jobs=2)
        for a, b in zip(fixed_grid.curve(), parallel.curve()):
            assert np.array_equal(a.trials, b.trials)

    def test_inserting_a_sweep_point_leaves_others_untouched(self, fixed_grid):
        wider = run_sweep(small(N_p_values=[8, 16, 32, 128]))
        by_N = {c.N: c.trials for c in wider.cells}
        for c in fixed_grid.cells:
            assert np.array_equal(by_N[c.N], c.trials)

    def test_adding_a_resolution_leaves_others_untouched(self, fixed_grid):
        both = run_sweep(small(M_values=[127, 63]))
        for c in fixed_grid.cells:
            twin = next(d for d in both.cells if (d.M, d.N) == (c.M, c.N))
            assert np.array_equal(twin.trials, c.trials)

    def test_master_seed_changes_trials(self, fixed_grid):
        other = run_sweep(small(seed=1))
        assert not np.array_equal(other.cells[0].trials, fixed_grid.cells[0].trials)

    def test_tiny_condition_cap_aborts(self):
        with pytest.raises(SweepAborted):
            run_sweep(small(cond_cap=0.5, N_p_values=[8], n_monte_carlo=3))


class TestRatio:
    def test_larger_resolution_has_larger_error(self):
        r = run_sweep(small(mode="ratio", M_values=[127, 255], N_p_values=[16, 64, 256]))
        assert r.extra["M_small"] == 127 and r.extra["M_large"] == 255
        assert 1.1 < r.extra["pooled_ratio"] < 1.9
        for row in r.extra["ratios"]:
            assert row["N_large"] % 255 == 0
            assert abs(row["N_large"] - row["N_small"]) <= 255 / 2

    def test_identical_resolutions_give_unit_ratio(self):
        r = run_sweep(small(mode="ratio", M_values=[127, 127], N_p_values=[8, 16, 32]))
        assert r.extra["pooled_ratio"] == 1.0

    def test_needs_two_resolutions(self):
        with pytest.raises(ValueError):
            run_sweep(small(mode="ratio", M_values=[127]))


class TestHinf:
    def test_frozen_resolution_plateaus(self):
        cfg = small(mode="hinf", orders=[5], N_values=[1024, 4096, 16384, 65536],
                    n_monte_carlo=5, pilot_trials=2)
        r = run_sweep(cfg)
        assert {c.M for c in r.cells} == {31}
        assert abs(r.slopes["all"].slope) < 0.05

    def test_pilot_records_every_candidate(self):
        cfg = small(mode="hinf", orders=[3, 4, 5, 6], N_values=[256, 1024, 4096],
                    n_monte_carlo=5, pilot_trials=3)
        r = run_sweep(cfg)
        assert len(r.extra["selected"]) == 3
        assert len(r.extra["pilot"]) == 12
        for sel in r.extra["selected"]:
            pilots = [p for p in r.extra["pilot"] if p["N_target"] == sel["N_target"]]
            best = min(pilots, key=lambda p: p["mean"])
            assert (best["M"], best["N"]) == (sel["M"], sel["N"])
            assert sel["N"] % sel["M"] == 0

    def test_needs_record_lengths(self):
        with pytest.raises(ValueError):
            run_sweep(small(mode="hinf"))


class TestCoverage:
    def test_default_confidence_is_covered(self):
        r = run_sweep(small(mode="coverage", N_p_values=[16], n_monte_carlo=30))
        row = r.extra["coverage"][0]
        assert row["violation_fraction"] <= 0.05
        assert row["within_delta"]

    def test_near_one_delta_still_covers(self):
        loose = run_sweep(small(mode="coverage", N_p_values=[16], n_monte_carlo=30, delta=0.999))
        tight = run_sweep(small(mode="coverage", N_p_values=[16], n_monte_carlo=30, delta=0.05))
        a, b = loose.extra["coverage"][0], tight.extra["coverage"][0]
        assert a["violation_fraction"] <= 0.999
        assert a["max_error_over_epsilon"] >= b["max_error_over_epsilon"]

    def test_noiseless_run_never_violates(self):
        r = run_sweep(small(mode="coverage", N_p_values=[16], n_monte_carlo=5, noise_variance=0.0))
        assert r.extra["coverage"][0]["violation_fraction"] == 0.0


class TestOutputs:
    def test_files_and_columns(self, fixed_grid, tmp_path):
        write_outputs(fixed_grid, tmp_path)
        with open(tmp_path / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 60
        assert set(rows[0]) == {"M", "N", "trial", "error"}
        with open(tmp_path / "summary.csv") as fh:
            summary = list(csv.DictReader(fh))
        assert {"M", "N", "mean", "std", "certificate"} <= set(summary[0])
        assert float(summary[0]["normalized_mean"]) == 1.0
        rates = json.loads((tmp_path / "rates.json").read_text())
        assert rates["normalization"] == "first-point"
        assert rates["slopes"]["127"]["slope"] == fixed_grid.slopes[127].slope
        svg = (tmp_path / "plot.svg").read_text()
        assert svg.lstrip().startswith("<?xml") and "</svg>" in svg

    def test_outputs_are_byte_identical(self, fixed_grid, tmp_path):
        write_outputs(fixed_grid, tmp_path / "a")
        write_outputs(run_sweep(small()), tmp_path / "b")
        for name in ("results.csv", "summary.csv", "rates.json", "plot.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_results_round_trip_exactly(self, tmp_path):
        trials = np.array([0.1, 1 / 3, 2.0 ** -40])
        from etfe_lab.experiments import SweepResult
        write_results_csv(SweepResult("fixed-grid", [Cell(7, 14, trials)], "h", "none"),
                          tmp_path / "r.csv")
        with open(tmp_path / "r.csv") as fh:
            back = [float(r["error"]) for r in csv.DictReader(fh)]
        assert back == trials.tolist()
