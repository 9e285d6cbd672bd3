import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from etfe_lab import (certificate_report, hw_tail, impulse_response, lemma4_tail, realize_grid,
                      spectrum_gap_bound, strict_stability_norm, theorem1_bound, theorem3_bound,
                      transient_bound, universal_constant)
from etfe_lab.certificates import as_probability, hw_log_tail
from etfe_lab.exceptions import GridInfeasible, InvalidDelta, MissingSigmaU
from etfe_lab.spectral import aliased_spectrum, default_autocovariance, grid_indices


@pytest.fixture(scope="module")
def g_star(plant):
    return strict_stability_norm(impulse_response(plant))


def t1(M=127, N=127 * 64, delta=0.05, sigma=None, phi=0.15):
    sigma = np.full(M, 1.0) if sigma is None else sigma
    return theorem1_bound(delta, M, N, 1, 1, 1.0, 1.0, 1.3, 224.0, sigma, np.full((M, 1, 1), phi))


class TestConstants:
    def test_universal_constant_value(self):
        assert universal_constant() == pytest.approx(35.575, abs=5e-4)
        assert universal_constant() / 12 == pytest.approx(math.sqrt(4 * math.log(9)), rel=1e-15)
        assert universal_constant() > 0


class TestTransientAndGap:
    def test_memoryless_system(self):
        assert transient_bound(0.0, 1.3, 100) == 0.0

    def test_quadrupling_n_halves(self):
        assert transient_bound(3.0, 1.0, 400) == pytest.approx(transient_bound(3.0, 1.0, 100) / 2)

    def test_reference_plant_value(self, g_star):
        assert transient_bound(g_star, 1.3, 1023 * 8) == pytest.approx(2 * g_star * 1.3 / math.sqrt(8184))
        assert g_star == pytest.approx(224.47, abs=0.01)

    def test_gap_bound_white_noise(self):
        assert spectrum_gap_bound(0.0, 50) == 0.0

    def test_gap_bound_doubling(self):
        assert spectrum_gap_bound(0.3, 200) == pytest.approx(spectrum_gap_bound(0.3, 100) / 2)

    def test_gap_bound_ar1(self, ref_spec):
        R = default_autocovariance(ref_spec)
        expected = 2 * (0.1 / 0.96 * 0.2 / 0.64)
        assert spectrum_gap_bound(R.star_norm, 1) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(0.0651, abs=1e-4)


class TestPerFrequencyRadius:
    def test_doubling_m_scales_noise_by_root_two_with_log_frozen(self):
        a = t1(M=127, N=127 * 254)
        b = t1(M=254, N=127 * 254)
        c = universal_constant()
        fa = 1 + c * math.sqrt(1 + math.log(127 / 0.05))
        fb = 1 + c * math.sqrt(1 + math.log(254 / 0.05))
        assert b.noise[0] / a.noise[0] == pytest.approx(math.sqrt(2) * fb / fa, rel=1e-12)
        assert b.noise[0] / a.noise[0] > math.sqrt(2)

    def test_smaller_delta_widens_every_radius(self):
        assert np.all(t1(delta=0.01).epsilon > t1(delta=0.05).epsilon)

    def test_quadrupling_n(self):
        a, b = t1(N=127 * 16), t1(N=127 * 64)
        np.testing.assert_allclose(b.noise / a.noise, 0.5, rtol=1e-12)
        np.testing.assert_allclose(b.transient / a.transient, 0.25, rtol=1e-12)

    def test_doubling_n(self):
        a, b = t1(N=127 * 16), t1(N=127 * 32)
        np.testing.assert_allclose(a.transient / b.transient, 2.0, rtol=1e-12)
        np.testing.assert_allclose(a.noise / b.noise, math.sqrt(2), rtol=1e-12)

    def test_formula_by_hand(self):
        M, N = 15, 15 * 8
        sigma = np.linspace(0.5, 2.0, M)
        r = t1(M=M, N=N, sigma=sigma, phi=0.2)
        c = universal_constant()
        l = 4
        hand_t = 2 * 224.0 * 1.3 * math.sqrt(M) / (sigma[l] * N)
        hand_n = math.sqrt(M / N) * math.sqrt(0.2) / sigma[l] * (1 + c * math.sqrt(1 + math.log(M / 0.05)))
        assert r.transient[l] == pytest.approx(hand_t, rel=1e-13)
        assert r.noise[l] == pytest.approx(hand_n, rel=1e-13)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 2.0])
    def test_delta_outside_unit_interval(self, delta):
        with pytest.raises(InvalidDelta):
            t1(delta=delta)

    def test_missing_sigma(self):
        with pytest.raises(MissingSigmaU):
            theorem1_bound(0.05, 7, 14, 1, 1, 1, 1, 1, 1, None, np.ones((7, 1, 1)))
        with pytest.raises(MissingSigmaU):
            t1(M=7, N=14, sigma=np.r_[0.0, np.ones(6)])


class TestHinfBound:
    def test_first_term(self, g_star):
        r = theorem3_bound(1.0, 10 ** 6, 1, 1, 1, 1, 1.3, g_star, 2.0, 1.0, 0.05)
        assert r.lipschitz == pytest.approx(math.pi * 1e-2 * g_star, rel=1e-12)

    def test_transient_term_becomes_negligible(self, g_star):
        ratios = []
        for N in (10 ** 3, 10 ** 6):
            r = theorem3_bound(1.0, N, 1, 1, 1, 1, 1.3, g_star, 2.0, 1.0, 0.05)
            ratios.append(r.transient / r.noise)
        # between N = 1e3 and 1e6 the ratio shrinks by ~ (1e3)^(1/2), modulo the log factor
        assert ratios[1] / ratios[0] == pytest.approx(10 ** -1.5, rel=0.3)

    def test_composes_from_per_frequency_terms(self, ref_spec, prbs7, g_star):
        M, N, delta = 127, 127 * 64, 0.05
        report = certificate_report(ref_spec, prbs7, N, delta, G_star=g_star)
        c = universal_constant()
        K, s = ref_spec.subgaussian_K, ref_spec.noise_std
        hand = (math.pi * g_star / M
                + float(np.max(report.transient))
                + math.sqrt(M / N) / report.worst_snr * c * (1 + K * K / (s * s) * math.sqrt(1 + math.log(N / delta))))
        assert report.theorem3.total == pytest.approx(hand, rel=1e-12)
        assert report.c_1 == pytest.approx(M / N ** (1 / 3))

    def test_infeasible_constant(self):
        with pytest.raises(GridInfeasible):
            theorem3_bound(1.3, 1000, 1, 1, 1, 1, 1, 1, 1, 1, 0.05)

    def test_realize_grid_on_prbs_periods(self):
        N = 127 * 16
        M, Np, c1 = realize_grid(10.0, N, candidates=[2 ** d - 1 for d in range(2, 17)])
        assert (M, Np) == (127, 16)
        assert c1 == pytest.approx(127 / N ** (1 / 3))
        with pytest.raises(GridInfeasible):
            realize_grid(1.0, N, candidates=[2 ** d - 1 for d in range(2, 17)])


class TestTails:
    def test_alpha_to_zero_is_vacuous(self):
        assert hw_tail(1e-12, 4.0, 1.0, 1.0) == pytest.approx(2.0)
        assert as_probability(hw_tail(1e-12, 4.0, 1.0, 1.0)) == 1.0

    @pytest.mark.parametrize("n", [1, 16, 400])
    def test_identity_map(self, n):
        assert hw_tail(1.0, math.sqrt(n), 1.0, 1.0) == pytest.approx(2 * math.exp(-n / 144), rel=1e-12)

    def test_branch_crossover(self):
        K = 1.3
        a_star = 144 * K ** 2 / (16 * math.sqrt(2))
        assert a_star == pytest.approx(9 / math.sqrt(2) * K ** 2)
        f2, o2 = 3.0, 1.0
        quad = lambda a: a * a * f2 ** 2 / (144 * K ** 4 * o2)
        lin = lambda a: a * f2 ** 2 / (16 * math.sqrt(2) * K ** 2 * o2)
        assert quad(a_star) == pytest.approx(lin(a_star))
        assert -hw_log_tail(0.9 * a_star, f2, o2, K) + math.log(2) == pytest.approx(quad(0.9 * a_star))
        assert -hw_log_tail(1.1 * a_star, f2, o2, K) + math.log(2) == pytest.approx(lin(1.1 * a_star))

    def test_operator_norm_above_frobenius(self):
        with pytest.raises(ValueError):
            hw_tail(1.0, 1.0, 2.0, 1.0)

    @given(st.floats(0.01, 50), st.floats(0.01, 50), st.floats(1.0, 5.0), st.floats(1.0, 3.0))
    def test_hw_monotone(self, a, b, K, K2):
        lo, hi = sorted([a, b])
        assert hw_tail(hi, 3.0, 1.0, K) <= hw_tail(lo, 3.0, 1.0, K)
        assert hw_tail(lo, 3.0, 1.0, K) <= hw_tail(lo, 3.0, 1.0, K * K2)

    @pytest.mark.parametrize("s", [0.5, 1.0, 3.0, 10.0])
    def test_norm_tail_scalar_case(self, s):
        assert lemma4_tail(s, 1.0, 1.0, [[0.3]], 1) == pytest.approx(162 * math.exp(-s * s / 144), rel=1e-12)

    def test_norm_tail_vanishes_for_large_s(self):
        assert lemma4_tail(1e3, 1.0, 1.0, [[0.3]], 1) < 1e-100

    def test_norm_tail_extra_input_multiplies_by_81(self):
        assert lemma4_tail(2.0, 1.0, 1.0, [[0.3]], 2) / lemma4_tail(2.0, 1.0, 1.0, [[0.3]], 1) == pytest.approx(81)

    @given(st.floats(0.01, 30), st.floats(0.01, 30), st.floats(1.0, 4.0))
    def test_norm_tail_monotone(self, a, b, K):
        lo, hi = sorted([a, b])
        assert lemma4_tail(hi, K, 1.0, [[0.1]], 1) <= lemma4_tail(lo, K, 1.0, [[0.1]], 1)
        assert lemma4_tail(lo, 1.0, 1.0, [[0.1]], 1) <= lemma4_tail(lo, K, 1.0, [[0.1]], 1)

    def test_clip(self):
        assert lemma4_tail(1.0, 1.0, 1.0, [[1.0]], 1, clip=True) == 1.0


class TestReport:
    def test_every_radius_positive(self, ref_spec, prbs7):
        r = certificate_report(ref_spec, prbs7, 127 * 16, 0.05)
        assert np.all(r.epsilon > 0)
        assert r.N_p == 16 and r.K == ref_spec.subgaussian_K

    def test_uses_aliased_spectrum(self, ref_spec, prbs7):
        N = 127 * 4
        r = certificate_report(ref_spec, prbs7, N, 0.05)
        phi = aliased_spectrum(default_autocovariance(ref_spec), N, grid_indices(127, N))[:, 0, 0].real
        np.testing.assert_allclose(r.snr, prbs7.sigma_u / np.sqrt(phi))

    def test_noiseless_report(self, noiseless_spec, prbs7):
        r = certificate_report(noiseless_spec, prbs7, 127 * 8, 0.05)
        assert np.all(r.noise == 0) and np.all(np.isinf(r.snr))
        assert r.theorem3 is None

    def test_grid_mismatch(self, ref_spec, prbs7):
        with pytest.raises(GridInfeasible):
            certificate_report(ref_spec, prbs7, 1000, 0.05)

    def test_exports(self, ref_spec, prbs7, tmp_path):
        r = certificate_report(ref_spec, prbs7, 127 * 8, 0.05)
        r.to_json(tmp_path / "c.json")
        r.to_csv(tmp_path / "c.csv")
        d = json.loads((tmp_path / "c.json").read_text())
        for key in ("c", "K", "sigma_e", "D_u", "G_star", "R_star", "d_u", "d_y", "M", "N", "N_p",
                    "sigma_u", "snr", "worst_snr", "worst_sigma_u", "c_1", "epsilon", "theorem3"):
            assert key in d
        assert set(d["theorem3"]) == {"lipschitz", "transient", "noise", "total"}
        assert len((tmp_path / "c.csv").read_text().splitlines()) == 128
