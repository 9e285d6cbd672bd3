"""Empirical transfer function estimation with finite-sample certificates.

Typical use::

    from etfe_lab import (SimulationSpec, build_excitation, certify, simulate,
                          EmpiricalTransferFunctionEstimator)

    exc = certify(build_excitation({"type": "prbs", "order": 7}))
    traj = simulate(spec, exc, N=127 * 64, seed=1)
    est = EmpiricalTransferFunctionEstimator(M=127).fit(traj)
"""
__version__ = "0.1.0"

from .certificates import (CertificateReport, certificate_report, hw_tail, lemma4_tail,
                           realize_grid, spectrum_gap_bound, theorem1_bound, theorem3_bound,
                           transient_bound, universal_constant)
from .concentration import (TruncatedOperator, filter_dft_operator, sample_quadratic_form,
                            verify_hw, verify_lemma4)
from .estimator import (EmpiricalTransferFunctionEstimator, EtfeResult, cell_index, etfe,
                        frequency_errors, grid_error, hinf_error, naive_extend)
from .exceptions import *  # noqa: F401,F403
from .excitation import (PeriodicExcitation, build_excitation, certify, lfsr_bits, multisine,
                         prbs, shift_schedule)
from .experiments import (SweepConfig, SweepResult, fit_rate, run_coverage, run_fixed_grid,
                          run_hinf, run_m_ratio, run_sweep, write_outputs)
from .lti import (RationalTransferFunction, SimulationSpec, TrajectorySet, frequency_response,
                  impulse_response, lipschitz_bound, load_system, noise_autocovariance, simulate,
                  strict_stability_norm)
from .spectral import (SpectrumTable, StackedDfts, aliased_spectrum, default_autocovariance, dft,
                       exact_spectrum, grid_indices, snr,
                       spectrum_gap, stack, transient_term)
