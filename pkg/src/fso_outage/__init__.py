"""Outage probability, SNR exponents and power control for MIMO free-space optical links with PPM."""

from .csit import (LongTermPolicy, PowerAllocation, delay_limited_capacity, gamma_s, lt_exponent, lt_min_power,
                   lt_snr_threshold, lt_threshold_s, outage_csit_b1, outage_csit_mc, st_allocation)
from .numerics import GridFunction, find_root, integrate, nfold_convolve
from .outage_csir import (ExponentReport, OutageCurve, empirical_exponent, instantaneous_mi, outage_b1, outage_mc,
                          snr_exponent, snr_exponent_lognormal_approx)
from .ppm import InfoTable, MonteCarloSpec, inv_mi, inv_mmse, mi_awgn, mmse_ppm
from .scintillation import (ChannelConfig, CombinedFadingDistribution, ScintillationModel, combined_distribution,
                            sample_combined, scintillation_index, single_pdf)

__all__ = [
    "ChannelConfig", "CombinedFadingDistribution", "ExponentReport", "GridFunction", "InfoTable",
    "LongTermPolicy", "MonteCarloSpec", "OutageCurve", "PowerAllocation", "ScintillationModel",
    "combined_distribution", "delay_limited_capacity", "empirical_exponent", "find_root", "gamma_s",
    "instantaneous_mi", "integrate", "inv_mi", "inv_mmse", "lt_exponent", "lt_min_power", "lt_snr_threshold",
    "lt_threshold_s", "mi_awgn", "mmse_ppm", "nfold_convolve", "outage_b1", "outage_csit_b1", "outage_csit_mc",
    "outage_mc", "sample_combined", "scintillation_index", "single_pdf", "snr_exponent",
    "snr_exponent_lognormal_approx", "st_allocation",
]
