"""Heralded Fock-state generation from multimode parametric down-conversion under loss."""

__version__ = "0.1.0"

from .distributions import (  # noqa: E402
    LossModel,
    ModeSpectrum,
    Pmf,
    distinct_q_pmf,
    lossy_squeezing,
    lossy_thermal_vacuum_prob,
    mu_from_schmidt_number,
    negative_binomial_pmf,
    phase_type_pmf,
    schmidt_coefficients,
    schmidt_number,
)
from .herald import (  # noqa: E402
    HeraldReport,
    JointPmf,
    fidelity_photon_number,
    fidelity_single_mode,
    herald_probability,
    joint_lossy_pmf,
    mean_detected_photons,
)
from .kernels import BACKEND  # noqa: E402
