"""Simulation and reconstruction toolkit for quantum correlation phase gradient microscopy.

Photon pairs are traced from a biphoton source through a complex target to a
near-field and a far-field camera; coincidences between the two give per-pixel
far-field centroids, whose shifts are the local phase gradient.
"""

from .coincidence import CoincidenceWindow, accidental_coincidences, dt_histogram, find_coincidences
from .errors import (
    ConfigError,
    EmptyDistributionError,
    FileFormatError,
    GridMismatchError,
    InvalidParameterError,
    NumericalError,
    QcpgmError,
    UnsortedStreamError,
)
from .metrics import nrmse, phase_step_measure, sbr_coincidence, sbr_singles, suppression_threshold
from .optics import (
    BiphotonParams,
    ComplexTarget,
    OpticalGeometry,
    compute_far_field,
    conditional_ff_distribution,
    gen_target,
    make_biphoton_params,
    nf_marginal,
    target_phase_from_height,
)
from .recon import frankot_chellappa
from .simulate import BackgroundModel, DetectorModel, simulate_background, simulate_pairs

__version__ = "0.1.0"
