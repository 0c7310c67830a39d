"""Eigenvibrations of membrane books with a concentrated mass band along the junction."""

__version__ = "0.1.0"

from .assembly import CoefficientSet
from .errors import (BookVibError, ConfigError, ConvergenceFailure, InteriorResonance,
                     NumericalError, ParseError)
from .geometry import BookGeometry, MeshParams, build_book, generate_mesh
from .spectra import (Scenario, SolverSettings, classify_spectrum, dtn_problem,
                      limit_spectrum_high_m, limit_spectrum_m1, perturbed_spectrum, scan_roots,
                      sigma_d, unperturbed_spectrum)

__all__ = [
    "__version__", "BookGeometry", "MeshParams", "build_book", "generate_mesh",
    "CoefficientSet", "Scenario", "SolverSettings",
    "perturbed_spectrum", "unperturbed_spectrum", "limit_spectrum_m1", "limit_spectrum_high_m",
    "sigma_d", "dtn_problem", "scan_roots", "classify_spectrum",
    "BookVibError", "ConfigError", "ParseError", "NumericalError", "ConvergenceFailure",
    "InteriorResonance",
]
