"""Neighbourhood selection for stationary Gaussian Markov random fields on the torus."""

__version__ = "0.1.0"

from .cls import (
    FitResult,
    empirical_gamma,
    fit_cls,
    fit_unconstrained,
    project_population,
)
from .errors import (
    AssumptionError,
    CalibrationError,
    ConfigurationError,
    ConvergenceError,
    GMRFError,
    InfeasibleError,
    NumericalError,
    SingularDesignError,
)
from .lattice import NeighborhoodModel, TorusGeometry, build_model_collection
from .risk import (
    AsymptoticRisk,
    RiskTable,
    asymptotic_variance,
    conditional_variance,
    ellipsoid_membership,
    iso_m1_asymptotic,
    monte_carlo_risk,
    variance_matrices,
)
from .sampler import SampleBatch, sample_field, scenario_theta
from .selection import (
    SelectionConfig,
    SelectionReport,
    estimate_sigma2,
    penalty,
    rho_sup,
    rho_table,
    select_model,
    slope_heuristic_K,
)
from .spectral import (
    CovarianceModel,
    Spectrum,
    ThetaField,
    covariance_function,
    eigen_spectrum,
    feasibility,
    frobenius_loss,
    loss_l,
    population_gamma,
)
