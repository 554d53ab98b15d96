"""Likelihood-free confidence distributions and approximate Bayesian computing."""

from .adjustment import RegressionFit, adjust, fit_local_linear, regression_adjust
from .core import (
    ApproxCDError,
    DegenerateSampleError,
    DomainError,
    ParticleSet,
    RngStream,
    SingularDesignError,
    SupportMismatchError,
    ToleranceTooSmallError,
    ValidationError,
    substream,
    weighted_mean,
)
from .inference import (
    ConfidenceRegion,
    EmpiricalCD,
    MatchingMaps,
    cd_from_particles,
    coverage_score,
    depth_region,
    empirical_quantile,
    interval_from_W,
    location_maps,
    mahalanobis_depth,
    scale_maps,
)
from .initial import KdeEstimate, MinibatchConfig, kde_bandwidth, minibatch_rn, refined_minibatch_rn
from .kernels import KernelSpec, accept_probability
from .models import CauchyModel, GaussianLocationModel, RickerModel, gaussian_acc_closed_form
from .samplers import (
    ProposalDistribution,
    SamplerConfig,
    abc_importance,
    abc_reject,
    acc_reject,
    pmc_refine,
)

__version__ = "0.1.0"
