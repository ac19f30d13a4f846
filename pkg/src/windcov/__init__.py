"""Wind-deformed anisotropic spatial covariance: geometry, kernels, simulation and fitting."""

__version__ = "0.1.0"

from .errors import (ConfigError, DuplicateSites, FactorizationFailed, InsufficientSites,  # noqa: E402
                     MissingGridMetadata, NonPositiveRadius, NonPositiveRange, NonPositiveStretch,
                     WindcovError)
from .geometry import (DeformationParams, WindField, anisotropy_matrix, deformed_sq_distance,  # noqa: E402
                       normalize_angle, rotation, stretch, wind_link_gamma)
from .kernels import CovarianceModel, KernelFamily, base_correlation, covariance  # noqa: E402
from .synthesis import (FieldSample, SiteSet, covariance_matrix, export_covariance_surface,  # noqa: E402
                        sample_field)
from .inference import FitResult, VariogramEstimate, empirical_variogram, fit, negative_log_likelihood  # noqa: E402
