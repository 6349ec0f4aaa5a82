"""Most probable paths and flows for noise-driven flows of diffeomorphisms.

Submodules:
  fields    parametric vector fields with exact derivative jets
  geometry  the noise-induced Riemannian geometry (metric, curvature, z, f)
  om        path functional, quadrature, direct variational minimizer
  mpp       path ODE integration, shooting, pointwise flows
  sde       Stratonovich/Ito simulation and tube probabilities
  epdiff1d  1D periodic geodesic / optimal-drift spectral solver
  scenario  TOML scenario configs
  cli       command-line front end
"""

from .errors import (
    BlowUpError,
    ConfigError,
    EllipticityViolation,
    MppFlowError,
    NearSingularMetricWarning,
    NonConvergence,
    ResolutionWarning,
)
from .fields import (
    Constant,
    ConformalAxis,
    GaussianKernel,
    Jet,
    KernelMomentum,
    NoiseModel,
    Sinusoid,
    Sum,
    TimeScaled,
    eval_jet,
    fd_jet_oracle,
)
from .geometry import (
    GeometryJet,
    christoffel,
    cometric,
    drift_z,
    generator_apply,
    geometry_jet,
    metric_and_derivatives,
    om_potential,
    scalar_curvature,
)
from .mpp import MppState, ShootingProblem, curve_rhs, integrate_mpp, mpp_flow, shoot
from .om import Path, direct_minimize, om_gradient, om_integral, om_integrand
from .sde import (
    Ensemble,
    SdeConfig,
    TubeQuery,
    ito_drift_conversion,
    simulate_ito,
    simulate_stratonovich,
    tube_probability,
)

__version__ = "0.1.0"
