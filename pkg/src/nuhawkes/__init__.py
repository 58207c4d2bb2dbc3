"""Nearly unstable self-exciting processes and their scaling limits, at desk scale.

The package simulates multivariate and mean-field Hawkes-type systems close to
criticality, computes kernel resolvents and limit measures, solves the
limiting stochastic Volterra diffusions, samples the three mean-field regime
limits, and checks the connecting identities statistically.
"""

from .grids import Grid
from .kernels import (
    BernsteinTriplet,
    ExponentialKernel,
    GridSampledKernel,
    Kernel,
    KernelDomainError,
    NearlyUnstableFamily,
    PowerLawKernel,
    StabilityReport,
    bernstein_eval,
    kernel_from_spec,
    kernel_to_spec,
    l1_and_stability,
    make_jr_family,
    spectral_radius,
    zero_kernel,
)
from .resolvent import (
    ResolventTable,
    fourier_limit_setting1,
    resolvent_grid,
    scaled_resolvent_measure,
    setting1_from_b_matrix,
    setting1_from_family,
    verify_laplace_identity,
)
from .hawkes import (
    HawkesParams,
    HawkesPath,
    RescaledTriple,
    UnsupportedSimulationError,
    compensator_martingale,
    rescale_path,
    simulate_cluster,
    simulate_thinning,
)
from .meanfield import (
    AuxiliarySystemPath,
    MeanFieldParams,
    ParticleSystemPath,
    empirical_snapshot,
    simulate_coupled_auxiliary,
    simulate_particles,
)
from .limits import (
    CIRParams,
    EmpiricalMeasureSnapshot,
    LimitKernelSpec,
    RegimeLimitSample,
    SVEPath,
    cir_correspondence,
    ensemble_cir,
    ensemble_sve,
    limit_empirical_law,
    sample_regime_limit,
    solve_cir,
    solve_sve,
)
from .stats import (
    HolderEstimate,
    TestReport,
    exchangeable_moment_check,
    holder_exponent,
    ks_distance,
    qv_identity_check,
    wasserstein1,
)
from .rng import run_indexed, stream, substream_seed

__version__ = "0.1.0"
