"""heavypoints: a laboratory for transient lattice random walks.

Exact engines (Green function by torus quadrature and by convolution
iteration, closed-form joint local-time laws) sit next to a
high-throughput Monte Carlo simulator; every constant the exact side
produces is a target the statistical side estimates.
"""

__version__ = "1.0.0"

from .errors import (  # noqa: F401
    AsymmetricLaw,
    AsymptoticMismatch,
    BadProbabilities,
    BoxTooSmall,
    ConfigError,
    DimensionTooSmall,
    MemoryCap,
    MissingConstants,
    MissingGreenValue,
    NoConvergence,
    NotAperiodic,
    OriginNotAllowed,
    OutOfDomain,
    PackingRange,
    RadiusTooLarge,
    SpectrumDegenerate,
)
from .lattice import (  # noqa: F401
    Ball,
    CovarianceData,
    StepDistribution,
    build_distribution,
    enumerate_ball,
    euclid_ball,
    moment_report,
    parse_model_file,
    parse_model_text,
    q_norm_sq,
)
from .green import (  # noqa: F401
    DerivedConstants,
    GreenTable,
    SiteConstants,
    build_green_table,
    derive_constants,
    green_asymptotic,
    green_dp_oracle,
    green_quadrature,
    validate_asymptotic,
)
from .jointlaw import (  # noqa: F401
    ExcursionLaw,
    JointLaw,
    JointSite,
    excursion_law,
    joint_pmf_oracle,
    marginal_visit_law,
    restricted_mgf,
    site_pack,
)
from .walk import (  # noqa: F401
    ExcursionRecord,
    ExcursionSample,
    LocalTimeField,
    WalkRun,
    count_returns,
    estimate_hitting,
    eta,
    excursion_decompose,
    local_time,
    max_local_time,
    merge_fields,
    sample_excursions,
    sample_return_counts,
    simulate,
    top_sites,
)
