"""Space-time transformations of mechanical systems and their quantum corrections.

The package pulls a system (metric, vector and scalar potentials) back
through a coordinate map ``q(Q)`` combined with a time rescaling
``dt = f(Q) ds``, computes the resulting quantum correction potential in
two independent ways and checks the transformation classically (trajectory
correspondence) and quantum mechanically (spectra and resolvents on 1D
grids).
"""

__version__ = "0.1.0"

from .diffgeo import (  # noqa: E402
    ConnectionField,
    FrameField,
    MetricField,
    cartan_connection,
    cartan_scalar,
    christoffel,
    frame_geometry,
    riemann_scalar,
    schwarz_residual,
    torsion_contracted,
)
from .errors import (  # noqa: E402
    DegenerateFrame,
    DKError,
    DomainExit,
    EnergyMismatch,
    NoBoundState,
    NonPositiveTimeScale,
    ParseError,
    SingularLinearSolve,
    SingularMetric,
    SpectrumOverlap,
    StepFailure,
    UnsupportedDimension,
    ValidationError,
)
from .expressions import parse  # noqa: E402
from .smoothmap import CallableMap, ExpressionMap, JetMap, SmoothMap, expression_map, scalar_map  # noqa: E402
from .transform import (  # noqa: E402
    SystemSpec,
    TransformedSystem,
    TransformSpec,
    classical_potential,
    pull_metric,
    pull_vector_potential,
    quantum_correction_direct,
    quantum_potential_direct,
    quantum_potential_geometric,
    transform_system,
)
from .classical import (  # noqa: E402
    IntegratorConfig,
    Trajectory,
    auto_conformal_exponent,
    correspondence_check,
    equations_of_motion,
    integrate,
    pseudotime_map,
)
from .quantum import (  # noqa: E402
    AmplitudeCheckReport,
    Grid1D,
    Grid1DOperator,
    discretize_hamiltonian,
    resolvent_dk_check,
    zero_mode_spectral_check,
)
