"""pointerlab: labeled state-vector simulation of nested measurement chains,
with basis-decomposition analysis and decoherence-based certainty semantics.
"""

from .errors import (
    ApparatusNotReadyError,
    BasisCoverageError,
    DegenerateStateError,
    ExecutionError,
    ImpossibleOutcomeError,
    IncompleteBranchingError,
    InvalidPartitionError,
    LayoutConflictError,
    LayoutMismatchError,
    NonInjectiveLabelMapError,
    NonOrthonormalBasisError,
    PointerLabError,
    ScenarioParseError,
    UnknownLabelError,
    UnknownSubsystemError,
)
from .hilbert import (
    DensityOperator,
    LinearOperator,
    StateVector,
    Subsystem,
    SubsystemLayout,
    apply,
    basis_state,
    density,
    embed,
    group_layout,
    group_state,
    inner,
    make_state,
    partial_trace,
    tensor,
    ungroup_state,
)
from .measurement import (
    Basis,
    MeasurementSpec,
    OutcomeDistribution,
    attach_environment,
    born,
    condition,
    correlating_unitary,
    environment_couple,
    outcome_probability,
    pointer_reduce,
    premeasure,
)
from .decomposition import (
    Decomposition,
    SchmidtDecomposition,
    Term,
    UniquenessVerdict,
    relative_states,
    rewrite,
    schmidt,
    triortho_verdict,
)
from .experiment import (
    CertaintyVerdict,
    ConsistencyAudit,
    CoupleStep,
    DecoherenceComparison,
    EnvironmentModel,
    GroupStep,
    PremeasureStep,
    Proposition,
    ProtocolTranscript,
    build_init,
    certainty,
    consistency_audit,
    decoherence_compare,
    default_environment_models,
    joint_outcome,
    run_protocol,
)

__version__ = "0.1.0"
