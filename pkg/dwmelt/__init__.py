__version__ = "0.1.0"

from ._analysis import (
    SuperpositionPrediction,
    beating_amplitude,
    comparison_table,
    composed_profile,
    crossing_position,
    deviation,
    front_position,
    front_velocity,
    predict,
    profile_shift,
    shift_average,
    superposed_chi,
    superposed_profile,
    superposed_zeta,
    transit_time,
    two_hole_profile,
)
from ._errors import (
    AccuracyError,
    AnnihilationError,
    CheckpointError,
    ConvergenceError,
    DwmeltError,
    InsufficientDataError,
    OperatorLookupError,
    ParameterError,
    ShapeError,
    TrackingError,
    UnsupportedBasisError,
    exit_code_for,
)
from ._evolve import (
    Checkpoint,
    GroundStateConfig,
    KrylovConfig,
    StepDiagnostics,
    evolve_trajectory,
    krylov_step_dense,
    krylov_step_mps,
    load_checkpoint,
    save_checkpoint,
)
from ._models import (
    BasisKind,
    CouplingSet,
    HamiltonianRep,
    LocalTerm,
    Preparation,
    SiteBasis,
    SymmetrySector,
    build_bh,
    build_tj,
    build_xxz,
    charge_change,
    effective_couplings,
    local_charges,
    local_operator,
)
from ._observables import (
    BOND_KEYS,
    DX_KEYS,
    SCALAR_KEYS,
    SITE_KEYS,
    CurrentSet,
    ObserverSchedule,
    TrajectoryRecord,
    connected_zz,
    correlator_sites,
    currents,
    density_profile,
    energy,
    entanglement_entropy,
    entropy_profile,
    expect,
    local_profile,
    magnetization_profile,
    measure,
    raw_correlator,
    xx_correlator,
)
from ._runner import (
    PRESETS,
    ConvergenceReport,
    Defect,
    ExperimentConfig,
    OutputConfig,
    PrepConfig,
    Preset,
    PresetResult,
    RunResult,
    apply_overrides,
    build_hamiltonian,
    build_initial_state,
    compare_records,
    describe_presets,
    load_run,
    model_comparison_table,
    resume,
    run_convergence_suite,
    run_experiment,
    run_many,
    run_model_comparison,
    run_preset,
)
from ._sectors import DenseState, Representation, SectorSpace, sector_space
from ._states import (
    QuantumState,
    apply_defects,
    apply_hole,
    apply_spin_flip,
    boson_cutoff_check,
    domain_wall,
    prepare_bh_ground,
    product_state,
    to_dense,
    to_mps,
)
from ._tensornet import (
    MPO,
    CompressionReport,
    MPSState,
    add,
    amplitudes,
    apply_mpo,
    canonicalize,
    compress,
    expectation,
    norm,
    overlap,
    sandwich,
    schmidt_spectra,
    variational_ground_state,
)

__all__ = (
    # models
    "BasisKind",
    "SiteBasis",
    "CouplingSet",
    "SymmetrySector",
    "Preparation",
    "LocalTerm",
    "HamiltonianRep",
    "effective_couplings",
    "build_xxz",
    "build_bh",
    "build_tj",
    "local_operator",
    "local_charges",
    "charge_change",
    # states
    "Representation",
    "SectorSpace",
    "DenseState",
    "sector_space",
    "QuantumState",
    "product_state",
    "domain_wall",
    "apply_hole",
    "apply_spin_flip",
    "apply_defects",
    "to_dense",
    "to_mps",
    "prepare_bh_ground",
    "boson_cutoff_check",
    # tensornet
    "MPO",
    "MPSState",
    "CompressionReport",
    "canonicalize",
    "compress",
    "apply_mpo",
    "overlap",
    "norm",
    "add",
    "sandwich",
    "schmidt_spectra",
    "amplitudes",
    "expectation",
    "variational_ground_state",
    # evolve
    "KrylovConfig",
    "GroundStateConfig",
    "StepDiagnostics",
    "Checkpoint",
    "krylov_step_dense",
    "krylov_step_mps",
    "evolve_trajectory",
    "save_checkpoint",
    "load_checkpoint",
    # observables
    "ObserverSchedule",
    "TrajectoryRecord",
    "CurrentSet",
    "SITE_KEYS",
    "BOND_KEYS",
    "DX_KEYS",
    "SCALAR_KEYS",
    "expect",
    "local_profile",
    "magnetization_profile",
    "density_profile",
    "correlator_sites",
    "raw_correlator",
    "connected_zz",
    "xx_correlator",
    "entanglement_entropy",
    "entropy_profile",
    "energy",
    "currents",
    "measure",
    # analysis
    "SuperpositionPrediction",
    "shift_average",
    "superposed_profile",
    "two_hole_profile",
    "composed_profile",
    "superposed_zeta",
    "superposed_chi",
    "predict",
    "deviation",
    "front_velocity",
    "front_position",
    "beating_amplitude",
    "crossing_position",
    "profile_shift",
    "transit_time",
    "comparison_table",
    # runner
    "Defect",
    "PrepConfig",
    "OutputConfig",
    "ExperimentConfig",
    "RunResult",
    "ConvergenceReport",
    "Preset",
    "PresetResult",
    "PRESETS",
    "apply_overrides",
    "build_hamiltonian",
    "build_initial_state",
    "run_experiment",
    "run_many",
    "load_run",
    "resume",
    "compare_records",
    "run_convergence_suite",
    "model_comparison_table",
    "run_model_comparison",
    "run_preset",
    "describe_presets",
    # errors
    "DwmeltError",
    "ParameterError",
    "ShapeError",
    "OperatorLookupError",
    "UnsupportedBasisError",
    "AnnihilationError",
    "InsufficientDataError",
    "TrackingError",
    "AccuracyError",
    "ConvergenceError",
    "CheckpointError",
    "exit_code_for",
)
