"""Electron-nuclear spin register simulator: Larmor pairs, selective
gates, decoherence-free storage, and lattice census."""

from .constants import GAMMA_C13, GAMMA_E, khz_to_rad, rad_to_khz
from .lattice import (
    HyperfineVector,
    LatticeSite,
    NuclearBathSample,
    generate_sites,
    hyperfine_vector,
    pair_coupling,
    sample_occupation,
)
from .spincore import (
    NuclearSpin,
    Operator,
    QuantumState,
    SpinRegister,
    build_register,
    expectation,
    site_operator,
)
from .sequences import (
    Pulse,
    PulseErrorModel,
    PulseSequence,
    RfPulse,
    apply_errors,
    build_sequence,
    modulation_coefficients,
    rf_pi_pulse,
)
from .engine import (
    CoherenceTrace,
    FrameSpec,
    NoiseChannel,
    Schedule,
    SequenceSimulator,
    UnitaryResult,
    coherence_under_noise,
    effective_interaction,
    gate_fidelity,
    propagate,
    time_domain_equivalence,
    to_rotating,
)
from .protocols import (
    DeeParams,
    GateSequenceParams,
    PolarScanParams,
    ProtocolResult,
    SelectiveGatePlan,
    dee_spectrum,
    graph_state_build,
    min_angle,
    plan_selective_pi,
    polar_position_scan,
    r_pi_ideal,
    r_pi_time_domain,
    remote_cz,
    retrieval_protocol,
    storage_protocol,
    u_ent_prime,
    z_rotation,
)
from .census import CensusConfig, CensusReport, classify_pairs, run_census

__version__ = "0.1.0"
