"""Exception types raised by the simulation layers."""


class LarmorError(Exception):
    """Base class for all package errors."""


class WeakFieldViolation(LarmorError):
    """Static field too weak for the secular (strong-field) approximation."""


class EmptyRegister(LarmorError):
    """A nuclear operation was requested on a register without nuclei."""


class DimensionMismatch(LarmorError):
    """Operator/state dimensions do not agree."""


class NonHermitian(LarmorError):
    """A Hamiltonian (or observable) fails the Hermiticity check."""


class TooClose(LarmorError):
    """Lattice site inside the point-dipole validity radius."""


class CoincidentSites(LarmorError):
    """Two distinct positions required."""


class UnreachableCoefficient(LarmorError):
    """Requested harmonic weight outside the composite's tunable range."""


class EvenHarmonic(LarmorError):
    """Decoupling sequences only address odd harmonics."""


class OverlappingPulses(LarmorError):
    """Finite pulse durations exceed the free gaps between pulses."""


class NoPairDesignated(LarmorError):
    """Operation requires a designated Larmor pair in the register."""


class NonHermitianSegment(NonHermitian):
    """A schedule segment Hamiltonian fails the Hermiticity check."""


class Unsolvable(LarmorError):
    """No selective-gate solution exists within the allowed repetitions."""


class PlanUnsolved(LarmorError):
    """A gate plan without a solution was passed where one is required."""


class NotNormalized(LarmorError):
    """Input amplitudes do not form a normalized state."""


class StateOutsideDFS(LarmorError):
    """State has weight outside span{|up,down>, |down,up>} of the pair."""


class TooManyNodes(LarmorError):
    """Graph-state construction capped (dense statevector limit)."""


class ConfigError(LarmorError):
    """Malformed run configuration file."""
