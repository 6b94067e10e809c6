"""Decoupling sequence compilation and pulse error models.

Sequences are trains of microwave pi pulses on the electron.  The sign
function F(t) = (-1)^(pulses so far) filters the electron-nuclear
coupling by harmonic: F(t) = sum_k f_k cos(k w_dd t) with f_k = 0 for
even k.  CPMG and the XY family fix f_k to the square-wave values; the
adaptive family replaces each pulse with a five-pulse composite whose
two internal spacings are solved numerically for a requested f_k.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .constants import khz_to_rad
from .errors import (
    EvenHarmonic,
    NoPairDesignated,
    OverlappingPulses,
    UnreachableCoefficient,
)

__all__ = [
    "Pulse",
    "PulseSequence",
    "PulseErrorModel",
    "RfPulse",
    "build_sequence",
    "modulation_coefficients",
    "apply_errors",
    "rf_pi_pulse",
    "sequence_to_text",
    "sequence_from_text",
]

# Composite axes follow the XY8 pattern; intra-composite phases use the
# Knill offsets relative to the composite axis for robustness.
_XY8_PHASES = np.array([0.0, 0.5, 0.0, 0.5, 0.5, 0.0, 0.5, 0.0]) * np.pi
_KNILL_OFFSETS = np.array([np.pi / 6, 0.0, np.pi / 2, 0.0, np.pi / 6])

SQUARE_WAVE_F1 = 4.0 / np.pi


@dataclass(frozen=True)
class Pulse:
    """One elementary pi pulse: nominal center time and axis phase."""

    time: float
    phase: float


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple[Pulse, ...]
    omega_dd: float  # rad/s
    k_dd: int
    f_k: float  # realized coefficient at harmonic k_dd
    total_time: float
    composite: bool
    family: str
    error_model: "PulseErrorModel | None" = None

    def __post_init__(self):
        if not self.pulses:
            raise ValueError("a sequence needs at least one pulse")
        times = np.array([p.time for p in self.pulses])
        if np.any(times <= 0) or np.any(times >= self.total_time):
            raise ValueError("pulse times must lie strictly inside (0, total_time)")
        if np.any(np.diff(times) <= 0):
            raise ValueError("pulse times must be strictly increasing")
        object.__setattr__(self, "pulses", tuple(self.pulses))

    @property
    def n_pulses(self) -> int:
        return len(self.pulses)

    def times(self) -> np.ndarray:
        return np.array([p.time for p in self.pulses])


@dataclass(frozen=True)
class PulseErrorModel:
    """Static amplitude/detuning errors on every microwave pulse.

    An ideal pi pulse lasts pi/rabi; the amplitude error rescales the
    rotation angle to pi*(1 + amplitude_frac) and the detuning tilts the
    rotation axis out of the equatorial plane.
    """

    rabi: float  # rad/s
    amplitude_frac: float = 0.0
    detuning: float = 0.0  # rad/s
    pulse_duration: float = 0.0  # s; defaults to pi/rabi

    def __post_init__(self):
        if self.rabi <= 0:
            raise ValueError("rabi must be positive")
        if self.pulse_duration == 0.0:
            object.__setattr__(self, "pulse_duration", np.pi / self.rabi)


@dataclass(frozen=True)
class RfPulse:
    """Radio-frequency nuclear drive in the rotating-frame convention."""

    rabi: float  # Omega, rad/s
    phase: float  # phi_rf, rad
    duration: float  # s
    carrier: float  # rad/s, tuned to the pair frequency
    frame_offset: float = 0.0  # Delta, rad/s

    def is_pi(self, tol: float = 1e-9) -> bool:
        return abs(self.duration * self.rabi - np.pi) < tol


def _square_wave_fk(k: int) -> float:
    if k % 2 == 0:
        return 0.0
    return (4.0 / (np.pi * k)) * (-1.0) ** ((k - 1) // 2)


def _composite_fk(k: int, u: float, v: float) -> float:
    """f_k of the 5-pulse composite train, spacings u = w*t1, v = w*t2."""
    sign = (-1.0) ** ((k - 1) // 2)
    return sign * (4.0 / (np.pi * k)) * (1.0 + 2.0 * np.cos(k * v) - 2.0 * np.cos(k * u))


def _solve_composite(k_dd: int, target: float, tol: float = 1e-10):
    """Find spacings (u, v), 0 < u < v < pi/2, with f_{k_dd} = target.

    A Newton solve from a deterministic grid of starting points targets
    f_{k_dd} = target together with f_{k_dd + 2} = 0 (nulling the nearest
    odd neighbor).  If no joint solution converges, falls back to the
    one-parameter family f_{k_dd} = target alone, picking the member that
    minimizes |f_{k_dd + 2}|.
    """
    from scipy.optimize import fsolve

    k2 = k_dd + 2
    margin = 1e-3
    lo, hi = margin, np.pi / 2 - margin

    def residual(x):
        u, v = x
        return [
            _composite_fk(k_dd, u, v) - target,
            _composite_fk(k2, u, v),
        ]

    n_start = max(24, 8 * k_dd)
    starts = np.linspace(lo, hi, n_start)
    joint = []
    for i, u0 in enumerate(starts):
        for v0 in starts[i + 1 :: max(1, n_start // 24)]:
            sol, info, ok, _ = fsolve(
                residual, [u0, v0], full_output=True, xtol=1e-15, factor=0.5
            )
            if ok != 1:
                continue
            u, v = float(sol[0]), float(sol[1])
            if not (lo / 2 < u < v < hi + margin / 2):
                continue
            err = max(abs(r) for r in residual((u, v)))
            if err < max(tol, 1e-12):
                joint.append((u, v))
        if joint:
            break
    if joint:
        u, v = min(joint, key=lambda s: (round(s[0], 8), round(s[1], 8)))
        return u, v

    # Fallback: scan the f_{k_dd}-only solution family.
    grid = np.linspace(lo, hi, max(481, 60 * k_dd))
    family = []
    for v in grid:
        us = grid[grid < v]
        if us.size < 2:
            continue
        vals = _composite_fk(k_dd, us, v) - target
        idx = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
        for j in idx[:4]:
            try:
                u_root = brentq(
                    lambda u: _composite_fk(k_dd, u, v) - target,
                    us[j], us[j + 1], xtol=1e-15, rtol=1e-15,
                )
            except ValueError:
                continue
            family.append((abs(_composite_fk(k2, u_root, v)), u_root, v))
    if not family:
        raise UnreachableCoefficient(
            f"f_{k_dd} = {target} outside the composite's reachable range"
        )
    _, u, v = min(family)
    if abs(_composite_fk(k_dd, u, v) - target) > tol:
        raise UnreachableCoefficient(
            f"composite solver residual too large for f_{k_dd} = {target}"
        )
    return float(u), float(v)


def build_sequence(
    family: str,
    k_dd: int,
    target_frequency: float,
    f_k_target: float | None = None,
    n_pulses: int = 8,
) -> PulseSequence:
    """Compile a decoupling sequence resonant with `target_frequency`.

    Parameters
    ----------
    family : "CPMG", "XY8" or "AXY8".
    k_dd : odd harmonic used for addressing; omega_dd = target / k_dd.
    f_k_target : requested coefficient at k_dd (AXY8 only).
    n_pulses : elementary pulse count; multiples of 8 for XY8 and of 40
        (8 five-pulse composites) for AXY8.
    """
    family = family.upper()
    if k_dd % 2 == 0 or k_dd < 1:
        raise EvenHarmonic(f"k_dd must be odd and positive, got {k_dd}")
    if target_frequency <= 0:
        raise ValueError("target_frequency must be positive")
    omega_dd = target_frequency / k_dd
    tau = np.pi / omega_dd  # spacing of pulse (or composite) centers

    if family == "CPMG":
        if n_pulses < 1:
            raise ValueError("need at least one pulse")
        centers = (np.arange(n_pulses) + 0.5) * tau
        pulses = tuple(Pulse(t, 0.0) for t in centers)
        return PulseSequence(
            pulses, omega_dd, k_dd, _square_wave_fk(k_dd), n_pulses * tau,
            composite=False, family="CPMG",
        )

    if family == "XY8":
        if n_pulses % 8 != 0 or n_pulses == 0:
            raise ValueError("XY8 pulse count must be a positive multiple of 8")
        centers = (np.arange(n_pulses) + 0.5) * tau
        phases = _XY8_PHASES[np.arange(n_pulses) % 8]
        pulses = tuple(Pulse(t, p) for t, p in zip(centers, phases))
        return PulseSequence(
            pulses, omega_dd, k_dd, _square_wave_fk(k_dd), n_pulses * tau,
            composite=False, family="XY8",
        )

    if family == "AXY8":
        if f_k_target is None:
            raise ValueError("AXY8 requires f_k_target")
        if n_pulses % 40 != 0 or n_pulses == 0:
            raise ValueError("AXY8 pulse count must be a positive multiple of 40")
        n_comp = n_pulses // 5
        if abs(f_k_target) < 1e-15:
            # decoupling-only composite: symmetric spacings null the harmonic
            u, v = _solve_composite(k_dd, 0.0)
        else:
            u, v = _solve_composite(k_dd, f_k_target)
        offsets = np.array([-v, -u, 0.0, u, v]) / omega_dd
        pulses = []
        for p in range(n_comp):
            center = (p + 0.5) * tau
            axis = _XY8_PHASES[p % 8]
            for off, knill in zip(offsets, _KNILL_OFFSETS):
                pulses.append(Pulse(center + off, axis + knill))
        realized = _composite_fk(k_dd, u, v)
        return PulseSequence(
            tuple(pulses), omega_dd, k_dd, realized, n_comp * tau,
            composite=True, family="AXY8",
        )

    raise ValueError(f"unknown family {family!r}")


def modulation_coefficients(seq: PulseSequence, k_max: int) -> np.ndarray:
    """Fourier cosine coefficients f_k, k = 1..k_max, of F(t) over one
    fundamental period (2pi/omega_dd), integrated piecewise exactly."""
    period = 2 * np.pi / seq.omega_dd
    times = seq.times()
    inside = times[times < period - 1e-15 * period]
    edges = np.concatenate([[0.0], inside, [period]])
    signs = (-1.0) ** np.arange(len(edges) - 1)
    ks = np.arange(1, k_max + 1)
    coeffs = np.zeros(k_max)
    for k_idx, k in enumerate(ks):
        w = k * seq.omega_dd
        pieces = np.sin(w * edges[1:]) - np.sin(w * edges[:-1])
        coeffs[k_idx] = (2.0 / period) * np.sum(signs * pieces / w)
    return coeffs


def modulation_sine_coefficients(seq: PulseSequence, k_max: int) -> np.ndarray:
    """Sine-series counterpart; vanishes for the symmetric trains here."""
    period = 2 * np.pi / seq.omega_dd
    times = seq.times()
    inside = times[times < period - 1e-15 * period]
    edges = np.concatenate([[0.0], inside, [period]])
    signs = (-1.0) ** np.arange(len(edges) - 1)
    coeffs = np.zeros(k_max)
    for k_idx, k in enumerate(range(1, k_max + 1)):
        w = k * seq.omega_dd
        pieces = -(np.cos(w * edges[1:]) - np.cos(w * edges[:-1]))
        coeffs[k_idx] = (2.0 / period) * np.sum(signs * pieces / w)
    return coeffs


def modulation_value(seq: PulseSequence, t) -> np.ndarray:
    """F(t) = (-1)^(number of pulses before t)."""
    times = seq.times()
    t = np.atleast_1d(np.asarray(t, dtype=float))
    counts = np.searchsorted(times, t, side="right")
    return (-1.0) ** counts


def apply_errors(seq: PulseSequence, errors: PulseErrorModel) -> PulseSequence:
    """Attach a static pulse-error model; pulse centers stay on the ideal
    grid so the resonance condition is preserved.

    Raises OverlappingPulses if the finite durations do not fit between
    neighboring centers or inside the sequence window.
    """
    d = errors.pulse_duration
    times = seq.times()
    if times[0] - d / 2 <= 0 or times[-1] + d / 2 >= seq.total_time:
        raise OverlappingPulses("boundary pulse sticks out of the sequence window")
    if np.any(np.diff(times) < d):
        raise OverlappingPulses(
            f"pulse duration {d:.3e} s exceeds the smallest gap "
            f"{np.min(np.diff(times)):.3e} s"
        )
    return replace(seq, error_model=errors)


def rf_pi_pulse(register, phase: float, rabi: float = khz_to_rad(8.0),
                frame_offset: float = 0.0) -> RfPulse:
    """RF pi pulse resonant with the register's designated Larmor pair.

    With phase = phi_2 + pi/2 this generates the simultaneous flip
    exp(i pi I2^y) exp(i pi I1^alpha), alpha = phi_2 - phi_1 + pi/2.
    """
    pair = register.require_pair()
    if pair is None:
        raise NoPairDesignated("rf_pi_pulse needs a designated pair")
    carrier = register.nuclei[pair[0] - 1].larmor
    return RfPulse(
        rabi=rabi,
        phase=float(phase) % (2 * np.pi),
        duration=np.pi / rabi,
        carrier=carrier,
        frame_offset=frame_offset,
    )


def sequence_to_text(seq: PulseSequence) -> str:
    """Timed-event export: one line per pulse (time, phase, duration)."""
    d = seq.error_model.pulse_duration if seq.error_model else 0.0
    buf = io.StringIO()
    buf.write(
        f"# family={seq.family} k_dd={seq.k_dd} omega_dd_radps={float(seq.omega_dd)!r} "
        f"f_k={float(seq.f_k)!r} total_time_s={float(seq.total_time)!r}\n"
    )
    buf.write("# time_s phase_rad duration_s\n")
    for p in seq.pulses:
        buf.write(f"{float(p.time)!r} {float(p.phase)!r} {float(d)!r}\n")
    return buf.getvalue()


def sequence_from_text(text: str) -> PulseSequence:
    header = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "family=" in line:
                header = dict(
                    tok.split("=", 1) for tok in line[1:].split() if "=" in tok
                )
            continue
        t, phase, dur = (float(x) for x in line.split())
        rows.append((t, phase, dur))
    if header is None:
        raise ValueError("missing sequence header line")
    seq = PulseSequence(
        tuple(Pulse(t, ph) for t, ph, _ in rows),
        omega_dd=float(header["omega_dd_radps"]),
        k_dd=int(header["k_dd"]),
        f_k=float(header["f_k"]),
        total_time=float(header["total_time_s"]),
        composite=header["family"] == "AXY8",
        family=header["family"],
    )
    return seq
