"""Time evolution: piecewise-constant propagation, effective gates,
rotating frames, a lab-frame sequence simulator, and the stochastic
electron-reset noise channel.

Free evolution uses the static two-level-electron Hamiltonian

    H = (1/2) sigma_z sum_j (Apar_j I_j^z + Aperp_j I_j^x) - sum_j w_j I_j^z

which is exactly piecewise-constant between control events, so no
fixed-step integrator is involved there.  Only radio-frequency drive
windows, whose lab-frame field rotates continuously, are sub-divided
(first-order Magnus average per slice, slice count set by
``rf_substeps`` per carrier period).

The rotating frame used throughout is W(t) = exp(-i sum_j w'_j t I_j^z)
applied to lab states, with w'_j = w_j + delta_rot; a propagator over
[t0, t1] maps to the frame as W(t1) U W(t0)^dagger.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import (
    DimensionMismatch,
    NonHermitianSegment,
    OverlappingPulses,
)
from .sequences import PulseErrorModel, PulseSequence, RfPulse
from .spincore import Operator, SpinRegister, basis_ket

__all__ = [
    "FrameSpec",
    "Schedule",
    "UnitaryResult",
    "propagate",
    "EffectiveInteraction",
    "effective_interaction",
    "gate_fidelity",
    "nuclear_frame",
    "to_rotating",
    "SequenceSimulator",
    "SimResult",
    "dd_block_events",
    "rf_window_events",
    "FidelityReport",
    "time_domain_equivalence",
    "NoiseChannel",
    "CoherenceTrace",
    "coherence_under_noise",
]

_ID2 = np.eye(2, dtype=complex)
_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)


# ---------------------------------------------------------------------------
# schedules and plain piecewise-constant propagation


@dataclass(frozen=True)
class FrameSpec:
    """Rotating-frame descriptor: common offset and accumulated phase.

    Per-nucleus frame frequencies are w_j + delta_rot.  After a block of
    duration T the phase delta_rot * T accrues and must be added to the
    phases of subsequent rotating-frame RF controls.
    """

    delta_rot: float = 0.0
    accumulated_phase: float = 0.0

    def advance(self, duration: float) -> "FrameSpec":
        return FrameSpec(self.delta_rot, self.accumulated_phase + self.delta_rot * duration)

    def rf_phase(self, phi_rf: float) -> float:
        return phi_rf + self.accumulated_phase


@dataclass
class Schedule:
    """Ordered piecewise-constant Hamiltonian segments."""

    segments: list[tuple[Operator, float]]
    frame: FrameSpec = field(default_factory=FrameSpec)

    @property
    def total_duration(self) -> float:
        return float(sum(d for _, d in self.segments))


@dataclass(frozen=True)
class UnitaryResult:
    propagator: Operator
    wall_segments: int
    max_unitarity_defect: float


def _expm_hermitian(h: np.ndarray, dt: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * vals * dt)) @ vecs.conj().T


def propagate(register: SpinRegister, schedule: Schedule) -> UnitaryResult:
    """Ordered product of exp(-i H_k t_k) over the schedule segments."""
    dim = register.dim
    unitary = np.eye(dim, dtype=complex)
    for op, duration in schedule.segments:
        mat = op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)
        if mat.shape != (dim, dim):
            raise DimensionMismatch(
                f"segment dim {mat.shape} != register dim {dim}"
            )
        if np.max(np.abs(mat - mat.conj().T)) > 1e-9 * max(1.0, np.max(np.abs(mat))):
            raise NonHermitianSegment("segment Hamiltonian is not Hermitian")
        if duration < 0:
            raise ValueError("segment durations must be non-negative")
        unitary = _expm_hermitian(mat, duration) @ unitary
    gram = unitary.conj().T @ unitary
    defect = float(np.max(np.abs(gram - np.eye(dim))))
    return UnitaryResult(Operator(unitary), len(schedule.segments), defect)


# ---------------------------------------------------------------------------
# effective (rotating-wave) interaction gate


@dataclass(frozen=True)
class EffectiveInteraction:
    operator: Operator
    duration: float
    theta: float
    f_k: float
    a_perp: float


def _rodrigues(ax: float, ay: float, az: float, dt: float) -> np.ndarray:
    """exp(-i dt (a . I)) for spin-1/2, I = sigma/2."""
    norm = np.sqrt(ax * ax + ay * ay + az * az)
    half = 0.5 * norm * dt
    if norm == 0.0:
        return np.eye(2, dtype=complex)
    c, s = np.cos(half), np.sin(half)
    nx, ny, nz = ax / norm, ay / norm, az / norm
    return np.array(
        [
            [c - 1j * s * nz, -s * (ny + 1j * nx)],
            [s * (ny - 1j * nx), c + 1j * s * nz],
        ],
        dtype=complex,
    )


def _branch_sign(register: SpinRegister, e: int) -> float:
    # sigma_z eigenvalue of electron basis state e in {0: |0>, 1: |m_s>}
    return float(register.ms_branch * (2 * e - 1))


def effective_interaction(
    register: SpinRegister, f_k: float, a_perp: float, theta: float
) -> EffectiveInteraction:
    """Exact matrix exponential of the resonant effective Hamiltonian,
    U = exp[-i theta sigma_z (I1^x + I2^x)] on the designated pair, with
    the physical duration 4 theta / (f_k A_perp)."""
    p, q = register.require_pair()
    n = register.n_nuclei
    blocks = []
    for e in (0, 1):
        s = _branch_sign(register, e)
        mats = [
            _rodrigues(s * theta, 0, 0, 1.0) if (j + 1) in (p, q) else _ID2
            for j in range(n)
        ]
        blocks.append(reduce(np.kron, mats) if mats else np.eye(1, dtype=complex))
    dim_n = 2**n
    out = np.zeros((2 * dim_n, 2 * dim_n), dtype=complex)
    out[:dim_n, :dim_n] = blocks[0]
    out[dim_n:, dim_n:] = blocks[1]
    if theta == 0:
        duration = 0.0
    elif f_k == 0 or a_perp == 0:
        raise ValueError("nonzero theta needs nonzero f_k and A_perp")
    else:
        duration = 4.0 * theta / (f_k * a_perp)
    return EffectiveInteraction(Operator(out), duration, theta, f_k, a_perp)


def gate_fidelity(actual, ideal) -> float:
    """F = |Tr(U_ideal U^dag)| / Tr(U U^dag)."""
    u = actual.matrix if isinstance(actual, Operator) else np.asarray(actual)
    v = ideal.matrix if isinstance(ideal, Operator) else np.asarray(ideal)
    if u.shape != v.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionMismatch(f"shapes {u.shape} vs {v.shape}")
    denom = np.trace(u @ u.conj().T).real
    return float(np.abs(np.trace(v @ u.conj().T)) / denom)


# ---------------------------------------------------------------------------
# rotating frame helpers


def nuclear_frame(register: SpinRegister, t: float, delta_rot: float = 0.0) -> np.ndarray:
    """Diagonal of W(t) = exp(-i sum_j w'_j t I_j^z) over the register."""
    n = register.n_nuclei
    diag = np.ones(1, dtype=complex)
    for nuc in register.nuclei:
        w = nuc.larmor + delta_rot
        diag = np.kron(diag, np.array([np.exp(-0.5j * w * t), np.exp(0.5j * w * t)]))
    return np.kron(np.ones(2), diag)


def to_rotating(
    register: SpinRegister,
    unitary: np.ndarray,
    t_end: float,
    t_start: float = 0.0,
    delta_rot: float = 0.0,
) -> np.ndarray:
    """Map a lab-frame propagator over [t_start, t_end] into the rotating
    frame: W(t_end) U W(t_start)^dagger."""
    w_end = nuclear_frame(register, t_end, delta_rot)
    w_start = nuclear_frame(register, t_start, delta_rot)
    return (w_end[:, None] * unitary) * w_start.conj()[None, :]


# ---------------------------------------------------------------------------
# lab-frame sequence simulator


@dataclass(frozen=True)
class SimResult:
    unitary: np.ndarray
    duration: float
    segments: int
    pulse_count: int
    t_start: float

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    def unitarity_defect(self) -> float:
        gram = self.unitary.conj().T @ self.unitary
        return float(np.max(np.abs(gram - np.eye(self.unitary.shape[0]))))


class SequenceSimulator:
    """Walks control events against the static register Hamiltonian.

    Events (absolute-time ordering is the caller's responsibility):
        ("free", dt)
        ("pulse", phase, angle)      microwave pulse on the electron
        ("rf", dt, RfPulse)          RF drive on, no microwave pulse inside
        ("zgate",)                   instantaneous sigma_z (frame shift)

    With no error model, microwave pulses are instantaneous rotations;
    with one, they become finite segments of the full Hamiltonian (drive
    + detuning + hyperfine + Zeeman + any RF context), centered on the
    nominal times.
    """

    def __init__(
        self,
        register: SpinRegister,
        error_model: PulseErrorModel | None = None,
        rf_substeps: int = 32,
        intra_pair_coupling: float = 0.0,
    ):
        self.register = register
        self.error_model = error_model
        self.rf_substeps = int(rf_substeps)
        self.g_pair = float(intra_pair_coupling)
        n = register.n_nuclei
        self.apar = np.array([nuc.hyperfine.a_par for nuc in register.nuclei])
        self.aperp = np.array([nuc.hyperfine.a_perp for nuc in register.nuclei])
        self.azim = np.array([nuc.hyperfine.azimuth for nuc in register.nuclei])
        self.omega = np.array([nuc.larmor for nuc in register.nuclei])
        self.dim_n = 2**n
        self.dim = 2 ** (n + 1)
        self._pulse_cache: dict = {}
        self._block_cache: dict = {}
        self._h_nn = self._internuclear_block() if self.g_pair else None

    # -- Hamiltonian pieces ------------------------------------------------

    def _internuclear_block(self) -> np.ndarray:
        """Secular like-spin dipolar coupling on the designated pair,
        g (2 I1z I2z - I1x I2x - I1y I2y); splits the pair's |+-~> states."""
        p, q = self.register.require_pair()
        n = self.register.n_nuclei

        def embed(mats):
            ops = [_ID2] * n
            ops[p - 1], ops[q - 1] = mats
            return reduce(np.kron, ops)

        h = 2 * embed((0.5 * _SZ, 0.5 * _SZ))
        h = h - embed((0.5 * _SX, 0.5 * _SX)) - embed((0.5 * _SY, 0.5 * _SY))
        return self.g_pair * h

    def _rf_local_amplitudes(self, rf: RfPulse, t_abs: float, dt: float):
        """Cycle-averaged local-frame (x, y) drive components per nucleus
        over [t_abs, t_abs + dt]; first-order Magnus slice average."""
        w = rf.carrier
        phi_cmd = -rf.phase
        if w == 0.0:
            amp = 2.0 * rf.rabi * np.cos(phi_cmd)
        else:
            amp = (
                2.0
                * rf.rabi
                * (np.sin(w * (t_abs + dt) + phi_cmd) - np.sin(w * t_abs + phi_cmd))
                / (w * dt)
            )
        # lab x axis sits at local azimuth -phi_j for nucleus j
        return amp * np.cos(self.azim), -amp * np.sin(self.azim)

    def _branch_block(self, e: int, dt: float, rfx=None, rfy=None) -> np.ndarray:
        """Nuclear-space propagator for electron branch e over dt."""
        n = self.register.n_nuclei
        if n == 0:
            return np.eye(1, dtype=complex)
        if self._h_nn is not None:
            # internuclear terms break the single-nucleus factorization
            return _expm_hermitian(self._branch_hamiltonian(e, rfx, rfy), dt)
        s = _branch_sign(self.register, e)
        mats = []
        for j in range(n):
            ax = s * self.aperp[j] / 2.0 + (rfx[j] if rfx is not None else 0.0)
            ay = rfy[j] if rfy is not None else 0.0
            az = s * self.apar[j] / 2.0 - self.omega[j]
            mats.append(_rodrigues(ax, ay, az, dt))
        return reduce(np.kron, mats)

    def _branch_hamiltonian(self, e: int, rfx=None, rfy=None) -> np.ndarray:
        s = _branch_sign(self.register, e)
        n = self.register.n_nuclei
        h = np.zeros((self.dim_n, self.dim_n), dtype=complex)
        for j in range(n):
            ax = s * self.aperp[j] / 2.0 + (rfx[j] if rfx is not None else 0.0)
            ay = rfy[j] if rfy is not None else 0.0
            az = s * self.apar[j] / 2.0 - self.omega[j]
            ops = [_ID2] * n
            ops[j] = 0.5 * (ax * _SX + ay * _SY + az * _SZ)
            h += reduce(np.kron, ops)
        if self._h_nn is not None:
            h = h + self._h_nn
        return h

    def full_hamiltonian(self, rfx=None, rfy=None, drive=None) -> np.ndarray:
        """Dense H on the full space; `drive` is (rabi_eff, phase, detuning)."""
        h = np.zeros((self.dim, self.dim), dtype=complex)
        h[: self.dim_n, : self.dim_n] = self._branch_hamiltonian(0, rfx, rfy)
        h[self.dim_n :, self.dim_n :] = self._branch_hamiltonian(1, rfx, rfy)
        if drive is not None:
            rabi, phase, detuning = drive
            sig = (
                np.cos(phase) * self.register.sigma_x2()
                + np.sin(phase) * self.register.sigma_y2()
            )
            h += np.kron(0.5 * rabi * sig, np.eye(self.dim_n))
            h += np.kron(0.5 * detuning * self.register.sigma_z2(), np.eye(self.dim_n))
        return h

    # -- event execution ----------------------------------------------------

    def _apply_blocks(self, unitary, b0, b1):
        unitary[: self.dim_n, :] = b0 @ unitary[: self.dim_n, :]
        unitary[self.dim_n :, :] = b1 @ unitary[self.dim_n :, :]
        return unitary

    def _ideal_pulse(self, phase: float, angle: float) -> np.ndarray:
        key = (round(phase % (2 * np.pi), 15), round(angle, 15))
        if key not in self._pulse_cache:
            sig = (
                np.cos(phase) * self.register.sigma_x2()
                + np.sin(phase) * self.register.sigma_y2()
            )
            u2 = _expm_hermitian(0.5 * sig, angle)
            self._pulse_cache[key] = np.kron(u2, np.eye(self.dim_n))
        return self._pulse_cache[key]

    def _finite_pulse(self, phase: float, angle: float, t_center: float,
                      rf: RfPulse | None) -> np.ndarray:
        em = self.error_model
        duration = angle / em.rabi
        rabi_eff = em.rabi * (1.0 + em.amplitude_frac)
        if rf is None:
            key = ("fp", round(phase % (2 * np.pi), 15), round(angle, 15))
            if key not in self._pulse_cache:
                h = self.full_hamiltonian(drive=(rabi_eff, phase, em.detuning))
                self._pulse_cache[key] = _expm_hermitian(h, duration)
            return self._pulse_cache[key]
        rfx, rfy = self._rf_local_amplitudes(rf, t_center - duration / 2, duration)
        h = self.full_hamiltonian(rfx, rfy, drive=(rabi_eff, phase, em.detuning))
        return _expm_hermitian(h, duration)

    def run(self, events, t_start: float = 0.0) -> SimResult:
        unitary = np.eye(self.dim, dtype=complex)
        t = t_start
        segments = 0
        pulses = 0
        for ev in events:
            kind = ev[0]
            if kind == "free":
                dt = ev[1]
                if dt < 0:
                    raise OverlappingPulses(f"negative free gap {dt:.3e} s at t={t:.3e}")
                if dt == 0.0:
                    continue
                b0 = self._branch_block(0, dt)
                b1 = self._branch_block(1, dt)
                unitary = self._apply_blocks(unitary, b0, b1)
                t += dt
                segments += 1
            elif kind == "pulse":
                _, phase, angle = ev
                if self.error_model is None:
                    unitary = self._ideal_pulse(phase, angle) @ unitary
                else:
                    duration = angle / self.error_model.rabi
                    unitary = self._finite_pulse(phase, angle, t + duration / 2, None) @ unitary
                    t += duration
                segments += 1
                pulses += 1
            elif kind == "pulse_in_rf":
                _, phase, angle, rf = ev
                if self.error_model is None:
                    unitary = self._ideal_pulse(phase, angle) @ unitary
                else:
                    duration = angle / self.error_model.rabi
                    unitary = self._finite_pulse(phase, angle, t + duration / 2, rf) @ unitary
                    t += duration
                segments += 1
                pulses += 1
            elif kind == "rf":
                _, dt, rf = ev
                if dt < 0:
                    raise OverlappingPulses(f"negative RF gap {dt:.3e} s at t={t:.3e}")
                if dt == 0.0:
                    continue
                period = 2 * np.pi / rf.carrier
                n_sub = max(1, int(np.ceil(dt / (period / self.rf_substeps))))
                sub = dt / n_sub
                for i in range(n_sub):
                    rfx, rfy = self._rf_local_amplitudes(rf, t, sub)
                    b0 = self._branch_block(0, sub, rfx, rfy)
                    b1 = self._branch_block(1, sub, rfx, rfy)
                    unitary = self._apply_blocks(unitary, b0, b1)
                    t += sub
                    segments += 1
            elif kind == "zgate":
                unitary = np.kron(self.register.sigma_z2(), np.eye(self.dim_n)) @ unitary
            else:
                raise ValueError(f"unknown event kind {kind!r}")
        return SimResult(unitary, t - t_start, segments, pulses, t_start)


def dd_block_events(seq: PulseSequence, error_model: PulseErrorModel | None = None):
    """Primitive events for one decoupling block, pulses on their nominal
    centers.  With a finite-pulse model, free gaps shrink accordingly."""
    events = []
    t = 0.0
    d = error_model.pulse_duration if error_model else 0.0
    for pulse in seq.pulses:
        gap = (pulse.time - d / 2.0) - t
        if gap < 0:
            raise OverlappingPulses("finite pulses overlap in this block")
        events.append(("free", gap))
        events.append(("pulse", pulse.phase, np.pi))
        t = pulse.time + d / 2.0
    tail = seq.total_time - t
    if tail < 0:
        raise OverlappingPulses("last pulse sticks out of the block")
    events.append(("free", tail))
    return events


def rf_window_events(
    rf: RfPulse,
    protect_seq: PulseSequence | None,
    error_model: PulseErrorModel | None = None,
):
    """Primitive events for an RF window of duration rf.duration with an
    optional protecting (zero-coefficient) pulse train laid over it."""
    events = []
    if protect_seq is None:
        events.append(("rf", rf.duration, rf))
        return events
    if abs(protect_seq.total_time - rf.duration) > 1e-12 * max(rf.duration, 1.0):
        raise ValueError("protect sequence must span the RF window")
    t = 0.0
    d = error_model.pulse_duration if error_model else 0.0
    for pulse in protect_seq.pulses:
        gap = (pulse.time - d / 2.0) - t
        if gap < 0:
            raise OverlappingPulses("finite pulses overlap inside the RF window")
        events.append(("rf", gap, rf))
        events.append(("pulse_in_rf", pulse.phase, np.pi, rf))
        t = pulse.time + d / 2.0
    tail = rf.duration - t
    if tail < 0:
        raise OverlappingPulses("last protect pulse sticks out of the RF window")
    events.append(("rf", tail, rf))
    return events


# ---------------------------------------------------------------------------
# time-domain vs effective-gate comparison


@dataclass(frozen=True)
class FidelityReport:
    fidelity: float
    theta: float
    duration: float
    f_k: float
    segments: int


def time_domain_equivalence(
    register: SpinRegister,
    seq: PulseSequence,
    theta: float,
    rf_substeps: int = 32,
) -> FidelityReport:
    """Propagate the full lab-frame pulse train (oscillating terms kept),
    rotate to the nuclear frame, and compare with the resonant effective
    gate exp[-i theta sigma_z (I1^x + I2^x)]."""
    pair = register.require_pair()
    a_perp = register.nuclei[pair[0] - 1].hyperfine.a_perp
    sim = SequenceSimulator(register, rf_substeps=rf_substeps)
    res = sim.run(dd_block_events(seq, None))
    u_rot = to_rotating(register, res.unitary, res.t_end, res.t_start)
    ideal = effective_interaction(register, seq.f_k, a_perp, theta)
    fid = gate_fidelity(u_rot, ideal.operator)
    return FidelityReport(fid, theta, res.duration, seq.f_k, res.segments)


# ---------------------------------------------------------------------------
# stochastic electron noise channel


@dataclass(frozen=True)
class NoiseChannel:
    """Electron reset/flip events, Poisson-distributed in time.

    `events_per_cycle / cycle_period` is the event rate; "electron_reset"
    projects the electron and re-randomizes it over {|0>, |m_s>},
    "electron_flip" applies a bare pi flip at each event.
    """

    kind: str = "electron_reset"
    events_per_cycle: int = 1
    cycle_period: float = 10e-6

    def __post_init__(self):
        if self.kind not in ("electron_reset", "electron_flip"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.events_per_cycle < 0 or self.cycle_period <= 0:
            raise ValueError("bad noise channel parameters")

    @property
    def rate(self) -> float:
        return self.events_per_cycle / self.cycle_period


@dataclass(frozen=True)
class CoherenceTrace:
    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if self.points and abs(self.points[0][1] - 1.0) > 1e-6:
            raise ValueError("coherence at N=0 must be 1")

    def as_array(self) -> np.ndarray:
        return np.array(self.points)

    def to_csv(self) -> str:
        lines = ["cycles,coherence"]
        lines += [f"{n},{c:.12g}" for n, c in self.points]
        return "\n".join(lines) + "\n"


def coherence_under_noise(
    register: SpinRegister,
    encoded: str,
    channel: NoiseChannel,
    cycles: int,
    trajectories: int,
    seed,
    intra_pair_coupling: float = 0.0,
) -> CoherenceTrace:
    """Monte Carlo pair coherence 2 |<ud| rho |du>| after N pulse cycles.

    The pair starts in (|ud> + |du>)/sqrt(2) with the electron in |0>.
    Every `cycle_period` an ideal electron pi pulse fires; noise events
    arrive as a Poisson stream at the channel rate.  Per-trajectory
    random streams are split from `seed`, so results do not depend on
    evaluation order.
    """
    if encoded not in ("DFS", "DPS"):
        raise ValueError("encoded must be 'DFS' or 'DPS'")
    p, q = register.require_pair()
    n = register.n_nuclei
    dim_n = 2**n
    sim = SequenceSimulator(register, intra_pair_coupling=intra_pair_coupling)
    h = sim.full_hamiltonian()
    vals, vecs = np.linalg.eigh(h)
    vecs_dag = vecs.conj().T

    # <up_p down_q| rho |down_p up_q> index pairs, traced over electron
    # and bath configurations
    rows, cols = [], []
    flip = (1 << (n - p)) | (1 << (n - q))
    for e in (0, 1):
        off = e * dim_n
        for b in range(dim_n):
            if (b >> (n - p)) & 1 == 0 and (b >> (n - q)) & 1 == 1:
                rows.append(off + b)
                cols.append(off + (b ^ flip))
    rows = np.array(rows)
    cols = np.array(cols)

    pattern = ["d"] * n
    pattern[p - 1] = "u"
    ket_ud = basis_ket(register, 0, "".join(pattern))
    pattern[p - 1], pattern[q - 1] = "d", "u"
    ket_du = basis_ket(register, 0, "".join(pattern))
    psi0 = (ket_ud + ket_du) / np.sqrt(2.0)

    sigx = np.kron(_SX, np.eye(dim_n))

    # per-trajectory event streams, drawn from independent split seeds so
    # results do not depend on evaluation order or batching
    t_cycle = channel.cycle_period
    t_total = cycles * t_cycle
    seeds = np.random.SeedSequence(seed).spawn(trajectories)
    ev_times, ev_proj, ev_rand = [], [], []
    for child in seeds:
        rng = np.random.default_rng(child)
        times = np.empty(0)
        if channel.rate > 0:
            expected = channel.rate * t_total
            block = max(16, int(expected + 6 * np.sqrt(expected) + 16))
            gaps = rng.exponential(1.0 / channel.rate, size=block)
            times = np.cumsum(gaps)
            while times.size and times[-1] < t_total:
                gaps = rng.exponential(1.0 / channel.rate, size=block)
                times = np.concatenate([times, times[-1] + np.cumsum(gaps)])
            times = times[times < t_total]
        ev_times.append(times)
        ev_proj.append(rng.random(times.size))
        ev_rand.append(rng.random(times.size))

    n_traj = trajectories
    k_max = max((t.size for t in ev_times), default=0) + 1
    times_pad = np.full((n_traj, k_max), np.inf)
    proj_pad = np.zeros((n_traj, k_max))
    rand_pad = np.zeros((n_traj, k_max))
    for k in range(n_traj):
        m = ev_times[k].size
        times_pad[k, :m] = ev_times[k]
        proj_pad[k, :m] = ev_proj[k]
        rand_pad[k, :m] = ev_rand[k]
    traj_idx = np.arange(n_traj)

    vals_col = vals[:, None]

    def evolve_batch(psis, dts):
        # psis: (dim, T) in the computational basis; dts: (T,)
        phases = np.exp(-1j * vals_col * dts[None, :])
        return vecs @ (phases * (vecs_dag @ psis))

    psis = np.tile(psi0[:, None], (1, n_traj)).astype(complex)
    totals = np.zeros(cycles + 1, dtype=complex)

    def record(cyc):
        coh = np.sum(psis[rows, :] * np.conj(psis[cols, :]), axis=0)
        totals[cyc] = np.mean(coh)

    record(0)
    ptr = np.zeros(n_traj, dtype=int)
    t_now = np.zeros(n_traj)
    for cyc in range(1, cycles + 1):
        t_end = cyc * t_cycle
        while True:
            next_t = times_pad[traj_idx, ptr]
            active = next_t < t_end
            if not np.any(active):
                break
            dts = np.where(active, next_t - t_now, 0.0)
            psis = evolve_batch(psis, dts)
            t_now = np.where(active, next_t, t_now)
            if channel.kind == "electron_flip":
                psis[:, active] = sigx @ psis[:, active]
            else:
                p0 = np.sum(np.abs(psis[:dim_n, :]) ** 2, axis=0)
                u_proj = proj_pad[traj_idx, ptr]
                u_rand = rand_pad[traj_idx, ptr]
                keep0 = active & (u_proj < p0)
                keep1 = active & ~(u_proj < p0)
                psis[dim_n:, keep0] = 0.0
                psis[:dim_n, keep1] = 0.0
                norms = np.linalg.norm(psis[:, active], axis=0)
                psis[:, active] /= norms[None, :]
                flip_mask = active & (u_rand < 0.5)
                if np.any(flip_mask):
                    psis[:, flip_mask] = sigx @ psis[:, flip_mask]
            ptr = ptr + active.astype(int)
        psis = evolve_batch(psis, t_end - t_now)
        t_now = np.full(n_traj, t_end)
        psis = sigx @ psis  # scheduled pi pulse each cycle
        record(cyc)
    points = tuple((n_cyc, float(2.0 * np.abs(c))) for n_cyc, c in enumerate(totals))
    return CoherenceTrace(points)
