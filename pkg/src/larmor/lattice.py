"""Diamond lattice sites, random 13C occupation and dipolar couplings.

Positions are nm 3-vectors relative to the defect.  The point-dipole
model is used throughout; sites inside a configurable radius (where
contact terms would matter) are rejected.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .constants import (
    DIPOLE_PREFACTOR,
    GAMMA_C13,
    HBAR,
    MU0,
    NV_AXIS,
    NV_XPRIME,
    NV_YPRIME,
    SITE_STEP_NM,
    khz_to_rad,
    rad_to_khz,
)
from .errors import CoincidentSites, TooClose

__all__ = [
    "LatticeSite",
    "HyperfineVector",
    "NuclearBathSample",
    "generate_sites",
    "sample_occupation",
    "hyperfine_vector",
    "pair_coupling",
]

# Vacancy at the origin; the substitutional nitrogen occupies the nearest
# site along [1,1,1].  Both are excluded from 13C occupation.
_NV_SITES_STEPS = np.array([[0, 0, 0], [1, 1, 1]])

CONTACT_RADIUS_NM = 0.25


@dataclass(frozen=True)
class LatticeSite:
    """A diamond lattice site, nm coordinates relative to the defect."""

    position: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))

    def as_array(self) -> np.ndarray:
        return np.array(self.position)


@dataclass(frozen=True)
class HyperfineVector:
    """Hyperfine field split into parallel/perpendicular parts (rad/s).

    a_perp is non-negative by construction; direction information lives in
    the azimuth (radians in [0, 2pi), measured in the defect frame).
    """

    a_par: float
    a_perp: float
    azimuth: float = 0.0

    def __post_init__(self):
        if self.a_perp < 0:
            raise ValueError("a_perp must be >= 0")
        object.__setattr__(self, "azimuth", float(self.azimuth) % (2 * np.pi))

    @classmethod
    def from_khz(cls, a_par_khz: float, a_perp_khz: float, azimuth: float = 0.0):
        return cls(float(khz_to_rad(a_par_khz)), float(khz_to_rad(a_perp_khz)), azimuth)

    def as_vector(self) -> np.ndarray:
        """Reassemble the 3-vector in the defect frame (rad/s)."""
        transverse = np.cos(self.azimuth) * NV_XPRIME + np.sin(self.azimuth) * NV_YPRIME
        return self.a_par * NV_AXIS + self.a_perp * transverse


@dataclass(frozen=True)
class NuclearBathSample:
    """Occupied sites with hyperfine vectors and mutual couplings."""

    nuclei: tuple[tuple[LatticeSite, HyperfineVector], ...]
    pair_couplings: np.ndarray  # symmetric, zero diagonal, rad/s

    def __post_init__(self):
        mat = np.asarray(self.pair_couplings, dtype=float)
        n = len(self.nuclei)
        if mat.shape != (n, n):
            raise ValueError("pair_couplings shape mismatch")
        if n and (np.max(np.abs(mat - mat.T)) > 0 or np.max(np.abs(np.diag(mat))) > 0):
            raise ValueError("pair_couplings must be symmetric with zero diagonal")
        mat = mat.copy()
        mat.flags.writeable = False
        object.__setattr__(self, "pair_couplings", mat)
        object.__setattr__(self, "nuclei", tuple(self.nuclei))

    def __len__(self) -> int:
        return len(self.nuclei)

    def to_text(self) -> str:
        """One nucleus per line: x y z [nm], A_par A_perp [2pi kHz], azimuth [rad]."""
        buf = io.StringIO()
        buf.write("# x_nm y_nm z_nm a_par_2pikHz a_perp_2pikHz azimuth_rad\n")
        for site, hf in self.nuclei:
            x, y, z = site.position
            buf.write(
                f"{x:.6f} {y:.6f} {z:.6f} "
                f"{rad_to_khz(hf.a_par):.9f} {rad_to_khz(hf.a_perp):.9f} "
                f"{hf.azimuth:.9f}\n"
            )
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "NuclearBathSample":
        nuclei = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, y, z, apar, aperp, az = (float(tok) for tok in line.split())
            nuclei.append(
                (
                    LatticeSite((x, y, z)),
                    HyperfineVector(
                        float(khz_to_rad(apar)), float(khz_to_rad(aperp)), az
                    ),
                )
            )
        positions = np.array([s.as_array() for s, _ in nuclei]).reshape(-1, 3)
        return cls(tuple(nuclei), _coupling_matrix(positions))


def site_steps_in_radius(radius_nm: float) -> np.ndarray:
    """Integer lattice coordinates (units of a/4) of all diamond sites
    within radius, NV sites excluded."""
    reach = int(np.floor(radius_nm / SITE_STEP_NM)) + 1
    axis = np.arange(-reach, reach + 1)
    nx, ny, nz = np.meshgrid(axis, axis, axis, indexing="ij")
    steps = np.stack([nx.ravel(), ny.ravel(), nz.ravel()], axis=1)
    total = steps.sum(axis=1)
    even = (steps % 2 == 0).all(axis=1) & (total % 4 == 0)
    odd = (steps % 2 != 0).all(axis=1) & (total % 4 == 3)
    steps = steps[even | odd]
    r2 = (steps.astype(float) ** 2).sum(axis=1) * SITE_STEP_NM**2
    steps = steps[r2 <= radius_nm**2 + 1e-12]
    keep = ~np.all(steps[:, None, :] == _NV_SITES_STEPS[None, :, :], axis=2).any(axis=1)
    steps = steps[keep]
    order = np.lexsort((steps[:, 2], steps[:, 1], steps[:, 0]))
    return steps[order]


def generate_sites(radius_nm: float) -> list[LatticeSite]:
    """All diamond-cubic sites within radius of the defect (nm)."""
    if radius_nm <= 0:
        raise ValueError("radius must be positive")
    steps = site_steps_in_radius(radius_nm)
    return [LatticeSite(tuple(row * SITE_STEP_NM)) for row in steps]


def hyperfine_field_vector(position_nm, nv_axis=NV_AXIS) -> np.ndarray:
    """Point-dipole hyperfine field 3-vector (rad/s) at a nuclear site."""
    pos = np.asarray(position_nm, dtype=float)
    r_nm = np.linalg.norm(pos)
    if r_nm <= 0.1:
        raise TooClose(f"|position| = {r_nm:.3f} nm inside 0.1 nm")
    r_m = r_nm * 1e-9
    rhat = pos / r_nm
    zhat = np.asarray(nv_axis, dtype=float)
    zhat = zhat / np.linalg.norm(zhat)
    return DIPOLE_PREFACTOR / r_m**3 * (3.0 * np.dot(zhat, rhat) * rhat - zhat)


def hyperfine_vector(
    position_nm,
    nv_axis=NV_AXIS,
    contact_radius_nm: float = CONTACT_RADIUS_NM,
) -> HyperfineVector:
    """Decompose the point-dipole field into (A_par, A_perp, azimuth).

    Raises
    ------
    TooClose
        Inside `contact_radius_nm`, where the point-dipole model breaks
        down (contact terms are out of scope for this model).
    """
    pos = np.asarray(position_nm, dtype=float)
    r_nm = np.linalg.norm(pos)
    if r_nm < contact_radius_nm:
        raise TooClose(
            f"|position| = {r_nm:.3f} nm inside contact radius {contact_radius_nm} nm"
        )
    field = hyperfine_field_vector(pos, nv_axis)
    a_par = float(np.dot(field, NV_AXIS))
    transverse = field - a_par * NV_AXIS
    a_perp = float(np.linalg.norm(transverse))
    azimuth = float(
        np.arctan2(np.dot(transverse, NV_YPRIME), np.dot(transverse, NV_XPRIME))
    ) % (2 * np.pi)
    return HyperfineVector(a_par, a_perp, azimuth)


_NN_COUPLING = (MU0 / (4 * np.pi)) * GAMMA_C13**2 * HBAR  # rad/s * m^3


def pair_coupling(pos_a_nm, pos_b_nm) -> float:
    """Magnitude of the secular nuclear-nuclear dipolar coupling (rad/s).

    (mu0/4pi) gamma_n^2 hbar r^-3 |1 - 3 cos^2(theta_z)| with theta_z
    measured from the defect axis.
    """
    a = np.asarray(pos_a_nm, dtype=float)
    b = np.asarray(pos_b_nm, dtype=float)
    sep = b - a
    r_nm = np.linalg.norm(sep)
    if r_nm == 0:
        raise CoincidentSites("pair_coupling needs two distinct positions")
    cos_t = np.dot(sep / r_nm, NV_AXIS)
    return float(_NN_COUPLING / (r_nm * 1e-9) ** 3 * abs(1.0 - 3.0 * cos_t**2))


def _coupling_matrix(positions_nm: np.ndarray) -> np.ndarray:
    n = positions_nm.shape[0]
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = pair_coupling(positions_nm[i], positions_nm[j])
    return mat


def sample_occupation(
    sites: list[LatticeSite],
    abundance: float,
    seed,
    contact_radius_nm: float = CONTACT_RADIUS_NM,
) -> NuclearBathSample:
    """Occupy each site independently with probability `abundance`.

    `seed` may be an int or a numpy SeedSequence/Generator; identical
    seeds give bit-identical samples.  Sites inside the contact radius
    are never occupied (outside the point-dipole model).
    """
    if not 0.0 <= abundance < 1.0:
        raise ValueError("abundance must be in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws = rng.random(len(sites))
    chosen = []
    for site, u in zip(sites, draws):
        if u >= abundance:
            continue
        if np.linalg.norm(site.as_array()) < contact_radius_nm:
            continue
        chosen.append(site)
    nuclei = tuple(
        (site, hyperfine_vector(site.as_array(), contact_radius_nm=contact_radius_nm))
        for site in chosen
    )
    positions = np.array([s.as_array() for s in chosen]).reshape(-1, 3)
    return NuclearBathSample(nuclei, _coupling_matrix(positions))
