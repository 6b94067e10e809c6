"""Monte Carlo census of usable Larmor pairs in randomly occupied lattices.

A sample qualifies at a grid point (delta_min, a_perp_min) if it holds at
least one pair of nuclei with identical hyperfine components (exactly two
members in the degeneracy class), parallel field separated from every
other nucleus by at least delta_min, transverse coupling at least
a_perp_min, couplings to all other nuclei at most g_max, and (optionally)
an azimuth gap compatible with the selective-gate constraint.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .constants import NV_AXIS, NV_XPRIME, NV_YPRIME, DIPOLE_PREFACTOR, khz_to_rad, rad_to_khz
from .lattice import (
    CONTACT_RADIUS_NM,
    NuclearBathSample,
    SITE_STEP_NM,
    site_steps_in_radius,
)
from .protocols import min_angle

__all__ = ["CensusConfig", "CensusReport", "classify_pairs", "run_census"]

_NN_COUPLING_NM = None  # computed lazily from lattice constants

DEGENERACY_RTOL = 1e-6


@dataclass(frozen=True)
class CensusConfig:
    samples: int = 10_000
    abundance: float = 0.011
    radius: float = 3.0  # nm
    delta_min_grid: tuple[float, ...] = tuple(khz_to_rad(x) for x in (1.0, 2.0, 5.0))
    a_perp_min_grid: tuple[float, ...] = tuple(khz_to_rad(x) for x in (5.0, 10.0, 20.0))
    g_max: float = khz_to_rad(0.05)  # 2pi x 50 Hz
    require_angle_constraint: bool = False
    reps_for_angle: int = 1

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.delta_min_grid or not self.a_perp_min_grid:
            raise ValueError("grids must be nonempty")
        if list(self.delta_min_grid) != sorted(self.delta_min_grid):
            raise ValueError("delta_min_grid must be sorted")
        if list(self.a_perp_min_grid) != sorted(self.a_perp_min_grid):
            raise ValueError("a_perp_min_grid must be sorted")


@dataclass(frozen=True)
class CensusReport:
    config: CensusConfig
    # rows keyed (delta_min, a_perp_min, angle_constrained) ->
    # (probability, ci_halfwidth)
    cells: dict

    def probability(self, delta_min, a_perp_min, angle=False):
        return self.cells[(delta_min, a_perp_min, angle)][0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["delta_min_2pikHz", "a_perp_min_2pikHz", "angle_constrained",
             "probability", "ci95"]
        )
        for (dmin, amin, angle), (p, ci) in sorted(self.cells.items()):
            writer.writerow(
                [f"{rad_to_khz(dmin):.9g}", f"{rad_to_khz(amin):.9g}",
                 int(angle), f"{p:.9g}", f"{ci:.9g}"]
            )
        return buf.getvalue()


def _clopper_pearson(k: int, n: int, conf: float = 0.95):
    """Exact binomial interval; documented choice for the census CIs."""
    from scipy.stats import beta

    alpha = 1.0 - conf
    lo = 0.0 if k == 0 else float(beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def _degeneracy_classes(a_par: np.ndarray, a_perp: np.ndarray) -> list[list[int]]:
    """Group nuclei by (A_par, A_perp) within the relative tolerance.

    Lattice symmetry makes degeneracies exact, so a sort-and-sweep with
    run-start comparison is unambiguous (the tolerance only absorbs
    floating-point noise).
    """
    n = a_par.size
    order = np.argsort(a_par, kind="stable")
    classes: list[list[int]] = []
    i = 0
    while i < n:
        run = [int(order[i])]
        j = i + 1
        ref = a_par[order[i]]
        while j < n:
            cand = a_par[order[j]]
            if abs(cand - ref) <= DEGENERACY_RTOL * max(abs(cand), abs(ref), 1e-30):
                run.append(int(order[j]))
                j += 1
            else:
                break
        # sub-group the equal-A_par run by A_perp
        run.sort(key=lambda k: a_perp[k])
        k0 = 0
        while k0 < len(run):
            sub = [run[k0]]
            ref_p = a_perp[run[k0]]
            k1 = k0 + 1
            while k1 < len(run):
                cand_p = a_perp[run[k1]]
                if abs(cand_p - ref_p) <= DEGENERACY_RTOL * max(cand_p, ref_p, 1e-30):
                    sub.append(run[k1])
                    k1 += 1
                else:
                    break
            classes.append(sub)
            k0 = k1
        i = j
    return classes


def classify_pairs(
    sample: NuclearBathSample,
    config: CensusConfig,
    delta_min: float | None = None,
    a_perp_min: float | None = None,
):
    """Qualifying Larmor pairs of a bath sample.

    A pair qualifies when its degeneracy class has exactly two members
    (triplets and larger clusters never count), the parallel field gap
    to every other nucleus is at least delta_min, A_perp is at least
    a_perp_min, couplings of both members to all other nuclei stay at or
    below g_max, and, when the config requires it, the folded azimuth gap
    clears min_angle(reps).  Thresholds default to the smallest grid
    entries.  Each returned dict carries the pair's maximal thresholds so
    callers can re-evaluate any stricter grid point monotonically.
    """
    if delta_min is None:
        delta_min = config.delta_min_grid[0]
    if a_perp_min is None:
        a_perp_min = config.a_perp_min_grid[0]
    n = len(sample)
    if n < 2:
        return []
    a_par = np.array([hf.a_par for _, hf in sample.nuclei])
    a_perp = np.array([hf.a_perp for _, hf in sample.nuclei])
    azim = np.array([hf.azimuth for _, hf in sample.nuclei])
    couplings = sample.pair_couplings
    pairs = []
    for cls in _degeneracy_classes(a_par, a_perp):
        if len(cls) != 2:
            continue
        i, j = sorted(cls)
        others = [k for k in range(n) if k not in (i, j)]
        if others:
            gap = float(np.min(np.abs(a_par[others] - a_par[i])))
            worst_g = float(
                max(np.max(couplings[i, others]), np.max(couplings[j, others]))
            )
        else:
            gap = np.inf
            worst_g = 0.0
        if worst_g > config.g_max:
            continue
        d = abs(azim[i] - azim[j]) % np.pi
        folded = min(d, np.pi - d)
        angle_ok = folded >= min_angle(config.reps_for_angle) - 1e-12
        if gap < delta_min or a_perp[i] < a_perp_min:
            continue
        if config.require_angle_constraint and not angle_ok:
            continue
        pairs.append(
            {
                "indices": (i, j),
                "a_par": float(a_par[i]),
                "a_perp": float(a_perp[i]),
                "delta_gap": gap,
                "max_bath_coupling": worst_g,
                "azimuth_gap_folded": folded,
                "angle_ok": angle_ok,
            }
        )
    return pairs


def _precompute_lattice(radius_nm: float):
    """Site positions and hyperfine components, fixed for every sample."""
    steps = site_steps_in_radius(radius_nm)
    pos = steps.astype(float) * SITE_STEP_NM
    r = np.linalg.norm(pos, axis=1)
    usable = r >= CONTACT_RADIUS_NM
    pos = pos[usable]
    r = r[usable]
    rhat = pos / r[:, None]
    cosz = rhat @ NV_AXIS
    pref = DIPOLE_PREFACTOR / (r * 1e-9) ** 3
    field = pref[:, None] * (3.0 * cosz[:, None] * rhat - NV_AXIS[None, :])
    a_par = field @ NV_AXIS
    trans = field - np.outer(a_par, NV_AXIS)
    a_perp = np.linalg.norm(trans, axis=1)
    azim = np.mod(np.arctan2(trans @ NV_YPRIME, trans @ NV_XPRIME), 2 * np.pi)
    return pos, a_par, a_perp, azim


def _sample_qualifiers(pos, a_par, a_perp, azim, occupied_idx, config):
    """Qualifying pairs of one occupancy, on precomputed lattice arrays."""
    from .lattice import pair_coupling

    idx = occupied_idx
    n = idx.size
    if n < 2:
        return []
    ap = a_par[idx]
    aq = a_perp[idx]
    az = azim[idx]
    p = pos[idx]
    out = []
    for cls in _degeneracy_classes(ap, aq):
        if len(cls) != 2:
            continue
        i, j = cls
        others = [k for k in range(n) if k not in (i, j)]
        if others:
            gap = float(np.min(np.abs(ap[others] - ap[i])))
            sep_i = p[others] - p[i]
            sep_j = p[others] - p[j]

            def secular(sep):
                rr = np.linalg.norm(sep, axis=1)
                cos_t = (sep @ NV_AXIS) / rr
                return _nn_coupling() / (rr * 1e-9) ** 3 * np.abs(1 - 3 * cos_t**2)

            worst_g = float(max(np.max(secular(sep_i)), np.max(secular(sep_j))))
        else:
            gap = np.inf
            worst_g = 0.0
        if worst_g > config.g_max:
            continue
        d = abs(az[i] - az[j]) % np.pi
        folded = min(d, np.pi - d)
        out.append(
            (gap, float(aq[i]), folded >= min_angle(config.reps_for_angle) - 1e-12)
        )
    return out


def _nn_coupling():
    from .lattice import _NN_COUPLING

    return _NN_COUPLING


def _census_chunk(args):
    """Qualifier counts for one contiguous block of sample indices.

    Child seeds are re-derived from the root seed by index, so the
    partition into chunks (and hence the worker count) cannot change any
    draw; the merge is an exact integer sum.
    """
    config, seed, start, stop = args
    pos, a_par, a_perp, azim = _precompute_lattice(config.radius)
    n_sites = pos.shape[0]
    root = np.random.SeedSequence(seed)
    children = root.spawn(stop)[start:stop]
    keys = [
        (dmin, amin, angle)
        for dmin in config.delta_min_grid
        for amin in config.a_perp_min_grid
        for angle in (False, True)
    ]
    counts = dict.fromkeys(keys, 0)
    for child in children:
        rng = np.random.default_rng(child)
        occupied = np.nonzero(rng.random(n_sites) < config.abundance)[0]
        quals = _sample_qualifiers(pos, a_par, a_perp, azim, occupied, config)
        if not quals:
            continue
        for dmin in config.delta_min_grid:
            for amin in config.a_perp_min_grid:
                if any(g >= dmin and a >= amin for g, a, _ in quals):
                    counts[(dmin, amin, False)] += 1
                if any(g >= dmin and a >= amin and ok for g, a, ok in quals):
                    counts[(dmin, amin, True)] += 1
    return counts


def run_census(config: CensusConfig, seed, workers: int = 1) -> CensusReport:
    """Fraction of random occupancies holding at least one qualifying
    pair, per (delta_min, a_perp_min) grid point, with and without the
    azimuth constraint.  One occupancy sample is reused across all grid
    points (common random numbers); exact binomial 95% intervals.

    `workers` > 1 fans the samples over processes; per-sample random
    streams are split by index from the root seed, so reports are
    bit-identical for any worker count.
    """
    edges = np.linspace(0, config.samples, max(1, int(workers)) + 1, dtype=int)
    chunks = [
        (config, seed, int(a), int(b)) for a, b in zip(edges, edges[1:]) if b > a
    ]
    if len(chunks) <= 1:
        results = [_census_chunk(chunks[0])] if chunks else []
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(_census_chunk, chunks))
    counts = {
        (dmin, amin, angle): 0
        for dmin in config.delta_min_grid
        for amin in config.a_perp_min_grid
        for angle in (False, True)
    }
    for partial in results:
        for key, value in partial.items():
            counts[key] += value
    cells = {}
    for key, k in counts.items():
        p = k / config.samples
        lo, hi = _clopper_pearson(k, config.samples)
        cells[key] = (p, (hi - lo) / 2.0)
    return CensusReport(config=config, cells=cells)
