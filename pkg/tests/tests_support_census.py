"""Shared brute-force census oracle used by the unit and acceptance tests."""

import numpy as np

from larmor.census import CensusConfig, DEGENERACY_RTOL, classify_pairs
from larmor.constants import khz_to_rad
from larmor.lattice import (
    LatticeSite,
    NuclearBathSample,
    generate_sites,
    hyperfine_vector,
    pair_coupling,
)
from larmor.protocols import min_angle


def make_sample(positions):
    nuclei = []
    for pos in positions:
        arr = np.array(pos, dtype=float)
        nuclei.append((LatticeSite(tuple(arr)), hyperfine_vector(arr)))
    n = len(nuclei)
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = pair_coupling(positions[i], positions[j])
    return NuclearBathSample(tuple(nuclei), mat)


def brute_force_pairs(sample, config, delta_min, a_perp_min):
    """All-pairs filter oracle with union-find degeneracy clusters."""
    n = len(sample)
    a_par = np.array([hf.a_par for _, hf in sample.nuclei])
    a_perp = np.array([hf.a_perp for _, hf in sample.nuclei])
    azim = np.array([hf.azimuth for _, hf in sample.nuclei])
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            same_par = abs(a_par[i] - a_par[j]) <= DEGENERACY_RTOL * max(
                abs(a_par[i]), abs(a_par[j]), 1e-30
            )
            same_perp = abs(a_perp[i] - a_perp[j]) <= DEGENERACY_RTOL * max(
                a_perp[i], a_perp[j], 1e-30
            )
            if same_par and same_perp:
                parent[find(i)] = find(j)
    clusters = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    out = []
    for members in clusters.values():
        if len(members) != 2:
            continue
        i, j = sorted(members)
        others = [k for k in range(n) if k not in (i, j)]
        if others:
            if min(abs(a_par[k] - a_par[i]) for k in others) < delta_min:
                continue
            worst = max(
                max(sample.pair_couplings[i, k] for k in others),
                max(sample.pair_couplings[j, k] for k in others),
            )
            if worst > config.g_max:
                continue
        if a_perp[i] < a_perp_min:
            continue
        d = abs(azim[i] - azim[j]) % np.pi
        folded = min(d, np.pi - d)
        if config.require_angle_constraint and folded < min_angle(
            config.reps_for_angle
        ) - 1e-12:
            continue
        out.append((i, j))
    return sorted(out)


def oracle_agreement(trials=100, seed=42):
    """Number of disagreements between classify_pairs and the oracle over
    random small lattice samples (<= 12 nuclei)."""
    sites = generate_sites(1.6)
    rng = np.random.default_rng(seed)
    config = CensusConfig(
        samples=1,
        delta_min_grid=(khz_to_rad(1.0),),
        a_perp_min_grid=(khz_to_rad(2.0),),
    )
    dmin, amin = khz_to_rad(1.0), khz_to_rad(2.0)
    mismatches = 0
    done = 0
    while done < trials:
        k = int(rng.integers(2, 13))
        chosen = rng.choice(len(sites), size=k, replace=False)
        positions = [sites[i].as_array() for i in chosen]
        if min(np.linalg.norm(p) for p in positions) < 0.25:
            continue
        done += 1
        sample = make_sample(positions)
        got = sorted(p["indices"] for p in classify_pairs(sample, config, dmin, amin))
        want = brute_force_pairs(sample, config, dmin, amin)
        if got != want:
            mismatches += 1
    return mismatches
