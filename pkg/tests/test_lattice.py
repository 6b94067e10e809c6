import numpy as np
import pytest

from larmor.constants import NV_AXIS, SITE_STEP_NM, khz_to_rad, rad_to_khz
from larmor.errors import CoincidentSites, TooClose
from larmor.lattice import (
    NuclearBathSample,
    generate_sites,
    hyperfine_field_vector,
    hyperfine_vector,
    pair_coupling,
    sample_occupation,
)

PAIR_POSITIONS = [[0.1785, 0.1785, 1.071], [0.1785, 1.071, 0.1785]]
BATH_POSITIONS = [
    [0.26775, 0.44625, 0.98175],
    [-0.357, -0.1785, 0.8925],
    [0.80325, -0.62475, 0.80325],
]
DPS_POSITION = [0.08925, 0.08925, 0.80325]

# reference (A_par, A_perp) in 2pi kHz for the positions above
REFERENCE_VALUES = {
    tuple(PAIR_POSITIONS[0]): (10.2, 22.2),
    tuple(PAIR_POSITIONS[1]): (10.2, 22.2),
    tuple(BATH_POSITIONS[0]): (19.26, 18.11),
    tuple(BATH_POSITIONS[1]): (-18.44, 13.15),
    tuple(BATH_POSITIONS[2]): (-3.89, 10.76),
    tuple(DPS_POSITION): (16.9, 55.4),
}


def brute_force_sites(radius_nm):
    """Triple-loop diamond enumeration in units of a/4."""
    reach = int(np.floor(radius_nm / SITE_STEP_NM)) + 1
    out = []
    for nx in range(-reach, reach + 1):
        for ny in range(-reach, reach + 1):
            for nz in range(-reach, reach + 1):
                total = nx + ny + nz
                even = nx % 2 == 0 and ny % 2 == 0 and nz % 2 == 0 and total % 4 == 0
                odd = nx % 2 != 0 and ny % 2 != 0 and nz % 2 != 0 and total % 4 == 3
                if not (even or odd):
                    continue
                if (nx, ny, nz) in ((0, 0, 0), (1, 1, 1)):
                    continue
                r2 = (nx * nx + ny * ny + nz * nz) * SITE_STEP_NM**2
                if r2 <= radius_nm**2 + 1e-12:
                    out.append((nx, ny, nz))
    return sorted(out)


def test_tiny_radius_is_empty():
    assert generate_sites(0.1) == []


def test_sites_match_bruteforce():
    sites = generate_sites(1.2)
    mine = sorted(
        tuple(int(round(x / SITE_STEP_NM)) for x in s.position) for s in sites
    )
    assert mine == brute_force_sites(1.2)


def test_site_count_at_3nm_matches_bruteforce():
    assert len(generate_sites(3.0)) == len(brute_force_sites(3.0))


def test_site_coordinates_on_grid():
    for site in generate_sites(1.5):
        for x in site.position:
            assert abs(x / SITE_STEP_NM - round(x / SITE_STEP_NM)) < 1e-12


def test_reference_hyperfine_values():
    for pos, (apar_ref, aperp_ref) in REFERENCE_VALUES.items():
        hf = hyperfine_vector(np.array(pos))
        assert abs(rad_to_khz(hf.a_par) - apar_ref) <= 0.02 * abs(apar_ref)
        assert abs(rad_to_khz(hf.a_perp) - aperp_ref) <= 0.02 * abs(aperp_ref)


def test_pair_sites_identical():
    a = hyperfine_vector(np.array(PAIR_POSITIONS[0]))
    b = hyperfine_vector(np.array(PAIR_POSITIONS[1]))
    assert abs(a.a_par - b.a_par) <= 1e-9 * abs(a.a_par)
    assert abs(a.a_perp - b.a_perp) <= 1e-9 * a.a_perp


def test_vector_reconstruction():
    for pos in REFERENCE_VALUES:
        field = hyperfine_field_vector(np.array(pos))
        hf = hyperfine_vector(np.array(pos))
        rebuilt = hf.as_vector()
        assert np.max(np.abs(rebuilt - field)) < 1e-12 * np.linalg.norm(field)
        norm2 = hf.a_par**2 + hf.a_perp**2
        assert abs(norm2 - np.dot(field, field)) < 1e-12 * np.dot(field, field)


def test_azimuth_equivariance():
    pos = np.array(BATH_POSITIONS[0])
    base = hyperfine_vector(pos)
    for chi in (0.3, 1.9, 4.4):
        c, s = np.cos(chi), np.sin(chi)
        # Rodrigues rotation about the defect axis
        k = NV_AXIS
        rot = pos * c + np.cross(k, pos) * s + k * np.dot(k, pos) * (1 - c)
        hf = hyperfine_vector(rot)
        assert abs(hf.a_par - base.a_par) < 1e-12 * abs(base.a_par)
        assert abs(hf.a_perp - base.a_perp) < 1e-12 * base.a_perp
        dphi = (hf.azimuth - base.azimuth - chi) % (2 * np.pi)
        assert min(dphi, 2 * np.pi - dphi) < 1e-9


def test_symmetry_census_within_1p5nm():
    """Sites related by an axis-fixing lattice symmetry share (A_par, A_perp)."""
    sites = generate_sites(1.5)
    coords = {
        tuple(int(round(x / SITE_STEP_NM)) for x in s.position): s for s in sites
    }
    symmetry_ops = [
        lambda v: (v[1], v[2], v[0]),
        lambda v: (v[2], v[0], v[1]),
        lambda v: (v[1], v[0], v[2]),
        lambda v: (v[0], v[2], v[1]),
        lambda v: (v[2], v[1], v[0]),
    ]
    checked = 0
    for key, site in coords.items():
        hf = hyperfine_vector(site.as_array(), contact_radius_nm=0.12)
        for op in symmetry_ops:
            partner = op(key)
            if partner in coords and partner != key:
                hf2 = hyperfine_vector(coords[partner].as_array(), contact_radius_nm=0.12)
                scale = max(abs(hf.a_par), hf.a_perp)
                assert abs(hf.a_par - hf2.a_par) <= 1e-9 * scale
                assert abs(hf.a_perp - hf2.a_perp) <= 1e-9 * scale
                checked += 1
    assert checked > 100


def test_too_close_guard():
    with pytest.raises(TooClose):
        hyperfine_vector(np.array([0.08925, 0.08925, 0.08925]))
    # configurable threshold
    hyperfine_vector(np.array([0.08925, 0.08925, 0.08925]), contact_radius_nm=0.1)


def test_pair_coupling_scaling_and_magic_angle():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([0.5, 0.3, 0.2])
    g1 = pair_coupling(a, b)
    g2 = pair_coupling(a, 2 * b)
    assert abs(g2 - g1 / 8) < 1e-12 * g1
    # separation at the magic angle from the defect axis
    perp = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    direction = np.sqrt(1 / 3) * NV_AXIS + np.sqrt(2 / 3) * perp
    assert pair_coupling(a, direction) < 1e-10
    with pytest.raises(CoincidentSites):
        pair_coupling(a, a)


def test_reference_pair_coupling_below_bound():
    g = pair_coupling(np.array(PAIR_POSITIONS[0]), np.array(PAIR_POSITIONS[1]))
    assert g <= khz_to_rad(0.05)  # 2pi x 50 Hz census bound


def test_sample_occupation_determinism():
    sites = generate_sites(1.5)
    s1 = sample_occupation(sites, 0.05, seed=42)
    s2 = sample_occupation(sites, 0.05, seed=42)
    assert len(s1) == len(s2)
    for (site1, hf1), (site2, hf2) in zip(s1.nuclei, s2.nuclei):
        assert site1.position == site2.position
        assert hf1 == hf2
    assert np.array_equal(s1.pair_couplings, s2.pair_couplings)


def test_sample_occupation_binomial_statistics():
    sites = generate_sites(2.4)[:10_000]
    counts = [len(sample_occupation(sites, 0.011, seed=k)) for k in range(100)]
    mean = np.mean(counts)
    sigma_of_mean = np.sqrt(10_000 * 0.011 * 0.989 / 100)
    assert abs(mean - 110.0) <= 5 * sigma_of_mean


def test_sample_occupation_zero_limit():
    sites = generate_sites(1.2)
    assert len(sample_occupation(sites, 1e-9, seed=1)) == 0


def test_bath_serialization_roundtrip():
    sites = generate_sites(1.5)
    sample = sample_occupation(sites, 0.08, seed=7)
    text = sample.to_text()
    back = NuclearBathSample.from_text(text)
    assert len(back) == len(sample)
    for (s1, h1), (s2, h2) in zip(sample.nuclei, back.nuclei):
        assert np.allclose(s1.as_array(), s2.as_array(), atol=1e-6)
        assert abs(h1.a_par - h2.a_par) < 1e-6 * max(abs(h1.a_par), 1.0)
        assert abs(h1.azimuth - h2.azimuth) < 1e-8
