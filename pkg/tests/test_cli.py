import csv
import json
from pathlib import Path

from larmor.cli import main, run

EXAMPLES = Path(__file__).resolve().parent.parent / "docs" / "examples"


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_hyperfine_reference_values(tmp_path):
    code = run("hyperfine", str(EXAMPLES / "hyperfine.toml"), out=str(tmp_path))
    assert code == 0
    header, rows = read_csv(tmp_path / "hyperfine.csv")
    assert header == ["x_nm", "y_nm", "z_nm", "a_par_2pikHz", "a_perp_2pikHz",
                      "azimuth_rad"]
    assert len(rows) == 5
    apar, aperp = float(rows[0][3]), float(rows[0][4])
    assert abs(apar - 10.2) <= 0.02 * 10.2
    assert abs(aperp - 22.2) <= 0.02 * 22.2
    # the two pair rows agree with each other
    assert abs(float(rows[0][3]) - float(rows[1][3])) < 1e-9 * abs(apar)


def test_census_runs_and_reports(tmp_path):
    cfg = tmp_path / "census.toml"
    cfg.write_text(
        """
[common]
seed = 3
[census]
samples = 150
radius_nm = 2.0
delta_min_2pikHz = [1.0]
a_perp_min_2pikHz = [2.0]
"""
    )
    code = run("census", str(cfg), out=str(tmp_path))
    assert code == 0
    header, rows = read_csv(tmp_path / "census.csv")
    assert header[0] == "delta_min_2pikHz"
    assert len(rows) == 2  # with and without the angle constraint
    for row in rows:
        assert 0.0 <= float(row[3]) <= 1.0


def test_artifacts_byte_identical(tmp_path):
    cfg = tmp_path / "census.toml"
    cfg.write_text(
        """
[census]
samples = 100
radius_nm = 1.8
delta_min_2pikHz = [1.0]
a_perp_min_2pikHz = [2.0]
"""
    )
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("census", str(cfg), seed=9, out=str(out1)) == 0
    assert run("census", str(cfg), seed=9, out=str(out2)) == 0
    assert (out1 / "census.csv").read_bytes() == (out2 / "census.csv").read_bytes()


def test_protocol_roundtrip_json(tmp_path):
    code = run("protocol-sim", str(EXAMPLES / "protocol-sim.toml"), out=str(tmp_path))
    assert code == 0
    payload = json.loads((tmp_path / "protocol_sim.json").read_text())
    assert payload["protocol"] == "roundtrip"
    assert payload["fidelity"] > 1 - 1e-9
    assert payload["storage_outcome"] == 0


def test_graph_protocol(tmp_path):
    cfg = tmp_path / "graph.toml"
    cfg.write_text(
        """
[common]
seed = 5
[protocol-sim]
protocol = "graph"
nodes = 4
edges = [[0, 1], [1, 2], [2, 3]]
"""
    )
    assert run("protocol-sim", str(cfg), out=str(tmp_path)) == 0
    payload = json.loads((tmp_path / "protocol_sim.json").read_text())
    assert payload["fidelity"] > 1 - 1e-9
    assert len(payload["outcomes"]) == 3


def test_robustness_scan_grid_shape(tmp_path):
    # compact fast configuration: low field, first-harmonic addressing
    cfg = tmp_path / "scan.toml"
    cfg.write_text(
        """
[register]
explicit = [
  {a_par_2pikHz = 10.2, a_perp_2pikHz = 22.2, azimuth_rad = 0.3},
  {a_par_2pikHz = 10.2, a_perp_2pikHz = 22.2, azimuth_rad = 2.4},
]
b_field_T = 0.02
weak_field_factor = 1.0
pair = [1, 2]

[sequence]
k_int = 1
n_int_pulses = 80
rf_rabi_2pikHz = 8.0
protect_pulses = 40

[robustness-scan]
mw_rabi_2pikHz = 20000.0
amplitude_frac_grid = [-0.01, 0.0, 0.01]
detuning_frac_grid = [-0.005, 0.0, 0.005]
"""
    )
    assert run("robustness-scan", str(cfg), out=str(tmp_path)) == 0
    header, rows = read_csv(tmp_path / "robustness.csv")
    assert header == ["amplitude_frac", "detuning_2pikHz", "fidelity"]
    assert len(rows) == 9
    for row in rows:
        assert 0.0 <= float(row[2]) <= 1.0 + 1e-9


def test_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(
        """
[census]
samples = 10
radius_nm = 1.5
delta_min_2pikHz = [1.0]
a_perp_min_2pikHz = [2.0]
banana = 3
"""
    )
    code = run("census", str(cfg), out=str(tmp_path))
    assert code == 2


def test_unknown_key_message_names_key_and_line(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[census]\nsamples = 10\nbanana = 3\n")
    code = run("census", str(cfg), out=str(tmp_path))
    captured = capsys.readouterr()
    assert code == 2
    assert "banana" in captured.err
    assert "line 3" in captured.err


def test_missing_required_key(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[hyperfine]\n")
    code = run("hyperfine", str(cfg), out=str(tmp_path))
    assert code == 2


def test_module_error_surfaces(tmp_path, capsys):
    cfg = tmp_path / "weak.toml"
    cfg.write_text(
        """
[register]
explicit = [ {a_par_2pikHz = 0.0, a_perp_2pikHz = 22.2} ]
b_field_T = 0.0001
pair = [1, 1]

[gate-sim]
max_reps = 1
"""
    )
    code = run("gate-sim", str(cfg), out=str(tmp_path))
    captured = capsys.readouterr()
    assert code == 1
    assert "WeakFieldViolation" in captured.err


def test_main_entrypoint(tmp_path):
    code = main([
        "hyperfine", "--config", str(EXAMPLES / "hyperfine.toml"),
        "--out", str(tmp_path),
    ])
    assert code == 0


def test_gate_sim_fast_register(tmp_path):
    cfg = tmp_path / "gate.toml"
    cfg.write_text(
        """
[register]
explicit = [
  {a_par_2pikHz = 10.2, a_perp_2pikHz = 22.2, azimuth_rad = 0.3},
  {a_par_2pikHz = 10.2, a_perp_2pikHz = 22.2, azimuth_rad = 2.4},
]
b_field_T = 0.02
weak_field_factor = 1.0
pair = [1, 2]

[sequence]
k_int = 1
n_int_pulses = 80

[gate-sim]
max_reps = 1
"""
    )
    assert run("gate-sim", str(cfg), out=str(tmp_path)) == 0
    payload = json.loads((tmp_path / "gate_sim.json").read_text())
    assert 0.9 <= payload["fidelity"] <= 1.0 + 1e-9
    assert payload["pulse_count"] > 100


def test_dee_spectrum_subcommand(tmp_path):
    cfg = tmp_path / "dee.toml"
    cfg.write_text(
        """
[register]
positions_nm = [[0.1785, 0.1785, 1.071], [0.1785, 1.071, 0.1785]]
b_field_T = 0.5
pair = [1, 2]

[dee-spectrum]
k_dd = 5
n_int_pulses = 200
f_target = 1.0
t_delay_us = 150.0
center_2pikHz = 5357.77
span_2pikHz = 8.0
points = 9
"""
    )
    assert run("dee-spectrum", str(cfg), out=str(tmp_path)) == 0
    header, rows = read_csv(tmp_path / "dee_spectrum.csv")
    assert header == ["probe_2pikHz", "signal"]
    assert len(rows) == 9
    sig = [float(r[1]) for r in rows]
    assert min(sig) < 0.9  # a dip is present near the pair frequency


def test_polar_scan_subcommand(tmp_path):
    cfg = tmp_path / "polar.toml"
    cfg.write_text(
        """
[register]
positions_nm = [[0.1785, 0.1785, 1.071], [0.1785, 1.071, 0.1785]]
b_field_T = 0.02
weak_field_factor = 1.0
pair = [1, 2]

[polar-scan]
f1 = 0.18
points = 24
n_composites = 80
"""
    )
    assert run("polar-scan", str(cfg), out=str(tmp_path)) == 0
    header, rows = read_csv(tmp_path / "polar_scan.csv")
    assert header == ["phi_rf_rad", "signal"]
    assert len(rows) == 24


def test_register_from_bath_file(tmp_path):
    import numpy as np

    from larmor.lattice import (
        LatticeSite,
        NuclearBathSample,
        hyperfine_vector,
        pair_coupling,
    )

    positions = [
        np.array([0.1785, 0.1785, 1.071]),
        np.array([0.1785, 1.071, 0.1785]),
        np.array([0.26775, 0.44625, 0.98175]),
    ]
    nuclei = tuple(
        (LatticeSite(tuple(p)), hyperfine_vector(p)) for p in positions
    )
    mat = np.zeros((3, 3))
    for i in range(3):
        for j in range(i + 1, 3):
            mat[i, j] = mat[j, i] = pair_coupling(positions[i], positions[j])
    sample = NuclearBathSample(nuclei, mat)
    bath = tmp_path / "bath.txt"
    bath.write_text(sample.to_text())
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        f"""
[register]
bath_file = "{bath}"
b_field_T = 0.4
pair = [1, 2]

[protocol-sim]
protocol = "storage"
mode = "ideal"
c0 = "1.0"
c1 = "0.0"
postselect = 0
"""
    )
    assert run("protocol-sim", str(cfg), out=str(tmp_path)) == 0
    payload = json.loads((tmp_path / "protocol_sim.json").read_text())
    assert payload["fidelity"] > 1 - 1e-9
