"""Command-line harness: config ingestion, subcommand dispatch, and
deterministic artifact emission.

One TOML config per run; flags only override the seed and output
directory.  Physical quantities in config files carry explicit unit
suffixes (_2pikHz, _nm, _T, _us, _rad); everything is converted to
internal units (rad/s, s, m) at this boundary and nowhere else.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import tomli

from .census import CensusConfig, run_census
from .constants import khz_to_rad, rad_to_khz, us_to_s
from .errors import ConfigError, LarmorError
from .lattice import HyperfineVector, hyperfine_vector
from .protocols import (
    DeeParams,
    GateSequenceParams,
    PolarScanParams,
    dee_spectrum,
    graph_state_build,
    plan_selective_pi,
    polar_position_scan,
    r_pi_time_domain,
    retrieval_protocol,
    storage_protocol,
)
from .sequences import PulseErrorModel
from .spincore import build_register

SUBCOMMANDS = (
    "hyperfine",
    "census",
    "gate-sim",
    "protocol-sim",
    "robustness-scan",
    "dee-spectrum",
    "polar-scan",
)

_SCHEMAS = {
    "common": {"seed", "out_dir"},
    "hyperfine": {"positions_nm"},
    "register": {
        "positions_nm",
        "explicit",
        "bath_file",
        "b_field_T",
        "ms_branch",
        "pair",
        "weak_field_factor",
    },
    "explicit": {"a_par_2pikHz", "a_perp_2pikHz", "azimuth_rad"},
    "census": {
        "samples",
        "abundance",
        "radius_nm",
        "delta_min_2pikHz",
        "a_perp_min_2pikHz",
        "g_max_2pikHz",
        "require_angle_constraint",
        "reps_for_angle",
    },
    "sequence": {
        "k_int",
        "n_int_pulses",
        "rf_rabi_2pikHz",
        "protect_pulses",
        "rf_substeps",
        "k_storage",
        "n_storage_pulses",
    },
    "errors": {"mw_rabi_2pikHz", "amplitude_frac", "detuning_frac"},
    "gate-sim": {"max_reps", "target"},
    "protocol-sim": {
        "protocol",
        "mode",
        "c0",
        "c1",
        "postselect",
        "edges",
        "nodes",
        "repin",
    },
    "robustness-scan": {"max_reps", "amplitude_frac_grid", "detuning_frac_grid",
                        "mw_rabi_2pikHz"},
    "dee-spectrum": {
        "k_dd",
        "n_int_pulses",
        "f_target",
        "t_delay_us",
        "center_2pikHz",
        "span_2pikHz",
        "points",
    },
    "polar-scan": {"f1", "points", "rf_area_rad", "n_composites"},
}


def _find_key_line(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0]
        if key in stripped:
            return i
    return 0


def _check_keys(table: dict, allowed: set, section: str, raw: str):
    for key in table:
        if key not in allowed:
            line = _find_key_line(raw, key)
            raise ConfigError(
                f"unknown key {key!r} in [{section}] (line {line}); "
                f"allowed: {sorted(allowed)}"
            )


def _load_config(path: str):
    raw = Path(path).read_text()
    try:
        data = tomli.loads(raw)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    return data, raw


def _build_register_from(table: dict, raw: str):
    _check_keys(table, _SCHEMAS["register"], "register", raw)
    if "positions_nm" in table:
        hfs = [hyperfine_vector(np.array(p, dtype=float)) for p in table["positions_nm"]]
    elif "bath_file" in table:
        from .lattice import NuclearBathSample

        sample = NuclearBathSample.from_text(Path(table["bath_file"]).read_text())
        hfs = [hf for _, hf in sample.nuclei]
    elif "explicit" in table:
        hfs = []
        for entry in table["explicit"]:
            _check_keys(entry, _SCHEMAS["explicit"], "register.explicit", raw)
            hfs.append(
                HyperfineVector.from_khz(
                    entry["a_par_2pikHz"],
                    entry["a_perp_2pikHz"],
                    entry.get("azimuth_rad", 0.0),
                )
            )
    else:
        raise ConfigError("register needs positions_nm, bath_file or explicit entries")
    reg = build_register(
        hfs,
        b_field=float(table["b_field_T"]),
        ms_branch=int(table.get("ms_branch", -1)),
        weak_field_factor=float(table.get("weak_field_factor", 10.0)),
    )
    pair = table.get("pair")
    if pair is not None:
        reg = reg.designate_pair(int(pair[0]), int(pair[1]))
    return reg


def _seq_params(table: dict, raw: str) -> GateSequenceParams:
    _check_keys(table, _SCHEMAS["sequence"], "sequence", raw)
    kwargs = {}
    if "k_int" in table:
        kwargs["k_int"] = int(table["k_int"])
    if "n_int_pulses" in table:
        kwargs["n_int_pulses"] = int(table["n_int_pulses"])
    if "rf_rabi_2pikHz" in table:
        kwargs["rf_rabi"] = float(khz_to_rad(table["rf_rabi_2pikHz"]))
    if "protect_pulses" in table:
        kwargs["protect_pulses"] = int(table["protect_pulses"])
    if "rf_substeps" in table:
        kwargs["rf_substeps"] = int(table["rf_substeps"])
    if "k_storage" in table:
        kwargs["k_storage"] = int(table["k_storage"])
    if "n_storage_pulses" in table:
        kwargs["n_storage_pulses"] = int(table["n_storage_pulses"])
    return GateSequenceParams(**kwargs)


def _error_model(table: dict, raw: str) -> PulseErrorModel | None:
    if not table:
        return None
    _check_keys(table, _SCHEMAS["errors"], "errors", raw)
    rabi = float(khz_to_rad(table.get("mw_rabi_2pikHz", 20_000.0)))
    return PulseErrorModel(
        rabi=rabi,
        amplitude_frac=float(table.get("amplitude_frac", 0.0)),
        detuning=float(table.get("detuning_frac", 0.0)) * rabi,
    )


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.12g}"
    return x


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _plan_for(reg, max_reps: int):
    p, q = reg.require_pair()
    return plan_selective_pi(
        reg.nuclei[p - 1].hyperfine.azimuth,
        reg.nuclei[q - 1].hyperfine.azimuth,
        max_reps,
    )


# -- subcommand implementations ---------------------------------------------


def _cmd_hyperfine(data, raw, out_dir, seed):
    table = data.get("hyperfine", {})
    _check_keys(table, _SCHEMAS["hyperfine"], "hyperfine", raw)
    rows = []
    for pos in table["positions_nm"]:
        hf = hyperfine_vector(np.array(pos, dtype=float))
        rows.append(
            (float(pos[0]), float(pos[1]), float(pos[2]),
             float(rad_to_khz(hf.a_par)), float(rad_to_khz(hf.a_perp)), hf.azimuth)
        )
    out = out_dir / "hyperfine.csv"
    _write_csv(out, ["x_nm", "y_nm", "z_nm", "a_par_2pikHz", "a_perp_2pikHz",
                     "azimuth_rad"], rows)
    strongest = max(rows, key=lambda r: abs(r[3]))
    return f"{len(rows)} sites, max |A_par| = {strongest[3]:.4g} 2pi kHz -> {out}"


def _cmd_census(data, raw, out_dir, seed):
    table = data.get("census", {})
    _check_keys(table, _SCHEMAS["census"], "census", raw)
    config = CensusConfig(
        samples=int(table.get("samples", 10_000)),
        abundance=float(table.get("abundance", 0.011)),
        radius=float(table.get("radius_nm", 3.0)),
        delta_min_grid=tuple(
            float(khz_to_rad(x)) for x in table.get("delta_min_2pikHz", [1.0, 2.0, 5.0])
        ),
        a_perp_min_grid=tuple(
            float(khz_to_rad(x)) for x in table.get("a_perp_min_2pikHz", [5.0, 10.0, 20.0])
        ),
        g_max=float(khz_to_rad(table.get("g_max_2pikHz", 0.05))),
        require_angle_constraint=bool(table.get("require_angle_constraint", False)),
        reps_for_angle=int(table.get("reps_for_angle", 1)),
    )
    report = run_census(config, seed)
    out = out_dir / "census.csv"
    out.write_text(report.to_csv())
    lenient = report.probability(config.delta_min_grid[0], config.a_perp_min_grid[0])
    return f"P(pair) at most lenient filters = {lenient:.4f} -> {out}"


def _cmd_gate_sim(data, raw, out_dir, seed):
    reg = _build_register_from(data.get("register", {}), raw)
    table = data.get("gate-sim", {})
    _check_keys(table, _SCHEMAS["gate-sim"], "gate-sim", raw)
    params = _seq_params(data.get("sequence", {}), raw)
    errors = _error_model(data.get("errors", {}), raw)
    plan = _plan_for(reg, int(table.get("max_reps", 1)))
    res = r_pi_time_domain(plan, reg, params, errors, target=int(table.get("target", 1)))
    # timed-event export of the compiled interaction block, for inspection
    from .protocols import _int_block
    from .sequences import apply_errors as _apply_errors, sequence_to_text

    seq, _, _ = _int_block(reg, plan.theta, params.k_int, params.n_int_pulses)
    if errors is not None:
        seq = _apply_errors(seq, errors)
    (out_dir / "interaction_block.txt").write_text(sequence_to_text(seq))
    out = out_dir / "gate_sim.json"
    _write_json(out, {
        "fidelity": res.fidelity_vs_ideal,
        "duration_us": res.duration * 1e6,
        "pulse_count": res.pulse_count,
        "plan": {
            "theta": plan.theta, "alpha": plan.alpha, "beta": res.details["beta"],
            "reps": plan.reps,
        },
        "details": {k: v for k, v in res.details.items() if isinstance(v, (int, float))},
    })
    return (f"R_pi fidelity = {res.fidelity_vs_ideal:.6f}, "
            f"{res.pulse_count} pulses, {res.duration*1e6:.1f} us -> {out}")


def _cmd_protocol_sim(data, raw, out_dir, seed):
    table = data.get("protocol-sim", {})
    _check_keys(table, _SCHEMAS["protocol-sim"], "protocol-sim", raw)
    protocol = table.get("protocol", "storage")
    params = _seq_params(data.get("sequence", {}), raw)
    errors = _error_model(data.get("errors", {}), raw)
    mode = table.get("mode", "ideal")
    payload = {"protocol": protocol, "mode": mode}
    if protocol == "graph":
        edges = [tuple(int(x) for x in e) for e in table["edges"]]
        state, fid, outcomes = graph_state_build(edges, int(table["nodes"]), seed)
        payload.update({
            "fidelity": fid,
            "outcomes": [list(o) for o in outcomes],
            "edges": [list(e) for e in edges],
        })
        summary = f"graph fidelity = {fid:.6f}"
    else:
        reg = _build_register_from(data.get("register", {}), raw)
        c0 = complex(table.get("c0", 1.0))
        c1 = complex(table.get("c1", 0.0))
        norm = np.sqrt(abs(c0) ** 2 + abs(c1) ** 2)
        c0, c1 = c0 / norm, c1 / norm
        if protocol == "storage":
            res = storage_protocol(
                reg, c0, c1, mode=mode, errors=errors, seq_params=params,
                seed=seed, postselect=table.get("postselect"),
            )
        elif protocol == "retrieval":
            res = retrieval_protocol(
                reg, (c0, c1), mode=mode, errors=errors, seq_params=params,
                repin=bool(table.get("repin", False)),
            )
        elif protocol == "roundtrip":
            st = storage_protocol(
                reg, c0, c1, mode=mode, errors=errors, seq_params=params,
                seed=seed, postselect=table.get("postselect"),
            )
            sign = 1.0 if st.outcome[0] == 0 else -1.0
            res = retrieval_protocol(
                reg, (c0, sign * c1), mode=mode, errors=errors, seq_params=params,
            )
            payload["storage_outcome"] = int(st.outcome[0])
            payload["storage_fidelity"] = st.fidelity_vs_ideal
        else:
            raise ConfigError(f"unknown protocol {protocol!r}")
        payload.update({
            "fidelity": res.fidelity_vs_ideal,
            "outcome": [int(o) for o in res.outcome],
            "duration_us": res.duration * 1e6,
            "pulse_count": res.pulse_count,
            "amplitudes": {"c0": [c0.real, c0.imag], "c1": [c1.real, c1.imag]},
            "details": {k: v for k, v in res.details.items()
                        if isinstance(v, (int, float))},
        })
        summary = f"{protocol} fidelity = {res.fidelity_vs_ideal:.6f}"
    out = out_dir / "protocol_sim.json"
    _write_json(out, payload)
    return f"{summary} -> {out}"


def _cmd_robustness_scan(data, raw, out_dir, seed):
    reg = _build_register_from(data.get("register", {}), raw)
    table = data.get("robustness-scan", {})
    _check_keys(table, _SCHEMAS["robustness-scan"], "robustness-scan", raw)
    params = _seq_params(data.get("sequence", {}), raw)
    plan = _plan_for(reg, int(table.get("max_reps", 1)))
    rabi = float(khz_to_rad(table.get("mw_rabi_2pikHz", 20_000.0)))
    amp_grid = [float(x) for x in table["amplitude_frac_grid"]]
    det_grid = [float(x) for x in table["detuning_frac_grid"]]
    rows = []
    for amp in amp_grid:
        for det in det_grid:
            em = PulseErrorModel(rabi=rabi, amplitude_frac=amp, detuning=det * rabi)
            res = r_pi_time_domain(plan, reg, params, em)
            rows.append((amp, float(rad_to_khz(det * rabi)), res.fidelity_vs_ideal))
    out = out_dir / "robustness.csv"
    _write_csv(out, ["amplitude_frac", "detuning_2pikHz", "fidelity"], rows)
    worst = min(r[2] for r in rows)
    return f"{len(rows)} grid points, worst fidelity = {worst:.6f} -> {out}"


def _cmd_dee_spectrum(data, raw, out_dir, seed):
    reg = _build_register_from(data.get("register", {}), raw)
    table = data.get("dee-spectrum", {})
    _check_keys(table, _SCHEMAS["dee-spectrum"], "dee-spectrum", raw)
    params = DeeParams(
        k_dd=int(table.get("k_dd", 5)),
        n_int_pulses=int(table.get("n_int_pulses", 200)),
        f_target=float(table.get("f_target", 0.1)),
        t_delay=float(us_to_s(table.get("t_delay_us", 673.0))),
    )
    center = float(khz_to_rad(table["center_2pikHz"]))
    span = float(khz_to_rad(table["span_2pikHz"]))
    points = int(table.get("points", 101))
    grid = np.linspace(center - span / 2, center + span / 2, points) / params.k_dd
    results = dee_spectrum(reg, grid, params)
    rows = [(float(rad_to_khz(w * params.k_dd)), s) for w, s in results]
    out = out_dir / "dee_spectrum.csv"
    _write_csv(out, ["probe_2pikHz", "signal"], rows)
    dip = min(rows, key=lambda r: r[1])
    return f"deepest dip {dip[1]:.4f} at {dip[0]:.3f} 2pi kHz -> {out}"


def _cmd_polar_scan(data, raw, out_dir, seed):
    reg = _build_register_from(data.get("register", {}), raw)
    table = data.get("polar-scan", {})
    _check_keys(table, _SCHEMAS["polar-scan"], "polar-scan", raw)
    params = PolarScanParams(
        rf_area=float(table.get("rf_area_rad", 2 * np.pi)),
        n_composites=int(table.get("n_composites", 240)),
    )
    points = int(table.get("points", 72))
    grid = np.linspace(0.0, 2 * np.pi, points, endpoint=False)
    results = polar_position_scan(reg, grid, float(table["f1"]), params)
    out = out_dir / "polar_scan.csv"
    _write_csv(out, ["phi_rf_rad", "signal"], results)
    dip = min(results, key=lambda r: r[1])
    return f"deepest dip {dip[1]:.4f} at phi_rf = {dip[0]:.4f} rad -> {out}"


_DISPATCH = {
    "hyperfine": _cmd_hyperfine,
    "census": _cmd_census,
    "gate-sim": _cmd_gate_sim,
    "protocol-sim": _cmd_protocol_sim,
    "robustness-scan": _cmd_robustness_scan,
    "dee-spectrum": _cmd_dee_spectrum,
    "polar-scan": _cmd_polar_scan,
}


def run(subcommand: str, config_path: str, seed=None, out=None) -> int:
    try:
        data, raw = _load_config(config_path)
        for section in data:
            if section not in set(_SCHEMAS) | set(SUBCOMMANDS) | {"register",
                                                                  "sequence",
                                                                  "errors",
                                                                  "common"}:
                raise ConfigError(
                    f"unknown section [{section}] (line {_find_key_line(raw, section)})"
                )
        common = data.get("common", {})
        _check_keys(common, _SCHEMAS["common"], "common", raw)
        run_seed = seed if seed is not None else common.get("seed", 0)
        out_dir = Path(out) if out is not None else Path(common.get("out_dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = _DISPATCH[subcommand](data, raw, out_dir, run_seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LarmorError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except KeyError as exc:
        print(f"config error: missing required key {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="larmor",
        description="Electron-nuclear register simulations from a single config file.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output directory")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
