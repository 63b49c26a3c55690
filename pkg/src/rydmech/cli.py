"""Config-driven command line entry point.

Config files are flat ``key = value`` lines; ``#`` starts a comment.
Frequencies and rates are linear Hz and accept the suffixes Hz, kHz, MHz and
GHz. Everything else is SI. Run ``rydmech --keys`` for the full key list.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import presets
from .integrate import SolverError
from .physmodel import BOHR_RADIUS, E_CHARGE, PhysicalParams, e_a0, hz, parameter_report

log = logging.getLogger("rydmech")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
EXPERIMENTS = ("params", "cool", "fock", "superpose", "noon", "sweep")
THREADS_ENV = "RYDMECH_THREADS"

_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}


class ConfigError(ValueError):
    pass


# key -> (kind, PhysicalParams field or None, help)
# kinds: freq (linear Hz -> rad/s), float, int, bool, str, choice:<a|b>
PARAM_KEYS = {
    "charge_e": ("float", "charge", "cantilever charge in elementary charges"),
    "dipole_moment_ea0": ("float", "dipole_moment", "transition dipole in e a0"),
    "separation": ("float", "separation", "atom-cantilever distance, m"),
    "dipole_arm": ("float", "dipole_arm", "cantilever dipole arm d, m"),
    "beam_length": ("float", "beam_length", "m"),
    "beam_width": ("float", "beam_width", "m"),
    "beam_thickness": ("float", "beam_thickness", "m"),
    "youngs_modulus": ("float", "youngs_modulus", "Pa"),
    "density": ("float", "density", "kg/m^3"),
    "effective_mass": ("float", "effective_mass", "kg"),
    "mech_freq": ("freq", "mech_freqs", "mechanical frequency of mode 1"),
    "mech_freq_2": ("freq", "mech_freqs", "mechanical frequency of mode 2"),
    "quality_factor": ("float", "quality_factor", "mechanical Q"),
    "temperature": ("float", "temperature", "bath temperature, K"),
    "rabi_l": ("freq", "rabi_l", "Omega_L (g-p)"),
    "rabi_r": ("freq", "rabi_r", "Omega_R (e-s during cooling, g-s otherwise)"),
    "rabi_mu": ("freq", "rabi_mu", "microwave s-p"),
    "rabi_1": ("freq", "rabi_1", "NOON drive g-p1"),
    "rabi_2": ("freq", "rabi_2", "NOON drive g-p2"),
    "decay_e": ("freq", "decay_e", "e -> g decay rate"),
    "decay_s": ("freq", "decay_s", "s -> g decay rate"),
    "decay_p": ("freq", "decay_p", "p -> g decay rate"),
    "decay_reset": ("freq", "decay_reset", "NOON reset decay s -> g"),
    "ensemble_size": ("int", "ensemble_size", "atoms in the ensemble"),
    "ensemble_mode": ("bool", "ensemble_mode", "scale Omega_L by sqrt(N)"),
    "coupling_g": ("freq", "coupling", "atom-cantilever coupling G (overrides geometry)"),
    "coupling_g2": ("freq", "coupling_2", "coupling to mode 2"),
    "mech_damping": ("freq", "mech_damping", "mechanical damping (overrides omega/Q)"),
    "x_zp_a0": ("float", "x_zp", "zero-point motion in Bohr radii (overrides formula)"),
}

RUN_KEYS = {
    "experiment": ("choice:" + "|".join(EXPERIMENTS), None, "required"),
    "preset": ("choice:" + "|".join(presets.PRESETS), None, "base parameter set"),
    "m_target": ("int", None, "Fock target"),
    "convention": ("float", None, "transfer-time scale factor (2 = halved coupling convention)"),
    "reset_mode": ("choice:decay|pulse", None, "NOON reset"),
    "excitation": ("choice:drive|inject", None, "NOON excitation"),
    "reset_lifetimes": ("float", None, "NOON reset duration in 1/decay_reset"),
    "dissipation": ("bool", None, "include Rydberg decay and mechanical bath"),
    "pulse_compensation": ("bool", None, "shorten exchange windows for pulse overlap"),
    "coupling_form": ("choice:rwa|full", None, "coupling Hamiltonian"),
    "calibrate": ("bool", None, "superpose: refine exchange windows on the coherent dynamics"),
    "hierarchy_factor": ("float", None, "required Omega / (G sqrt(m+1))"),
    "steady_state": ("bool", None, "cooling: run to convergence"),
    "duration": ("float", None, "cooling: fixed run time, s"),
    "fit_rate": ("bool", None, "cooling: fit the P0 transient"),
    "cutoff": ("int", None, "phonon cutoff per mode"),
    "rtol": ("float", None, "solver relative tolerance"),
    "atol": ("float", None, "solver absolute tolerance"),
    "n_points": ("int", None, "output grid size"),
    "max_time": ("float", None, "steady-state time limit, s"),
    "rel_tol": ("float", None, "steady-state convergence threshold"),
    "output_csv": ("str", None, "time-series CSV path"),
    "output_json": ("str", None, "summary JSON path"),
    "sweep_experiment": ("choice:cool|fock|superpose|noon", None, "experiment for each point"),
    "sweep_param": ("str", None, "key to vary"),
    "sweep_values": ("list", None, "comma-separated values, same units as the key"),
}

EXPECT_PREFIX = "expect_"

DEFAULT_PRESET = {"params": "params", "cool": "fig2_solid", "fock": "fig3a",
                  "superpose": "fig3b", "noon": "noon_ideal"}


@dataclass
class RunConfig:
    experiment: str
    params: PhysicalParams
    options: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _number(text: str, lineno: int, key: str, freq: bool) -> float:
    parts = text.split()
    if not parts or len(parts) > 2:
        raise ConfigError(f"line {lineno}: malformed value for {key!r}: {text!r}")
    scale = 1.0
    if len(parts) == 2 or (freq and parts[0].lower().endswith(tuple(_UNITS))):
        if len(parts) == 1:
            low = parts[0].lower()
            unit = next(u for u in sorted(_UNITS, key=len, reverse=True) if low.endswith(u))
            parts = [parts[0][: -len(unit)], unit]
        unit = parts[1].lower()
        if not freq or unit not in _UNITS:
            raise ConfigError(f"line {lineno}: unexpected unit {parts[1]!r} for {key!r}")
        scale = _UNITS[unit]
    try:
        val = float(parts[0])
    except ValueError:
        raise ConfigError(f"line {lineno}: malformed number for {key!r}: {text!r}") from None
    if not math.isfinite(val):
        raise ConfigError(f"line {lineno}: {key!r} must be finite")
    return val * scale


def _convert(kind: str, text: str, lineno: int, key: str):
    if kind == "freq":
        return hz(_number(text, lineno, key, True))
    if kind == "float":
        return _number(text, lineno, key, False)
    if kind == "int":
        v = _number(text, lineno, key, False)
        if v != int(v):
            raise ConfigError(f"line {lineno}: {key!r} must be an integer")
        return int(v)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"line {lineno}: {key!r} must be true/false, got {text!r}")
    if kind.startswith("choice:"):
        choices = kind[7:].split("|")
        if text not in choices:
            raise ConfigError(f"line {lineno}: {key!r} must be one of {choices}, got {text!r}")
        return text
    if kind == "list":
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ConfigError(f"line {lineno}: {key!r} needs at least one value")
        return items
    return text


def _parse_expect(text: str, lineno: int, key: str) -> tuple[float, float, bool]:
    """``value`` or ``value +- tol`` or ``value +- 20%``."""
    if "+-" in text:
        val, tol = (t.strip() for t in text.split("+-", 1))
    else:
        val, tol = text, "0"
    rel = tol.endswith("%")
    try:
        v = float(val)
        t = float(tol.rstrip("%"))
    except ValueError:
        raise ConfigError(f"line {lineno}: malformed expected value for {key!r}: {text!r}") from None
    return v, (t / 100 if rel else t), rel


def _apply_param(params: PhysicalParams, key: str, value) -> PhysicalParams:
    fld = PARAM_KEYS[key][1]
    if key == "charge_e":
        value *= E_CHARGE
    elif key == "dipole_moment_ea0":
        value = e_a0(value)
    elif key == "x_zp_a0":
        value *= BOHR_RADIUS
    elif key == "mech_freq":
        value = (value,) + tuple(params.mech_freqs[1:])
    elif key == "mech_freq_2":
        value = (params.mech_freqs[0], value)
    return params.replace(**{fld: value})


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse config text; ``overrides`` (key -> string) win over the file."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, val = (t.strip() for t in body.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key not in PARAM_KEYS and key not in RUN_KEYS and not key.startswith(EXPECT_PREFIX):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        entries[key] = (val, lineno)
    for key, val in (overrides or {}).items():
        if key not in PARAM_KEYS and key not in RUN_KEYS and not key.startswith(EXPECT_PREFIX):
            raise ConfigError(f"override: unknown key {key!r}")
        entries[key] = (val, 0)
    if "experiment" not in entries:
        raise ConfigError("line 0: missing required key 'experiment'")

    raw = {k: v for k, (v, _) in entries.items()}
    opts = {}
    for key, (val, lineno) in entries.items():
        if key in RUN_KEYS:
            opts[key] = _convert(RUN_KEYS[key][0], val, lineno, key)
    experiment = opts.pop("experiment")
    if experiment == "sweep":
        for req in ("sweep_experiment", "sweep_param", "sweep_values"):
            if req not in opts:
                raise ConfigError(f"line 0: sweep needs key {req!r}")
        sp_key = opts["sweep_param"]
        if sp_key not in PARAM_KEYS and sp_key not in RUN_KEYS:
            raise ConfigError(f"line {entries['sweep_param'][1]}: unknown sweep key {sp_key!r}")
    base = opts.pop("preset", None) or DEFAULT_PRESET.get(
        opts.get("sweep_experiment", experiment), "params")
    params = presets.PRESETS[base]
    for key, (val, lineno) in entries.items():
        if key in PARAM_KEYS:
            try:
                params = _apply_param(params, key, _convert(PARAM_KEYS[key][0], val, lineno, key))
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
    expect = {}
    for key, (val, lineno) in entries.items():
        if key.startswith(EXPECT_PREFIX):
            expect[key[len(EXPECT_PREFIX):]] = _parse_expect(val, lineno, key)
    opts["preset"] = base
    return RunConfig(experiment, params, opts, expect, raw)


# --------------------------------------------------------------------------- building

def build_script(cfg: RunConfig, experiment: str | None = None):
    from . import protocols as P

    exp = experiment or cfg.experiment
    o = cfg.options
    common = {k: o[k] for k in ("convention", "dissipation", "pulse_compensation",
                                "hierarchy_factor", "coupling_form") if k in o}
    if "cutoff" in o:
        common["cutoff"] = o["cutoff"]
    try:
        if exp == "cool":
            kw = {k: common[k] for k in ("cutoff", "coupling_form") if k in common}
            if "duration" in o:
                kw["duration"] = o["duration"]
            return P.build_cooling_protocol(cfg.params, **kw)
        if exp == "fock":
            return P.build_fock_protocol(o.get("m_target", 4), cfg.params, **common)
        if exp == "superpose":
            kw = dict(common)
            if "calibrate" in o:
                kw["calibrate"] = o["calibrate"]
            return P.build_superposition_protocol(cfg.params, **kw)
        if exp == "noon":
            kw = dict(common)
            for k_cfg, k_fn in (("reset_mode", "reset"), ("excitation", "excitation"),
                                ("reset_lifetimes", "reset_lifetimes")):
                if k_cfg in o:
                    kw[k_fn] = o[k_cfg]
            return P.build_noon_protocol(cfg.params, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"experiment {exp!r} has no protocol script")


def _solver_kw(o: dict) -> dict:
    return {k: o[k] for k in ("rtol", "atol") if k in o}


def _clean(x):
    """Make summaries JSON-safe (NaN -> None, numpy -> python)."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def execute(cfg: RunConfig, experiment: str | None = None) -> tuple[dict, dict | None]:
    """Run one experiment; returns (summary, time series or None)."""
    from . import protocols as P

    exp = experiment or cfg.experiment
    o = cfg.options
    if exp == "params":
        return {"report": parameter_report(cfg.params)}, None
    script = build_script(cfg, exp)
    if exp == "cool":
        if o.get("steady_state", True) and "duration" not in o:
            kw = {k: o[k] for k in ("rel_tol", "max_time") if k in o}
            run = P.run_cooling_steady_state(script, **kw, **_solver_kw(o))
        else:
            run = P.run_protocol(script, n_points=o.get("n_points", 201), **_solver_kw(o))
            p0 = run.summary["p0"][0]
            from .observables import effective_temperature
            try:
                run.summary["t_eff_k"] = effective_temperature(p0, script.info["omega"])
            except ValueError:
                run.summary["t_eff_k"] = float("nan")
        if o.get("fit_rate", False):
            fit = P.fit_cooling_rate(script, **_solver_kw(o))
            run.summary["relaxation_rate_fit_hz"] = fit["rate"] / (2 * math.pi)
            run.summary["cooling_rate_fit_hz"] = fit["cooling_rate"] / (2 * math.pi)
            run.summary["cooling_rate_estimate_hz"] = fit["estimate"] / (2 * math.pi)
            run.summary["cooling_rate_ratio"] = fit["ratio"]
    else:
        run = P.run_protocol(script, n_points=o.get("n_points", 201), **_solver_kw(o))
    summary = dict(run.summary)
    summary["p0_mode1"] = summary["p0"][0]
    series = {"time_s": run.result.times}
    series.update(run.result.expectations)
    return summary, series


def _fmt(x: float) -> str:
    return f"{float(x):.8e}"


def write_csv(path: Path, series: dict) -> None:
    names = ["time_s"] + [k for k in series if k != "time_s"]
    n = len(series["time_s"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(series[k][i]) for k in names])


def check_expectations(expect: dict, metrics: dict) -> list[dict]:
    out = []
    for name, (val, tol, rel) in expect.items():
        got = metrics.get(name)
        if isinstance(got, list):
            got = got[0] if got else None
        if got is None or not isinstance(got, (int, float)):
            out.append({"metric": name, "expected": val, "tolerance": tol, "relative": rel,
                        "value": None, "pass": False})
            continue
        lim = tol * abs(val) if rel else tol
        out.append({"metric": name, "expected": val, "tolerance": tol, "relative": rel,
                    "value": got, "pass": bool(abs(got - val) <= lim)})
    return out


def _sweep_point(args):
    text_cfg, key, value, exp = args
    cfg = parse_config(text_cfg, {key: value})
    summary, _ = execute(cfg, exp)
    return summary


def run_sweep(cfg: RunConfig, config_text: str, jobs: int) -> list[dict]:
    exp = cfg.options["sweep_experiment"]
    key = cfg.options["sweep_param"]
    # the sweep point inherits everything except the sweep keys and the experiment
    lines = []
    for line in config_text.splitlines():
        k = line.split("#", 1)[0].split("=", 1)[0].strip()
        if k in ("experiment", "sweep_experiment", "sweep_param", "sweep_values", key):
            continue
        lines.append(line)
    lines.append(f"experiment = {exp}")
    text = "\n".join(lines)
    tasks = [(text, key, v, exp) for v in cfg.options["sweep_values"]]
    if jobs <= 1 or len(tasks) == 1:
        results = [_sweep_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    rows = []
    for (_, _, v, _), s in zip(tasks, results):
        rows.append({key: v, "fidelity": s.get("fidelity", float("nan")), "p0": s["p0"][0],
                     "t_eff_k": s.get("t_eff_k", float("nan")),
                     "total_time_s": s["total_time_s"],
                     "max_trace_drift": s["solver"]["max_trace_drift"]})
    return rows


def write_sweep_csv(path: Path, key: str, rows: list[dict]) -> None:
    names = [key, "fidelity", "p0", "t_eff_k", "total_time_s", "max_trace_drift"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            w.writerow([r[key]] + [_fmt(r[k]) for k in names[1:]])


def key_table() -> str:
    lines = ["# physical parameters (frequencies in Hz, kHz, MHz or GHz)"]
    lines += [f"{k:<22} {v[0]:<8} {v[2]}" for k, v in PARAM_KEYS.items()]
    lines.append("# run options")
    lines += [f"{k:<22} {v[0].split(':')[0]:<8} {v[2]}" for k, v in RUN_KEYS.items()]
    lines.append(f"{EXPECT_PREFIX}<metric>{'':<7} check    'value', 'value +- tol' or 'value +- 5%'")
    return "\n".join(lines)


def _set_threads() -> None:
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="rydmech", description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", type=Path, help="key = value config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    ap.add_argument("--out-dir", type=Path, default=None, help="directory for default outputs")
    ap.add_argument("--explain", action="store_true", help="print the pulse table and exit")
    ap.add_argument("--jobs", type=int, default=None, help="parallel sweep workers")
    ap.add_argument("--keys", action="store_true", help="list config keys and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads()
    if args.keys:
        print(key_table())
        return EXIT_OK
    if args.config is None:
        ap.error("a config file is required")

    try:
        text = args.config.read_text()
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        cfg = parse_config(text, overrides)
        if args.explain:
            exp = cfg.options.get("sweep_experiment", cfg.experiment)
            if exp == "params":
                print(json.dumps(_clean(parameter_report(cfg.params)), indent=2))
            else:
                print(build_script(cfg, exp).explain())
            return EXIT_OK
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out_dir or Path(".")
    stem = args.config.stem
    csv_path = Path(cfg.options.get("output_csv", out_dir / f"{stem}.csv"))
    json_path = Path(cfg.options.get("output_json", out_dir / f"{stem}.json"))
    for p in (csv_path, json_path):
        p.parent.mkdir(parents=True, exist_ok=True)

    doc = {"experiment": cfg.experiment, "input": cfg.raw, "preset": cfg.options["preset"],
           "derived": parameter_report(cfg.params)}
    status = EXIT_OK
    try:
        if cfg.experiment == "sweep":
            jobs = args.jobs or int(os.environ.get("RYDMECH_JOBS", os.cpu_count() or 1))
            rows = run_sweep(cfg, text, jobs)
            write_sweep_csv(csv_path, cfg.options["sweep_param"], rows)
            doc["sweep"] = rows
            metrics = {}
            if any(r["max_trace_drift"] > 1e-6 for r in rows):
                status = EXIT_SOLVER
        else:
            summary, series = execute(cfg)
            if series is not None:
                write_csv(csv_path, series)
            diag = summary.pop("solver", None)
            metrics = summary.get("report", summary)
            doc["metrics"] = metrics
            doc["diagnostics"] = diag
            if diag and diag.get("failed"):
                status = EXIT_SOLVER
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        doc["error"] = str(exc)
        status = EXIT_SOLVER
        metrics = {}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    checks = check_expectations(cfg.expect, metrics) if status == EXIT_OK else []
    doc["checks"] = checks
    if status == EXIT_OK and not all(c["pass"] for c in checks):
        status = EXIT_CHECK
    doc["meta"] = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                   "exit_status": status}
    with open(json_path, "w") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=False)
        fh.write("\n")
    for c in checks:
        tol = f"{c['tolerance'] * 100:g}%" if c["relative"] else f"{c['tolerance']:g}"
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['metric']}: {c['value']} "
              f"(expected {c['expected']} +- {tol})")
    log.info("wrote %s and %s", csv_path, json_path)
    return status


if __name__ == "__main__":
    sys.exit(main())
