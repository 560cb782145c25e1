"""Command-line entry point: one subcommand per reproducible result.

Every run writes its data files, figures, the effective config and a
``manifest.json`` into ``--out``. Failures exit nonzero and print a JSON
error object on stderr (also written to ``error.json`` when possible).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import config as cfgmod
from . import dynamics as dyn
from . import io
from .circuit import TransmonParams, build_composite, diagonalize_fluxonium
from .pulses import cosine_envelope, pulse_spectrum
from .spectrum import conditional_transitions, residual_zz, zz_sweep

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class UsageError(ValueError):
    pass


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="device/experiment YAML file (default: built-in device)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--seed", type=int, default=None, help="seed for noise-injection hooks")
    common.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")

    parser = _Parser(prog="ftfsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    p = sub.add_parser("spectrum", parents=[common], help="conditional coupler transitions")
    p.add_argument("--flux-fractions", type=_floats)
    p = sub.add_parser("zz-sweep", parents=[common], help="residual ZZ over (g_12, g_ic)")
    p.add_argument("--resolution", type=int)
    p = sub.add_parser("rabi", parents=[common], help="conditional Rabi oscillations")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--t-max", type=float)
    p = sub.add_parser("pulse", parents=[common], help="pulse envelope and Fourier spectrum")
    p.add_argument("--kind", choices=dyn.PULSE_KINDS)
    p.add_argument("--t-g", type=float)
    for name, text in (("evolve", "simulate one CZ gate"), ("calibrate", "emulated tune-up pipeline")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--kind", choices=dyn.PULSE_KINDS)
        p.add_argument("--t-g", type=float)
        p.add_argument("--eta-c", type=float)
        p.add_argument("--frame", choices=("lab", "rotating"))
    p = sub.add_parser("fidelity-sweep", parents=[common], help="optimized F_g bands vs gate time")
    p.add_argument("--kinds", type=lambda s: s.split(","))
    p.add_argument("--t-g", type=_floats)
    p.add_argument("--eta-c", type=_floats)
    p.add_argument("--frame", choices=("lab", "rotating"))
    return parser


def _options(cfg, command, args, mapping):
    opts = dict(cfg["experiments"][command])
    for arg_name, key in mapping.items():
        val = getattr(args, arg_name, None)
        if val is not None:
            opts[key] = val
    return opts


# ---------------------------------------------------------------- subcommands

def run_spectrum(cfg, params, opts, out, ctx):
    tables, rows, summary = {}, [], {}
    for flux in opts["flux_fractions"]:
        c0 = params["c"]
        sys_ = build_composite(**{**params, "c": TransmonParams(c0.e_c, c0.e_j_total, float(flux))})
        tr = conditional_transitions(sys_).as_dict()
        tables[float(flux)] = tr
        rows += [(float(flux), state, f) for state, f in tr.items()]
        summary[str(flux)] = {"transitions_GHz": tr, "residual_zz_kHz": residual_zz(sys_)}
    for name, key in (("F1", "f1"), ("F2", "f2")):
        e, _, _ = diagonalize_fluxonium(params[key], params["trunc"].fluxonium_basis_size, 2)
        summary[f"{name}_f01_MHz"] = 1e3 * float(e[1] - e[0])
    files = [io.write_csv(out / "conditional_transitions.csv", ["flux_fraction", "state", "f_GHz"], rows),
             io.write_json(out / "spectrum_summary.json", summary)]
    if ctx["figures"]:
        files.append(io.plot_spectrum_peaks(tables, out / "spectrum.png"))
    return files


def run_zz_sweep(cfg, params, opts, out, ctx):
    base = {k: v for k, v in params.items() if k != "g"}
    res = opts["resolution"]
    if ctx["args"].resolution:
        res = [ctx["args"].resolution] * 2
    result = zz_sweep(base, tuple(opts["g12_range"]), tuple(opts["gic_range"]), tuple(res),
                      float(opts["asymmetry"]), workers=ctx["threads"])
    g = params["g"]
    device = residual_zz(build_composite(**params))
    files = [io.write_csv(out / "zz_sweep.csv", ["g_12_MHz", "g_ic_MHz", "chi_zz_kHz"], result.rows()),
             io.write_json(out / "zz_summary.json", {"device_point": {"g_12_MHz": g.g_12, "g_1c_MHz": g.g_1c,
                                                                       "g_2c_MHz": g.g_2c, "chi_zz_kHz": device}})]
    if ctx["figures"]:
        files.append(io.plot_zz_map(result, out / "zz_sweep.png", (g.g_12, g.g_1c)))
    return files


def run_rabi(cfg, params, opts, out, ctx):
    sys_ = build_composite(**params)
    drive = cfg["drive"]
    res = dyn.conditional_rabi(sys_, None, float(opts["amplitude"]), float(opts["t_max"]), drive["eta_c"],
                               drive["eta_f1"], None, opts.get("frame", "rotating"), bool(opts.get("resonant", True)))
    keys = list(res.populations)
    rows = zip(res.times, *(res.populations[k] for k in keys))
    files = [io.write_csv(out / "rabi.csv", ["t_ns"] + [f"p_{k[0]}1{k[1]}" for k in keys], rows),
             io.write_json(out / "rabi_summary.json", {"rabi_frequency_MHz": res.frequencies,
                                                       "amplitude_rad_per_ns": opts["amplitude"]})]
    if ctx["figures"]:
        files.append(io.plot_rabi(res, out / "rabi.png"))
    return files


def run_pulse(cfg, params, opts, out, ctx):
    sys_ = build_composite(**params)
    drive = cfg["drive"]
    tr = conditional_transitions(sys_)
    t_g = float(opts["t_g"])
    area = dyn.two_pi_area(sys_, drive["eta_c"], drive["eta_f1"])
    envs = {k: dyn.gate_pulse(sys_, k, t_g, drive["eta_c"], drive["eta_f1"],
                              sample_rate=float(opts["sample_rate"])).scaled(area) for k in dyn.PULSE_KINDS}
    env = envs[opts["kind"]]
    f_d = tr.f_11
    bands = {k: (v - 0.0025, v + 0.0025) for k, v in tr.as_dict().items() if k != "11"}
    ref = cosine_envelope(t_g, 2 * env.area() / t_g, env.sample_rate)
    grid = np.linspace(f_d - 0.25, f_d + 0.25, 2001)
    spectra = {k: pulse_spectrum(e, f_d, grid, bands, cosine_envelope(t_g, 2 * e.area() / t_g, e.sample_rate))
               for k, e in envs.items()}
    spec = pulse_spectrum(env, f_d, grid, bands, ref)
    header = {"t_g_ns": t_g, "sample_rate_per_ns": env.sample_rate, "shape_kind": env.shape_kind,
              "f_d_GHz": f_d, "metadata": env.metadata, "units": {"t": "ns", "omega": "rad/ns"}}
    files = [
        io.write_csv(out / "envelope.csv", ["t_ns", "omega_I", "omega_Q"],
                     zip(env.times, env.i_samples, env.q_samples)),
        io.write_json(out / "envelope.json", header),
        io.write_csv(out / "spectrum.csv", ["f_GHz", "re", "im", "abs"],
                     zip(spec.frequencies, spec.amplitude.real, spec.amplitude.imag, np.abs(spec.amplitude))),
        io.write_json(out / "band_power.json", {k: {"band_power_dB_vs_cosine": s.band_power_db,
                                                    "parseval_error": s.parseval_error}
                                                for k, s in spectra.items()}),
    ]
    if ctx["figures"]:
        files.append(io.plot_envelope(env, out / "envelope.png"))
        files.append(io.plot_pulse_spectra(spectra, {f"f_{k}": v for k, v in tr.as_dict().items()},
                                           out / "pulse_spectra.png"))
    return files


def _gate_opts(cfg, opts):
    drive = cfg["drive"]
    eta_c = float(opts.get("eta_c", drive["eta_c"]))
    return eta_c, float(drive["eta_f1"]), opts.get("frame", "lab"), opts.get("dt")


def run_evolve(cfg, params, opts, out, ctx):
    sys_ = build_composite(**params)
    eta_c, eta_f1, frame, dt = _gate_opts(cfg, opts)
    noise = cfgmod.noise_model(cfg)
    pulse = dyn.gate_pulse(sys_, opts["kind"], float(opts["t_g"]), eta_c, eta_f1)
    f_d = opts.get("f_d") or conditional_transitions(sys_).f_11
    area = opts.get("area") or dyn.two_pi_area(sys_, eta_c, eta_f1)
    if opts.get("optimize", True):
        opt = dyn.optimize_drive(sys_, pulse, eta_c, eta_f1, noise, f_d, area, dt=dt, frame=frame)
        f_d, area = opt.f_d, opt.area
    drive = dyn.DriveConfig(f_d, pulse.scaled(area), eta_c, eta_f1)
    evo = dyn.evolve(sys_, drive, dyn.COMPUTATIONAL, dt, frame, dyn._pairs())
    report = dyn.gate_report(sys_, evo, noise, None, {"f_d_GHz": f_d, "area_rad": area, "t_g_ns": pulse.t_g,
                                                      "kind": pulse.shape_kind, "eta_c": eta_c, "frame": frame})
    pops = {(r[0], r[2]): evo.populations[:, k] for k, (r, _) in enumerate(evo.pairs)}
    files = [io.write_json(out / "gate_report.json", report.to_dict()),
             io.write_csv(out / "coupler_populations.csv", ["t_ns"] + [f"p_{i}1{j}" for i, j in pops],
                          zip(evo.times, *pops.values()))]
    if ctx["figures"]:
        files.append(io.plot_populations(evo.times, pops, out / "coupler_populations.png"))
    return files


def run_calibrate(cfg, params, opts, out, ctx):
    sys_ = build_composite(**params)
    eta_c, eta_f1, frame, dt = _gate_opts(cfg, opts)
    record, report, amap = cal.tune_up_pipeline(
        sys_, opts["kind"], float(opts["t_g"]), eta_c, eta_f1, cfgmod.noise_model(cfg), dt=dt, frame=frame,
        phase_noise_deg=float(opts.get("phase_noise_deg", 0.0)), seed=ctx["seed"])
    files = [io.atomic_write_text(out / "calibration_record.json", record.to_json() + "\n"),
             io.write_json(out / "gate_report.json", report.to_dict()),
             io.write_csv(out / "amplitude_map.csv", ["f_GHz", "amplitude", "return_population"], amap.rows())]
    if ctx["figures"]:
        files.append(io.plot_amplitude_map(amap, record.f_d, record.amplitude, out / "amplitude_map.png"))
    return files


def run_fidelity_sweep(cfg, params, opts, out, ctx):
    sys_ = build_composite(**params)
    rows = dyn.fidelity_sweep(sys_, opts["kinds"], opts["t_g"], opts["eta_c"], cfg["drive"]["eta_f1"],
                              cfgmod.noise_model(cfg), opts.get("frame", "lab"), opts.get("dt"), ctx["threads"])
    table = [(r.t_g, r.pulse_kind, r.eta_c, r.f_g, r.f_p, r.leakage) for r in rows]
    bands = dyn.fidelity_bands(rows)
    summary = {"bands": [{"pulse_kind": k, "t_g_ns": t, "F_g_min": lo, "F_g_max": hi}
                         for (k, t), (lo, hi) in bands.items()],
               "failures": [{"pulse_kind": r.pulse_kind, "t_g_ns": r.t_g, "eta_c": r.eta_c, "error": r.error}
                            for r in rows if r.error],
               "points": [{"pulse_kind": r.pulse_kind, "t_g_ns": r.t_g, "eta_c": r.eta_c, "f_d_GHz": r.f_d,
                           "area_rad": r.area, "converged": r.converged} for r in rows]}
    files = [io.write_csv(out / "fidelity_sweep.csv", ["t_g_ns", "pulse_kind", "eta_c", "F_g", "F_p", "leakage"],
                          table),
             io.write_json(out / "fidelity_bands.json", summary)]
    if ctx["figures"]:
        files.append(io.plot_fidelity_bands(rows, out / "fidelity_sweep.png"))
    return files


COMMANDS = {
    "spectrum": (run_spectrum, {"flux_fractions": "flux_fractions"}),
    "zz-sweep": (run_zz_sweep, {}),
    "rabi": (run_rabi, {"amplitude": "amplitude", "t_max": "t_max"}),
    "pulse": (run_pulse, {"kind": "kind", "t_g": "t_g"}),
    "evolve": (run_evolve, {"kind": "kind", "t_g": "t_g", "eta_c": "eta_c", "frame": "frame"}),
    "calibrate": (run_calibrate, {"kind": "kind", "t_g": "t_g", "eta_c": "eta_c", "frame": "frame"}),
    "fidelity-sweep": (run_fidelity_sweep, {"kinds": "kinds", "t_g": "t_g", "eta_c": "eta_c", "frame": "frame"}),
}


def _error(kind, message, out=None, code=EXIT_RUNTIME, **extra):
    payload = {"error": kind, "message": message, "exit_code": code, **extra}
    print(json.dumps(payload), file=sys.stderr)
    if out is not None:
        try:
            io.write_json(Path(out) / "error.json", payload)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _error("usage", str(exc), code=EXIT_CONFIG, valid_commands=list(COMMANDS))
    if args.command is None:
        return _error("usage", "missing subcommand", code=EXIT_CONFIG, valid_commands=list(COMMANDS))
    out = Path(args.out)
    try:
        cfg = cfgmod.validate_config(args.config if args.config else cfgmod.DEVICE_YAML)
        params = cfgmod.build_params(cfg)
        if args.threads < 1:
            raise cfgmod.ConfigError("--threads", "must be >= 1")
        out.mkdir(parents=True, exist_ok=True)
    except cfgmod.ConfigError as exc:
        return _error("config", str(exc), code=EXIT_CONFIG, field=exc.path)
    except OSError as exc:
        return _error("output", str(exc), code=EXIT_CONFIG)

    func, mapping = COMMANDS[args.command]
    opts = _options(cfg, args.command, args, mapping)
    if args.command == "evolve" or args.command == "calibrate":
        if args.eta_c is not None:
            opts["eta_c"] = args.eta_c
    ctx = {"args": args, "threads": args.threads, "seed": args.seed, "figures": not args.no_figures}
    start = time.perf_counter()
    try:
        files = func(cfg, params, opts, out, ctx)
        effective = {"config": cfg, "command": args.command, "options": opts, "seed": args.seed}
        files.append(io.atomic_write_text(out / "config.effective.yaml", cfgmod.emit_config(cfg)))
        manifest = {
            "command": args.command,
            "inputs_hash": io.inputs_hash(effective),
            "options": opts,
            "seed": args.seed,
            "threads": args.threads,
            "versions": io.versions(),
            "wall_time_s": time.perf_counter() - start,
            "artifacts": sorted(Path(f).name for f in files),
        }
        io.write_json(out / "manifest.json", manifest)
    except cal.CalibrationError as exc:
        return _error("calibration", str(exc), out, stage=exc.stage)
    except Exception as exc:  # surfaced as machine-readable JSON
        return _error(type(exc).__name__, str(exc), out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
