"""``shuttlelab`` command-line front end.

Every command writes a JSON report (``params``, ``covariance``,
``metrics``, ``resolved_config``, ``warnings``) plus plot-ready CSV files
into ``--out``. Timestamps and run times go to a separate ``.meta.json``
so that reports are byte-identical for identical inputs.

Exit codes: 0 success, 1 internal error, 2 invalid input or failed
precondition.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
import time
from importlib import metadata

import numpy as np

from . import config as cfgmod
from .dynamics import (IonLostError, add_compensation, classical_amplitude, integrate_ion,
                       optimize_compensation)
from .filtering import FilterSpec, filtered_well_trajectory
from .motional import (MotionalParams, SidebandScan, bsb_flop, condition_number, fit_flop,
                       fit_sideband_ratio, simulate_sideband_scan)
from .numerics import IntegrationError
from .potential import ConstraintError, Waveform, WellLostError, find_wells, make_transport_waveform
from .probe import (CalibrationCurve, CalibrationError, DeshelveScan, OutOfRangeError,
                    erf_position, fit_calibration, fit_erf_trajectory, reconstruct_trajectory,
                    simulate_scan, speed_metrics)

COMMANDS = ("calibrate", "transport", "reconstruct", "thermometry", "optimize")
INPUT_ERRORS = (cfgmod.ConfigError, CalibrationError, OutOfRangeError, WellLostError,
                IonLostError, ConstraintError, IntegrationError, ValueError, OSError)

# sub-streams derived from the run seed
STREAM_CALIBRATION, STREAM_DELAY, STREAM_FLOP, STREAM_RED, STREAM_BLUE = range(5)


class InputError(Exception):
    """Failed precondition reported with exit code 2."""


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v)
                        if isinstance(v, (bool, np.bool_, np.integer, int)) else v for v in row])


def _report(name, params, covariance, metrics, cfg, warnings):
    return {"command": name, "params": params, "covariance": covariance, "metrics": metrics,
            "resolved_config": cfgmod.to_json(cfg), "warnings": list(warnings)}


def _cov_dict(names, cov):
    return {"names": list(names), "matrix": np.asarray(cov)}


def _calibration_grid(cfg):
    c = cfg["calibration_scan"]
    return cfgmod.grid(c["start_um"], c["stop_um"], c["step_um"])


def _delay_grid(cfg):
    d = cfg["delay_scan"]
    return cfgmod.grid(d["start_ns"], d["stop_ns"], d["step_ns"])


def _calibration_scan(cfg, seed, data, out, warnings):
    if data:
        return DeshelveScan.from_csv(data, "calibration")
    scan = simulate_scan(cfgmod.build_beam(cfg), _calibration_grid(cfg),
                         cfg["calibration_scan"]["trials"], [seed, STREAM_CALIBRATION])
    scan.to_csv(os.path.join(out, "calibration_scan.csv"))
    return scan


def cmd_calibrate(cfg, args, out, warnings):
    scan = _calibration_scan(cfg, cfg["seed"], args.data, out, warnings)
    c = cfg["calibration_scan"]
    curve = fit_calibration(scan, int(c["degree"]), c["level"])
    write_json(os.path.join(out, "calibration_curve.json"), curve.to_dict())
    lo, hi = scan.interval(c["level"])
    write_csv(os.path.join(out, "calibration_plot.csv"), ["z_um", "p", "ci_low", "ci_high", "fit"],
              [scan.abscissa, scan.fraction, lo, hi, curve(scan.abscissa)])
    span = scan.abscissa[-1] - scan.abscissa[0]
    names = [f"c{k}" for k in range(len(curve.coefficients))]
    metrics = {"valid_range_um": list(curve.valid_range), "direction": curve.direction,
               "reduced_chi2": curve.reduced_chi2, "probability_range": list(curve.probability_range),
               "valid_fraction_of_span": (curve.valid_range[1] - curve.valid_range[0]) / span,
               "n_points": int(scan.abscissa.size)}
    params = dict(zip(names, curve.coefficients))
    params.update(offset_um=curve.offset, scale_um=curve.scale)
    return _report("calibrate", params, _cov_dict(names, curve.covariance), metrics, cfg, warnings)


def _waveform(cfg, basis, data):
    if data:
        return Waveform.from_csv(data)
    w = cfg["waveform"]
    return make_transport_waveform(
        basis, w["z_i_um"], w["z_f_um"], w["duration_us"], w["sample_interval_us"],
        cfg["trap"]["axial_frequency_hz"], int(w["hold_before"]), int(w["hold_after"]),
        w["regularization"], mass=cfgmod.build_ion(cfg).mass)


def _arrival(times, z, target, tolerance):
    idx = np.flatnonzero(np.abs(z - target) > tolerance)
    if idx.size == 0:
        return float(times[0])
    return float(times[min(idx[-1] + 1, len(times) - 1)])


def run_transport(cfg, data=None):
    """Designed well, filtered well and ion trajectories for one waveform."""
    basis = cfgmod.build_basis(cfg)
    ion = cfgmod.build_ion(cfg)
    wf = _waveform(cfg, basis, data)
    dt = cfg["waveform"]["dt_us"]
    spec = cfgmod.build_filter(cfg)
    # the designed well uses the same sampling convention as the filter output
    t_d, z_d, f_d, _ = filtered_well_trajectory(basis, wf, FilterSpec(math.inf), dt, ion.mass)
    t_f, z_f, f_f, sig = filtered_well_trajectory(basis, wf, spec, dt, ion.mass)
    traj = integrate_ion(basis, sig, ion)
    return basis, ion, wf, (t_d, z_d, f_d), (t_f, z_f, f_f), traj


def cmd_transport(cfg, args, out, warnings):
    basis, ion, wf, designed, filtered, traj = run_transport(cfg, args.data)
    t_d, z_d, f_d = designed
    t_f, z_f, f_f = filtered
    write_csv(os.path.join(out, "designed_well.csv"), ["t_us", "z_um", "f_hz"], [t_d, z_d, f_d])
    write_csv(os.path.join(out, "filtered_well.csv"), ["t_us", "z_um", "f_hz"], [t_f, z_f, f_f])
    write_csv(os.path.join(out, "ion_trajectory.csv"), ["t_us", "z_um", "v_m_per_s"],
              [traj.times, traj.positions, traj.velocities])
    wf.to_csv(os.path.join(out, "waveform.csv"))
    displacement = float(z_d[-1] - z_d[0])
    tol = 0.01 * abs(displacement)
    speed = np.gradient(z_f, t_f)
    final = wf.voltages[-1]
    z_min, f_min = find_wells(basis, final[None, :], [traj.positions[-1]], mass=ion.mass)
    alpha = classical_amplitude(traj, z_min[0], f_min[0], ion.mass)
    nominal = displacement / cfg["waveform"]["duration_us"] if not args.data else float("nan")
    metrics = {
        "displacement_um": displacement,
        "nominal_speed_m_per_s": nominal,
        "peak_well_speed_m_per_s": float(np.max(np.abs(speed))),
        "peak_ion_speed_m_per_s": float(np.max(np.abs(traj.velocities))),
        "designed_arrival_us": _arrival(t_d, z_d, z_d[-1], tol),
        "filtered_arrival_us": _arrival(t_f, z_f, z_d[-1], tol),
        "ion_arrival_us": _arrival(traj.times, traj.positions, z_d[-1], tol),
        "frequency_min_hz": float(f_f.min()),
        "frequency_max_hz": float(f_f.max()),
        "residual_n_coh": float(abs(alpha) ** 2),
        "max_ion_well_offset_um": float(np.max(np.abs(
            traj.positions - np.interp(traj.times, t_f, z_f)))),
    }
    metrics["arrival_delay_us"] = metrics["filtered_arrival_us"] - metrics["designed_arrival_us"]
    params = {"n_samples": wf.n_samples, "sample_interval_us": wf.sample_interval, "t0_us": wf.t0}
    return _report("transport", params, None, metrics, cfg, warnings)


def _truth_trajectory(cfg):
    w, tr = cfg["waveform"], cfg["truth"]
    if tr["source"] == "simulation":
        *_, traj = run_transport(cfg)
        return traj, None
    disp = w["z_f_um"] - w["z_i_um"]
    t_sigma = abs(disp) / (math.sqrt(math.pi) * tr["v_max"])
    t_0 = cfg["fit"]["t0_us"]
    # z_i in the model is the position at t_0; place the lower asymptote at the start
    lower = w["z_i_um"]
    amp = 0.5 * math.sqrt(math.pi) * tr["v_max"] * t_sigma
    z_i = lower + amp * (1.0 + math.erf((t_0 - tr["t_c_us"]) / t_sigma))
    params = (z_i, tr["v_max"], t_sigma, tr["t_c_us"], t_0)
    return (lambda t: erf_position(t, *params)), dict(zip(("z_i", "v_max", "t_sigma", "t_c",
                                                           "t_0"), params))


def cmd_reconstruct(cfg, args, out, warnings):
    seed = cfg["seed"]
    if args.curve:
        try:
            with open(args.curve) as fh:
                curve = CalibrationCurve.from_dict(json.load(fh))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise InputError(f"{args.curve}: not a calibration curve file ({exc})") from exc
    else:
        scan = _calibration_scan(cfg, seed, None, out, warnings)
        c = cfg["calibration_scan"]
        curve = fit_calibration(scan, int(c["degree"]), c["level"])
        write_json(os.path.join(out, "calibration_curve.json"), curve.to_dict())
        warnings.append("no --curve given; calibration simulated from the config")
    beam = cfgmod.build_beam(cfg)
    truth = None
    if args.data:
        delay = DeshelveScan.from_csv(args.data, "delay")
    else:
        z_of, truth = _truth_trajectory(cfg)
        delay = simulate_scan(beam, _delay_grid(cfg), cfg["delay_scan"]["trials"],
                              [seed, STREAM_DELAY], trajectory=z_of,
                              integrate_pulse=cfg["delay_scan"]["integrate_pulse"])
        delay.to_csv(os.path.join(out, "delay_scan.csv"))
    level = cfg["calibration_scan"]["level"]
    rec = reconstruct_trajectory(curve, delay, beam.pulse_duration, level)
    if rec.n_out_of_range:
        warnings.append(f"{rec.n_out_of_range} of {rec.times.size} delay points outside the "
                        "calibration range; excluded from the fit")
    use = rec.in_range & (rec.sigma > 0)
    fit = fit_erf_trajectory(rec.times[use], rec.positions[use], rec.sigma[use],
                             t_0=cfg["fit"]["t0_us"])
    if not fit.result.converged:
        warnings.append(f"trajectory fit did not converge: {fit.result.message}")
    w = cfg["waveform"]
    displacement = abs(w["z_f_um"] - w["z_i_um"]) if not args.data else None
    metrics_obj = speed_metrics(fit, displacement, cfgmod.cutoff(cfg))
    write_csv(os.path.join(out, "reconstruction.csv"),
              ["t_us", "z_um", "sigma_um", "z_low_um", "z_high_um", "in_range", "fit_um"],
              [rec.times, rec.positions, rec.sigma, rec.low, rec.high, rec.in_range,
               fit.position(rec.times)])
    names = ("z_i", "v_max", "t_sigma", "t_c", "t_0")
    metrics = metrics_obj.to_dict()
    metrics.update(n_points=int(rec.times.size), n_out_of_range=rec.n_out_of_range,
                   reduced_chi2=fit.result.reduced_chi2, converged=fit.result.converged,
                   v_max_sigma=fit.errors["v_max"])
    if truth is not None:
        metrics["truth"] = truth
        metrics["v_max_pull"] = (fit.v_max - truth["v_max"]) / fit.errors["v_max"]
    return _report("reconstruct", dict(zip(names, fit.parameters)), _cov_dict(names, fit.covariance),
                   metrics, cfg, warnings)


def _thermometry_scans(cfg, args, out):
    th = cfg["thermometry"]
    seed = cfg["seed"]
    truth = cfgmod.build_motional(cfg)
    flop = red = blue = None
    if args.data:
        flop = SidebandScan.from_csv(args.data, "bsb_flop")
    elif not (args.red or args.blue):
        times = cfgmod.grid(th["flop_start_us"], th["flop_stop_us"], th["flop_step_us"])
        flop = simulate_sideband_scan(truth, times, int(th["shots"]), [seed, STREAM_FLOP])
        flop.to_csv(os.path.join(out, "flop_scan.csv"))
    dur = th["line_duration_us"]
    if args.red or args.blue:
        if not (args.red and args.blue):
            raise InputError("--red and --blue must be given together")
        red = SidebandScan.from_csv(args.red, "rsb_line", dur)
        blue = SidebandScan.from_csv(args.blue, "bsb_line", dur)
    elif not args.data:
        span = th["line_span_rad_per_us"]
        det = np.linspace(-span, span, int(th["line_points"]))
        red = simulate_sideband_scan(truth, det, int(th["shots"]), [seed, STREAM_RED],
                                     "rsb_line", dur)
        blue = simulate_sideband_scan(truth, det, int(th["shots"]), [seed, STREAM_BLUE],
                                      "bsb_line", dur)
        red.to_csv(os.path.join(out, "rsb_line.csv"))
        blue.to_csv(os.path.join(out, "bsb_line.csv"))
    return flop, red, blue, (None if args.data or args.red else truth)


def cmd_thermometry(cfg, args, out, warnings):
    th = cfg["thermometry"]
    flop, red, blue, truth = _thermometry_scans(cfg, args, out)
    params, metrics, cov = {}, {}, None
    n_flop = n_flop_sigma = None
    if flop is not None:
        initial = MotionalParams(0.5, 0.0, 0.001, th["eta"], th["omega0_rad_per_us"])
        fitted, res = fit_flop(flop, initial, th["model"], tuple(th["fixed"]))
        if not res.converged:
            warnings.append(f"flop fit did not converge: {res.message}")
        cond = condition_number(res)
        if cond > 1e10:
            warnings.append(f"flop fit nearly degenerate (covariance condition {cond:.3g})")
        errors = res.errors
        params.update(n_th=fitted.n_th, alpha_abs=abs(fitted.alpha), n_coh=fitted.n_coh,
                      gamma_per_us=fitted.gamma, omega0_rad_per_us=fitted.omega0, eta=fitted.eta)
        metrics.update(flop_reduced_chi2=res.reduced_chi2, flop_converged=res.converged,
                       flop_condition_number=cond, n_th_sigma=errors[0],
                       n_coh_sigma=2 * abs(fitted.alpha) * errors[1])
        cov = _cov_dict(("n_th", "alpha_abs", "gamma_per_us", "omega0_rad_per_us"),
                        res.covariance)
        n_flop, n_flop_sigma = fitted.n_th, errors[0]
        write_csv(os.path.join(out, "flop_fit.csv"), ["t_us", "bright_fraction", "sigma", "fit"],
                  [flop.abscissa, flop.bright_fraction, flop.uncertainties,
                   bsb_flop(flop.abscissa, fitted)])
    if red is not None:
        try:
            ratio = fit_sideband_ratio(red, blue)
        except ValueError as exc:
            warnings.append(f"ratio thermometry skipped: {exc}")
        else:
            params.update(sideband_ratio=ratio.ratio, n_bar_ratio=ratio.n_bar)
            metrics.update(sideband_ratio_sigma=ratio.ratio_sigma,
                           n_bar_ratio_sigma=ratio.n_bar_sigma,
                           ratio_converged=ratio.result.converged)
            if n_flop is not None:
                diff = n_flop - ratio.n_bar
                comb = math.hypot(n_flop_sigma, ratio.n_bar_sigma)
                metrics.update(n_bar_difference=diff, n_bar_difference_sigma=comb,
                               routes_agree=bool(abs(diff) <= 2 * comb))
    if truth is not None:
        metrics["truth"] = truth.to_dict()
    return _report("thermometry", params, cov, metrics, cfg, warnings)


def cmd_optimize(cfg, args, out, warnings):
    basis = cfgmod.build_basis(cfg)
    ion = cfgmod.build_ion(cfg)
    wf = _waveform(cfg, basis, args.data)
    c = cfg["compensation"]
    result = optimize_compensation(
        wf, basis, cfgmod.build_filter(cfg), ion, tuple(c["electrode_set"]), c["window_us"],
        tuple(c["amplitude_range"]), tuple(c["frequency_range_hz"]), cfg["waveform"]["dt_us"],
        c["route"], int(c["max_evaluations"]), target=c["target"])
    if not result.converged:
        warnings.append(f"optimizer stopped without converging: {result.message}")
    if result.n_coh_after >= 1.0:
        warnings.append(f"residual excitation {result.n_coh_after:.3g} quanta remains above 1")
    add_compensation(wf, result.pulse).to_csv(os.path.join(out, "compensated_waveform.csv"))
    p = result.pulse
    params = {"amplitude_v": p.amplitude, "frequency_hz": p.frequency, "phase_rad": p.phase,
              "electrode_set": list(p.electrode_set), "window_us": list(p.window)}
    metrics = {"n_coh_before": result.n_coh_before, "n_coh_after": result.n_coh_after,
               "route": result.route, "evaluations": result.evaluations,
               "converged": result.converged, "message": result.message}
    return _report("optimize", params, None, metrics, cfg, warnings)


HANDLERS = {"calibrate": cmd_calibrate, "transport": cmd_transport,
            "reconstruct": cmd_reconstruct, "thermometry": cmd_thermometry,
            "optimize": cmd_optimize}


def build_parser():
    parser = argparse.ArgumentParser(prog="shuttlelab",
                                     description="Fast ion transport simulation and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", ""))
        p.add_argument("--config", help=f"JSON config (default: ${cfgmod.ENV_VAR} or built-ins)")
        p.add_argument("--data", help="measured input CSV instead of a simulated one")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=".", help="output directory")
        if name == "reconstruct":
            p.add_argument("--curve", help="calibration curve JSON from 'calibrate'")
        if name == "thermometry":
            p.add_argument("--red", help="red-sideband lineshape CSV")
            p.add_argument("--blue", help="blue-sideband lineshape CSV")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    warnings: list = []
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise InputError("--seed must be non-negative")
            cfg["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        report = HANDLERS[args.command](cfg, args, args.out, warnings)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"shuttlelab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort handler maps to exit 1
        print(f"shuttlelab {args.command}: internal error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1
    base = os.path.join(args.out, f"{args.command}_report")
    write_json(base + ".json", report)
    write_json(base + ".meta.json", {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "runtime_s": time.perf_counter() - started,
        "version": _version(), "argv": list(sys.argv[1:] if argv is None else argv)})
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {base}.json")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
