"""Command-line front end: ``nzcz <subcommand> [--config run.json] [--out dir] ...``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, config, distortion, rb
from .device import DomainError, ModelValidityError
from .distortion import DistortionError
from .dynamics import NumericalInstabilityError, NoiseModel
from .experiments import ablation, coherence, gate, landscape, sensitivity
from .experiments.oscillation import FitError
from .interferometer import CONVENTIONS, leakage_sweep, oracle_discrepancy, selected_convention
from .metrics import UndefinedPhaseError, gate_metrics
from .pulses import ParametrizationError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_NUMERICAL = 5

NUMERICAL_ERRORS = (NumericalInstabilityError, gate.CalibrationError, FitError, rb.RBFitError,
                    rb.PopulationCalibrationError, UndefinedPhaseError, DomainError, ModelValidityError,
                    ParametrizationError, DistortionError)

COMMANDS = ("pulse", "landscape", "optimize", "sensitivity", "history", "ramz", "rb", "mz", "ablation", "buffer")
HELP = {
    "pulse": "write the gate waveforms",
    "landscape": "scan (theta_f, lambda_2) for phi_2q, leakage and infidelity",
    "optimize": "optimize the strong pulse and calibrate single-qubit phases",
    "sensitivity": "conditional phase versus static flux offset",
    "history": "second-gate phase versus separation from an earlier gate",
    "ramz": "Ram-Z / Echo-Z coherence decays",
    "rb": "leakage-aware interleaved randomized benchmarking",
    "mz": "Mach-Zehnder leakage model sweep",
    "ablation": "gate metrics per noise tier A..E",
    "buffer": "leakage versus buffer between the NZ halves",
}


class Run:
    """Resolved config plus output bookkeeping for one invocation."""

    def __init__(self, command: str, cfg: dict, out: Path, seed: int, jobs: int, tier: str | None):
        self.command, self.cfg, self.out = command, cfg, out
        self.seed, self.jobs, self.tier = seed, jobs, tier
        self.outputs: dict[str, str] = {}
        try:
            self.params = config.resolve_device(cfg)
            self.spec, self.amp_H, self.amp_M = config.resolve_pulse(cfg)
            self.noise = config.resolve_noise(cfg, tier)
        except (ValueError, KeyError) as exc:
            if isinstance(exc, NUMERICAL_ERRORS):
                raise
            raise config.ConfigError(str(exc)) from exc
        self.dt = cfg.get("dt_ns", 0.1) * 1e-9

    def block(self, name: str) -> dict:
        return self.cfg.get(name, {})

    def write_csv(self, name: str, header, rows) -> None:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.outputs[name] = _sha256(path)

    def write_json(self, name: str, data) -> None:
        path = self.out / name
        path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        self.outputs[name] = _sha256(path)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _calibrated(run: Run) -> gate.CalibratedGate:
    """The configured gate, calibrating single-qubit phases at tier A when amplitudes are not given."""
    if run.amp_H is not None or run.amp_M is not None:
        m = gate_metrics(gate.simulate_gate(run.params, run.spec, None, run.amp_H, run.amp_M, dt=run.dt))
        return gate.CalibratedGate(run.spec, run.amp_H or 0.0, run.amp_M or 0.0, m, "given")
    if run.spec.t_1q <= 0:
        m = gate_metrics(gate.simulate_gate(run.params, run.spec, None, dt=run.dt))
        return gate.CalibratedGate(run.spec, 0.0, 0.0, m, "uncorrected")
    cal = gate.calibrate_single_qubit_phases(run.params, run.spec, dt=run.dt)
    return gate.CalibratedGate(run.spec, cal.amp_H, cal.amp_M, cal.after, "A")


# -- subcommands ------------------------------------------------------------------------

def cmd_pulse(run: Run) -> dict:
    g = gate.gate_waveforms(run.params, run.spec, run.amp_H, run.amp_M)
    fm = g.flux_M.samples if g.flux_M is not None else np.zeros(len(g.flux_H))
    fm = np.concatenate([fm, np.zeros(len(g.flux_H) - len(fm))])
    run.write_csv("pulse.csv", ["t_ns", "flux_H", "flux_M"],
                  zip(g.flux_H.times * 1e9, g.flux_H.samples, fm))
    return {"spec": run.spec.to_dict(), "n_samples": len(g.flux_H), "duration_ns": g.flux_H.duration * 1e9,
            "area_phi0_ns": g.flux_H.area() * 1e9, "rest_flux": g.flux_H.rest}


def cmd_landscape(run: Run) -> dict:
    b = run.block("landscape")
    if not b:
        raise config.ConfigError("landscape: block missing from config")
    th = config.resolve_range(b["theta_f_deg"])
    lam = config.resolve_range(b["lambda_2"])
    s = run.spec
    res = landscape.landscape_scan(run.params, th, lam, s.t_2q, s.t_1q, run.noise, b.get("estimator", "exact"),
                                   s.shape, s.sampling_rate, s.buffer, run.dt, run.jobs)
    run.write_csv("landscape.csv", landscape.COLUMNS, res.rows())
    l1 = res.leakage_l1[np.isfinite(res.leakage_l1)]
    return {"meta": res.meta, "n_points": int(res.leakage_l1.size), "n_errors": len(res.errors),
            "min_leakage_l1": float(l1.min()) if l1.size else None}


def cmd_optimize(run: Run) -> dict:
    b = run.block("optimize")
    bounds = (tuple(b.get("theta_f_deg_bounds", (80.0, 130.0))), tuple(b.get("lambda_2_bounds", (0.0, 0.6))))
    s = run.spec
    opt = gate.optimize_pulse(run.params, s.t_2q, run.noise, bounds, s.t_1q, s.shape,
                              tuple(b.get("grid_step", (2.0, 0.05))), b.get("refine", True), run.dt, s.sampling_rate)
    run.write_csv("optimize_grid.csv", ["theta_f_deg", "lambda_2", "cost", "phi_2q_deg", "leakage_l1"], opt.grid)
    out = {"spec": opt.spec.to_dict(), "metrics": opt.metrics.to_dict(), "cost": opt.cost,
           "n_evaluations": opt.n_evaluations}
    if b.get("calibrate", True) and s.t_1q > 0:
        cal = gate.calibrate_single_qubit_phases(run.params, opt.spec, run.noise, dt=run.dt)
        out["calibration"] = {"amp_H": cal.amp_H, "amp_M": cal.amp_M, "after": cal.after.to_dict(),
                              "delta_phi_2q_deg": float(np.rad2deg(cal.delta_phi_2q)), "delta_l1": cal.delta_l1}
    return out


def cmd_sensitivity(run: Run) -> dict:
    offs = config.resolve_range(run.block("sensitivity").get("offsets_mPhi0", [-1, -0.5, 0, 0.5, 1])) * 1e-3
    r = sensitivity.dc_offset_sensitivity(run.params, run.spec, offs, run.noise, run.amp_H, run.amp_M, run.dt)
    run.write_csv("sensitivity.csv", ["offset_mPhi0", "phi_2q_deg"], zip(r.offsets * 1e3, r.phi_2q_deg))
    return {"shape": run.spec.shape, "linear_deg_per_phi0": r.linear, "quadratic_deg_per_phi0_sq": r.quadratic,
            "phi_2q_at_zero_deg": float(r.coefficients[2])}


def cmd_history(run: Run) -> dict:
    b = run.block("history")
    ts = config.resolve_range(b.get("t_sep_ns", [100, 300, 1000, 3000, 10000])) * 1e-9
    dt_wave = 1.0 / run.spec.sampling_rate
    if b.get("line", "residual") == "raw_line":
        kernel, kid = distortion.synthetic_raw_line(dt_wave), "synthetic_raw_line"
    else:
        kernel, kid = config.resolve_kernel(run.cfg, dt_wave)
    r = sensitivity.history_dependence(run.params, run.spec, ts, kernel, dt=run.dt, label=kid)
    run.write_csv("history.csv", ["t_sep_ns", "phi_01_deg", "deviation_deg"],
                  zip(r.t_sep * 1e9, r.phi_01_deg, r.deviation_deg))
    return {"kernel": kid, "shape": run.spec.shape, "reference_phi_01_deg": r.reference_deg,
            "spread_deg": r.spread_deg}


def cmd_ramz(run: Run) -> dict:
    b = run.block("ramz")
    if not b:
        raise config.ConfigError("ramz: block missing from config")
    dets = config.resolve_range(b["detunings_MHz"]) * 1e6
    durs = config.resolve_range(b["durations_us"]) * 1e-6
    sigma = b.get("sigma_uPhi0", run.noise.sigma(run.params) * 1e6) * 1e-6
    kinds = ("ramz", "echoz") if b.get("kind", "both") == "both" else (b["kind"],)
    rows, summary = [], {"sigma_uPhi0": sigma * 1e6}
    for k in kinds:
        d = coherence.ramz_echoz(run.params, dets, durs, k, sigma, b.get("shots"), run.seed)
        rows += [(kind, det, t * 1e9, c) for kind, det, t, c in d.rows()]
        summary[k] = {"detunings_MHz": dets / 1e6, "T_us": d.times * 1e6, "T_err_us": d.time_errors * 1e6,
                      "fit_failures": list(d.fit_errors)}
        if k == "ramz" and b.get("fit_sigma", False):
            summary["fitted_sigma_uPhi0"] = coherence.fit_sigma(d, run.params) * 1e6
    run.write_csv("ramz.csv", ["kind", "detuning_hz", "duration_ns", "coherence"], rows)
    return summary


def cmd_rb(run: Run) -> dict:
    b = run.block("rb")
    lengths = b.get("lengths", [2, 4, 8, 16, 32, 64, 128, 256])
    if "depolarizing_p" in b:
        cz, source = rb.depolarized_cz(b["depolarizing_p"]), f"depolarizing p={b['depolarizing_p']}"
    else:
        g = _calibrated(run)
        cz, source = g.simulate(run.params, run.noise, dt=run.dt), f"simulated tier {run.noise.tier}"
    data = rb.run_rb(cz, lengths, b.get("n_seeds", 50), b.get("interleaved", True), run.seed, run.jobs)
    data.to_csv(run.out / "rb.csv")
    run.outputs["rb.csv"] = _sha256(run.out / "rb.csv")
    out = {"source": source, "summary": rb.summary(data)}
    if "depolarizing_p" not in b:
        m = gate_metrics(cz)
        out["direct"] = {"infidelity": m.infidelity_eps, "leakage_l1": m.leakage_l1}
    if b.get("bootstrap", 0):
        out["bootstrap_std"] = rb.bootstrap(data, b["bootstrap"], run.seed)
    return out


def cmd_mz(run: Run) -> dict:
    b = run.block("mz")
    conv = b.get("convention", "auto")
    conv = selected_convention() if conv == "auto" else conv
    pt = config.resolve_range(b.get("phi_tilde", {"start": 0, "stop": 4 * np.pi, "num": 81}))
    rows = leakage_sweep(b.get("alpha", 0.3), b.get("phi_half", 0.0), pt, conv)
    run.write_csv("mz.csv", ["phi_tilde", "leakage_l1", "phi_2q"], rows)
    return {"convention": conv, "oracle_discrepancy": {c: oracle_discrepancy(c) for c in CONVENTIONS}}


def cmd_ablation(run: Run) -> dict:
    b = run.block("ablation")
    tiers = tuple(b.get("tiers", ["A", "B", "C", "D", "E"]))
    g = _calibrated(run)
    g_dist = None
    if "E" in tiers and b.get("recalibrate_distorted", True):
        s = run.spec
        nd = NoiseModel(tier="A", distortions=True, kernel=run.noise.kernel, kernel_id=run.noise.kernel_id)
        g_dist = gate.calibrated_gate(run.params, s.t_2q, s.t_1q, nd, shape=s.shape, dt=run.dt)
    kw = {"kernel": run.noise.kernel, "kernel_id": run.noise.kernel_id, "n_quadrature": run.noise.n_quadrature,
          "sigma_flux": run.noise.sigma_flux}
    r = ablation.ablation(run.params, g, tiers, g_dist, dt=run.dt, **kw)
    run.write_csv("ablation.csv", ["tier", "infidelity", "infidelity_pc", "leakage_l1", "phi_2q_deg"], r.rows())
    out = {"tiers": list(r.tiers), "metrics": {t: m.to_dict() for t, m in r.by_tier().items()},
           "gate": {"spec": g.spec.to_dict(), "amp_H": g.amp_H, "amp_M": g.amp_M}}
    if g_dist is not None:
        out["distorted_gate"] = {"spec": g_dist.spec.to_dict(), "amp_H": g_dist.amp_H, "amp_M": g_dist.amp_M}
    return out


def cmd_buffer(run: Run) -> dict:
    b = run.block("buffer")
    bufs = config.resolve_range(b.get("buffers_ns", {"start": 0, "stop": 4, "step": 0.1})) * 1e-9
    r = landscape.buffer_sweep(run.params, run.spec, bufs, run.noise, run.dt)
    run.write_csv("buffer.csv", ["buffer_ns", "leakage_l1", "phi_2q_deg"],
                  zip(r.buffers * 1e9, r.leakage_l1, r.phi_2q_deg))
    return {"period_ns": r.period * 1e9, "period_err_ns": r.period_error * 1e9,
            "expected_period_ns": r.expected_period * 1e9, "minima_ns": r.minima * 1e9}


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# -- entry point --------------------------------------------------------------------------

def _parse_set(items) -> list[tuple[list[str], object]]:
    out = []
    for item in items or ():
        if "=" not in item:
            raise config.ConfigError(f"--set expects key.path=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        out.append((key.split("."), val))
    return out


def _apply_set(cfg: dict, overrides) -> dict:
    for path, val in overrides:
        d = cfg
        for k in path[:-1]:
            d = d.setdefault(k, {})
            if not isinstance(d, dict):
                raise config.ConfigError(f"--set {'.'.join(path)}: {k} is not an object")
        d[path[-1]] = val
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nzcz", description=__doc__)
    ap.add_argument("--version", action="version", version=f"nzcz {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help=f"run config JSON (default: ${config.CONFIG_ENV})")
        p.add_argument("--out", help="output directory (default: config 'output' or ./out/<command>)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
        p.add_argument("--tier", choices=("A", "B", "C", "D", "E"), help="noise tier (overrides config)")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config entry; VALUE is parsed as JSON when possible")
    return ap


def _error_payload(exc: BaseException, code: int) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code}


def _classify(exc: BaseException) -> int:
    if isinstance(exc, (config.ConfigError, jsonschema.ValidationError)):
        return EXIT_CONFIG
    if isinstance(exc, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_INTERNAL


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if not exc.code else EXIT_USAGE
    out_dir = None
    try:
        path = config.find_config(args.config)
        cfg = config.load_config(path)
        base = cfg.pop("_base", None)
        cfg = _apply_set(cfg, _parse_set(args.set))
        config.validate(cfg)
        if base:
            cfg["_base"] = base
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        jobs = args.jobs or os.cpu_count() or 1
        out_dir = Path(args.out or cfg.get("output") or Path("out") / args.command)
        out_dir.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out_dir, seed, jobs, args.tier)
        summary = HANDLERS[args.command](run)
        summary = {"command": args.command, "tier": run.noise.tier, **summary}
        run.write_json(f"{args.command}_summary.json", summary)
        clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
        manifest = {
            "command": args.command,
            "config": clean,
            "config_hash": config.config_hash(cfg),
            "seed": seed,
            "tier": run.noise.tier,
            "versions": {"nzcz": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "outputs": dict(sorted(run.outputs.items())),
        }
        (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
        print(json.dumps({"status": "ok", "out": str(out_dir), "outputs": sorted(run.outputs)}))
        return EXIT_OK
    except Exception as exc:  # top-level: every failure becomes machine-readable
        code = _classify(exc)
        payload = _error_payload(exc, code)
        print(json.dumps(payload), file=sys.stderr)
        if out_dir is not None:
            try:
                (out_dir / "error.json").write_text(json.dumps(payload, indent=2) + "\n")
            except OSError:
                pass
        return code


if __name__ == "__main__":
    sys.exit(main())
