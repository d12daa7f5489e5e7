"""Command-line pipelines.

Every command reads one JSON config (``--config``), writes into an existing
output directory (``--out`` or ``output_path``) and is a pure function of
its inputs and seed::

    spinblockade simulate --config run.json --out results --seed 7
    spinblockade analyze  --config run.json --out results

Exit status is 0 on success, 1 for invalid input, 2 when a computation
fails and 3 for file-system errors.
"""

import argparse
import dataclasses
import hashlib
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .calibration import ScaleFactorInputs, fit_lever_arm, scale_factor
from .core_model import ModelParams
from .errors import SpinBlockadeError, ValidationError
from .fitting import DEFAULT_FREE, default_config, fit
from .funnel import G_MU_B_DEFAULT, extract_peaks, fit_funnel
from .lindblad import broadened_profile, effective_tc
from .noise import FilterSpec, NoiseSource, total_budget
from .simulator import Histogram2D, RelaxationSpec, SweepSpec, histogram, simulate_shots
from .uncertainty import ConfidenceSpec, propagate_errors

SCHEMA_VERSION = 1
COMMANDS = ("simulate", "analyze", "sweep", "lindblad", "noise", "lever-arm", "funnel")
SWEEP_HEADER = ("sweep_value", "delta_sb_ueV", "ci_low", "ci_high", "status")
_MISSING = object()


# Config helpers -----------------------------------------------------------------


def _bad(where, message):
    return ValidationError(f"config.{where}: {message}", code=f"cli.config.{where}")


def _block(cfg, name, required=False):
    value = cfg.get(name, _MISSING)
    if value is _MISSING:
        if required:
            raise _bad(name, "section is required")
        return {}
    if not isinstance(value, dict):
        raise _bad(name, "must be an object")
    return value


def _get(block, key, where, default=_MISSING, kind=float):
    value = block.get(key, default)
    if value is _MISSING:
        raise _bad(f"{where}.{key}", "is required")
    if value is None or kind is None:
        return value
    try:
        if kind is int and float(value) != int(value):
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise _bad(f"{where}.{key}", f"expected {kind.__name__}, got {value!r}") from None


def _grid(value, where):
    """A list of values or ``{"start", "stop", "num"}``."""
    if isinstance(value, dict):
        start = _get(value, "start", where)
        stop = _get(value, "stop", where)
        num = _get(value, "num", where, kind=int)
        if num < 1:
            raise _bad(f"{where}.num", "must be >= 1")
        return np.linspace(start, stop, num).tolist()
    if isinstance(value, list) and value:
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise _bad(where, "entries must be numbers") from None
    raise _bad(where, "expected a non-empty list or {start, stop, num}")


def load_config(path, seed=None, out=None):
    """Read a config file and apply command-line overrides."""
    cfg = io.read_json(path)
    if not isinstance(cfg, dict):
        raise _bad("root", "must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise _bad("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    if seed is not None:
        cfg["rng_seed"] = seed
    if out is not None:
        cfg["output_path"] = str(out)
    seed_value = _get(cfg, "rng_seed", "root", default=0, kind=int)
    if not 0 <= seed_value < 2**64:
        raise _bad("rng_seed", "must be an unsigned 64-bit integer")
    cfg["rng_seed"] = seed_value
    if not isinstance(cfg.get("output_path"), str):
        raise _bad("output_path", "is required (or pass --out)")
    return cfg


def config_hash(cfg):
    return hashlib.sha256(io.dumps(cfg).encode()).hexdigest()


def file_hash(path):
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise io.DataIOError(f"cannot read {path}: {exc.strerror}", code="io.read_failed") from exc


def _model(cfg):
    block = _block(cfg, "model")
    try:
        params = ModelParams.from_dict(block)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpinBlockadeError):
            raise
        raise _bad("model", str(exc)) from None
    return params.validate(allow_noiseless=True)


def _sweep_spec(cfg, seed):
    block = _block(cfg, "sweep", required=True)
    grid = _grid(block.get("detuning_grid"), "sweep.detuning_grid")
    return SweepSpec(
        detuning_grid=tuple(grid),
        shots_per_point=_get(block, "shots_per_point", "sweep", kind=int),
        boundary_sign=_get(block, "boundary_sign", "sweep", default=1, kind=int),
        rng_seed=seed,
    ).validate()


def _relaxation(cfg):
    block = _block(cfg, "relaxation")
    return RelaxationSpec(
        t1=_get(block, "t1", "relaxation", default=100.0),
        t_meas=_get(block, "t_meas", "relaxation", default=6.25),
        enabled=bool(block.get("enabled", False)),
    ).validate()


def _current_bins(cfg):
    return _get(_block(cfg, "histogram"), "current_bins", "histogram", default=60, kind=int)


def _boundary_sign(cfg):
    sign = _get(_block(cfg, "sweep"), "boundary_sign", "sweep", default=1, kind=int)
    if sign not in (1, -1):
        raise _bad("sweep.boundary_sign", "must be +1 or -1")
    return sign


def _out_dir(cfg):
    out = Path(cfg["output_path"])
    if not out.is_dir():
        raise io.DataIOError(f"output directory does not exist: {out}", code="io.missing_directory")
    return out


# Shared analysis ------------------------------------------------------------------


def mirror_shots(shots):
    """Reflect the detuning axis so a (0,2)-(1,1) boundary reads like (2,0)-(1,1)."""
    spec = dataclasses.replace(
        shots.spec,
        detuning_grid=tuple(-e for e in shots.spec.detuning_grid),
        boundary_sign=-shots.spec.boundary_sign,
    )
    return dataclasses.replace(shots, detuning=-shots.detuning, spec=spec)


def mirror_histogram(hist):
    return Histogram2D(
        detuning_edges=-hist.detuning_edges[::-1],
        current_edges=hist.current_edges,
        counts=hist.counts[::-1].copy(),
    )


def _histogram_for_analysis(shots, bins):
    # binning must not depend on simulator metadata, so that a file on disk
    # and the in-memory matrix it came from give the same histogram
    return histogram(dataclasses.replace(shots, params_used=None), bins)


def _noise_block(block):
    sources = []
    for i, item in enumerate(block.get("sources") or []):
        where = f"noise_budget.sources[{i}]"
        if not isinstance(item, dict):
            raise _bad(where, "must be an object")
        sources.append(
            NoiseSource(
                kind=str(item.get("kind")),
                voltage_density=_get(item, "voltage_density", where, default=None),
                gate_referred_density=_get(item, "gate_referred_density", where, default=None),
                params={k: float(v) for k, v in (item.get("params") or {}).items()},
                name=item.get("name"),
            )
        )
    f = _block(block, "filter")
    filt = FilterSpec(
        shape=str(f.get("shape", "differential_boxcar")),
        integration_time=_get(f, "integration_time", "noise_budget.filter", default=6.25),
        low_cutoff=_get(f, "low_cutoff", "noise_budget.filter", default=None),
        separation=_get(f, "separation", "noise_budget.filter", default=None),
        enbw=_get(f, "enbw", "noise_budget.filter", default=None),
    )
    shunt_r = _get(block, "shunt_r", "noise_budget", default=2e4)
    return total_budget(sources, filt, shunt_r=shunt_r)


def _lever_arms(block):
    results = {}
    for label, path in sorted((block.get("temperature_sweeps") or {}).items()):
        results[label] = fit_lever_arm(io.read_temperature_sweep(path, gate_label=label))
    return results


def _scale_inputs(block, arms):
    def alpha(key, label):
        if key in block:
            return _get(block, key, "calibration")
        if label in arms:
            return arms[label].alpha
        raise _bad(f"calibration.{key}", f"is required (or give temperature_sweeps.{label})")

    return ScaleFactorInputs(
        alpha_p1=alpha("alpha_p1", "P1"),
        alpha_p2=alpha("alpha_p2", "P2"),
        g_p1_p2=_get(block, "g_p1_p2", "calibration", default=0.0),
        g_p2_p1=_get(block, "g_p2_p1", "calibration", default=0.0),
        sweep_ratio=_get(block, "sweep_ratio", "calibration", default=0.0),
    )


def analyze_histogram(hist, cfg):
    """Fit, interval, calibration and noise budget for one histogram."""
    fblock = _block(cfg, "fit")
    kbte = _get(fblock, "kbte", "fit", default=None)
    free = fblock.get("free")
    if free is None:
        free = DEFAULT_FREE if kbte is not None else DEFAULT_FREE | {"electron_temp_energy"}
    options = {}
    for key, kind in (("weight_mode", str), ("tie_tunnel_couplings", bool), ("max_iterations", int)):
        if key in fblock:
            options[key] = _get(fblock, key, "fit", kind=kind)
    config = default_config(hist, kbte, free=free, **options)
    with warnings.catch_warnings():
        # degeneracy warnings are recorded on the result
        warnings.simplefilter("ignore")
        result = fit(hist, config)
    est = result.estimate

    ublock = _block(cfg, "uncertainty")
    column_shots = int(np.median(hist.counts.sum(axis=1)))
    spec = ConfidenceSpec(
        confidence=_get(ublock, "confidence", "uncertainty", default=0.95),
        shots=_get(ublock, "shots", "uncertainty", default=column_shots, kind=int),
    )
    report = propagate_errors(
        est,
        spec,
        d_lambda=_get(ublock, "d_lambda", "uncertainty", default=0.0),
        d_p_singlet=_get(ublock, "d_p_singlet", "uncertainty", default=0.0),
        d_sigma=_get(ublock, "d_sigma", "uncertainty", default=0.0),
        delta_sb=est.delta_sb,
    )
    fit_json = result.to_dict()
    fit_json["uncertainty"] = report.to_dict()

    summary = {
        "ueV": est.delta_sb,
        "stderr_ueV": result.stderr("delta_sb"),
        "interval_ueV": report.delta_interval,
        "ci_low_ueV": est.delta_sb - report.delta_interval,
        "ci_high_ueV": est.delta_sb + report.delta_interval,
        "confidence": spec.confidence,
        "V": None,
        "interval_V": None,
    }

    calibration = None
    cblock = _block(cfg, "calibration")
    if cblock:
        arms = _lever_arms(cblock)
        factor = scale_factor(_scale_inputs(cblock, arms))
        summary["V"] = est.delta_sb * 1e-6 / factor
        summary["interval_V"] = report.delta_interval * 1e-6 / factor
        calibration = {
            "lever_arms": {k: v.to_dict() for k, v in arms.items()},
            "scale_factor_eV_per_V": factor,
        }

    noise_budget = None
    nblock = _block(cfg, "noise_budget")
    if nblock:
        budget = _noise_block(nblock)
        noise_budget = budget.to_dict()
        noise_budget["fitted_sigma_pA"] = est.current_sigma

    return {
        "schema_version": SCHEMA_VERSION,
        "delta_sb": summary,
        "fit": fit_json,
        "calibration": calibration,
        "noise_budget": noise_budget,
    }


# Commands ---------------------------------------------------------------------------


def cmd_simulate(cfg, oracle=False, workers=1):
    out = _out_dir(cfg)
    spec = _sweep_spec(cfg, cfg["rng_seed"])
    params = _model(cfg)
    shots = simulate_shots(spec, params, _relaxation(cfg), workers=workers)
    hist = _histogram_for_analysis(shots, _current_bins(cfg))
    io.write_shots(out / "shots.csv", shots)
    io.write_histogram(out / "histogram.csv", hist)
    files = ["histogram.csv", "histogram.json", "shots.csv"]
    if oracle:
        io.write_oracle(out / "shots_oracle.csv", shots)
        files.append("shots_oracle.csv")
    manifest = {
        "command": "simulate",
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "rng_seed": cfg["rng_seed"],
        "version": __version__,
        "records": len(shots),
        "files": {name: file_hash(out / name) for name in sorted(files)},
    }
    io.write_json(out / "manifest.json", manifest)
    return manifest


def _analysis_input(cfg, out):
    block = _block(cfg, "input")
    sign = _boundary_sign(cfg)
    if "histogram" in block:
        path = Path(block["histogram"])
        hist = io.read_histogram(path)
        return (mirror_histogram(hist) if sign == -1 else hist), path
    path = Path(block.get("shots", out / "shots.csv"))
    shots = io.read_shots(path)
    if sign == -1:
        shots = mirror_shots(shots)
    return _histogram_for_analysis(shots, _current_bins(cfg)), path


def cmd_analyze(cfg):
    out = _out_dir(cfg)
    hist, path = _analysis_input(cfg, out)
    result = analyze_histogram(hist, cfg)
    result["boundary_sign"] = _boundary_sign(cfg)
    result["input_sha256"] = file_hash(path)
    result["config_sha256"] = config_hash(cfg)
    result["version"] = __version__
    io.write_json(out / "analysis.json", result)
    return result


def cmd_sweep(cfg, workers=1):
    """Simulate and analyse one dataset per value of a model parameter.

    Point ``i`` uses seed ``rng_seed + i``.  Failing points are recorded with
    their error code and the sweep carries on.
    """
    out = _out_dir(cfg)
    block = _block(cfg, "sweep_parameter", required=True)
    name = block.get("name")
    if name not in ModelParams.names():
        raise _bad("sweep_parameter.name", f"unknown model parameter {name!r}")
    values = _grid(block.get("values"), "sweep_parameter.values")
    base = _model(cfg)
    relax = _relaxation(cfg)
    bins = _current_bins(cfg)
    rows, details = [], []
    for i, value in enumerate(values):
        seed = (cfg["rng_seed"] + i) % 2**64
        try:
            params = base.replace(**{name: value}).validate(allow_noiseless=True)
            spec = _sweep_spec(cfg, seed)
            shots = simulate_shots(spec, params, relax, workers=workers)
            if spec.boundary_sign == -1:
                shots = mirror_shots(shots)
            res = analyze_histogram(_histogram_for_analysis(shots, bins), cfg)
            d = res["delta_sb"]
            rows.append((float(value), d["ueV"], d["ci_low_ueV"], d["ci_high_ueV"], "ok"))
            details.append({"sweep_value": value, "seed": seed, "status": "ok", "delta_sb": d})
        except SpinBlockadeError as exc:
            status = f"failed: {exc.code}: {exc}"
            rows.append((float(value), float("nan"), float("nan"), float("nan"), status))
            details.append({"sweep_value": value, "seed": seed, "status": status, "delta_sb": None})
    io.write_rows(out / "sweep.csv", SWEEP_HEADER, rows)
    summary = {
        "command": "sweep",
        "parameter": name,
        "config_sha256": config_hash(cfg),
        "version": __version__,
        "points": details,
    }
    io.write_json(out / "sweep.json", summary)
    return summary


def cmd_lindblad(cfg):
    out = _out_dir(cfg)
    block = _block(cfg, "lindblad", required=True)
    grid = _grid(block.get("detuning_grid"), "lindblad.detuning_grid")
    tc = _get(block, "tc", "lindblad")
    kbte = _get(block, "kbte", "lindblad")
    gamma = _get(block, "gamma", "lindblad")
    i_amp = _get(block, "i_amp", "lindblad", default=1.0)
    ratios = _grid(block.get("kappa_over_gamma", [0.0]), "lindblad.kappa_over_gamma")
    rows, profiles = [], []
    for i, r in enumerate(ratios):
        p20 = broadened_profile(grid, tc, kbte, gamma, r * gamma)
        name = f"profile_{i:02d}.csv"
        io.write_profile(out / name, grid, p20)
        t_eff = effective_tc(grid, p20, i_amp, kbte, tc0=tc)
        rows.append((float(r), float(r * gamma), t_eff, t_eff / tc))
        profiles.append({"kappa_over_gamma": r, "file": name, "effective_tc_ueV": t_eff})
    io.write_rows(out / "effective_tc.csv", ("kappa_over_gamma", "kappa_per_us", "effective_tc_ueV", "ratio"), rows)
    summary = {"command": "lindblad", "tc_ueV": tc, "kbte_ueV": kbte, "gamma_per_us": gamma, "profiles": profiles}
    io.write_json(out / "lindblad.json", summary)
    return summary


def cmd_noise(cfg):
    out = _out_dir(cfg)
    budget = _noise_block(_block(cfg, "noise_budget", required=True)).to_dict()
    io.write_json(out / "noise_budget.json", budget)
    return budget


def cmd_lever_arm(cfg):
    out = _out_dir(cfg)
    block = _block(cfg, "calibration", required=True)
    arms = _lever_arms(block)
    result = {"lever_arms": {k: v.to_dict() for k, v in arms.items()}, "scale_factor_eV_per_V": None}
    try:
        inputs = _scale_inputs(block, arms)
    except ValidationError:
        if not arms:
            raise
        inputs = None
    if inputs is not None:
        result["scale_factor_eV_per_V"] = scale_factor(inputs)
    io.write_json(out / "lever_arm.json", result)
    return result


def cmd_funnel(cfg):
    out = _out_dir(cfg)
    block = _block(cfg, "funnel", required=True)
    fmap = io.read_funnel_map(_get(block, "map", "funnel", kind=str))
    g_mu_b = _get(block, "g_mu_b", "funnel", default=G_MU_B_DEFAULT)
    peaks = extract_peaks(fmap)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = fit_funnel(peaks, g_mu_b)
    io.write_rows(out / "peaks.csv", ("b_uT", "epsilon_ueV", "stderr_ueV"), peaks.peaks)
    summary = {
        "fit": result.to_dict(),
        "peaks": len(peaks.peaks),
        "skipped": [{"b_uT": b, "reason": why} for b, why in peaks.skipped],
        "warnings": [str(w.message) for w in caught],
    }
    io.write_json(out / "funnel.json", summary)
    return summary


# Entry point --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are invalid input, not a computation failure
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="spinblockade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override rng_seed")
        p.add_argument("--out", default=None, help="existing output directory (overrides output_path)")
        p.add_argument("--workers", type=int, default=1, help="threads for shot generation")
        if name == "simulate":
            p.add_argument("--oracle", action="store_true", help="also write the true branch of every shot")
    return parser


def run(args):
    cfg = load_config(args.config, seed=args.seed, out=args.out)
    if args.workers < 1:
        raise _bad("workers", "must be >= 1")
    if args.command == "simulate":
        return cmd_simulate(cfg, oracle=args.oracle, workers=args.workers)
    if args.command == "sweep":
        return cmd_sweep(cfg, workers=args.workers)
    return {
        "analyze": cmd_analyze,
        "lindblad": cmd_lindblad,
        "noise": cmd_noise,
        "lever-arm": cmd_lever_arm,
        "funnel": cmd_funnel,
    }[args.command](cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except SpinBlockadeError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
