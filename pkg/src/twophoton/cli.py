"""Command-line front end.

Every command writes its results plus a ``manifest.json`` into the output
directory. Frequencies on the command line and in files are plain Hz (Δ/2π).
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import re
import sys
import warnings
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import (
    ExperimentConfig,
    RunManifest,
    angular_to_hz,
    config_sections,
    hz_to_angular,
    load_config,
)
from .errors import ConfigError, NumericalError
from .estimation import (
    estimate_baseline,
    mle_fit_contrast,
    read_histogram,
    synth_histogram,
    write_histogram,
)
from .matching import find_matching_n, fringe_scan, matched_ratio, visibility
from .model import (
    FAST_FREQUENCY_GRID,
    TwoPhotonState,
    coherent_pair_amplitude,
    g2_of_tau,
    phi_at_delays,
    phi_ensemble_time,
    principal_angle,
)
from .montecarlo import AVERAGING_MODES, ImperfectionConfig, averaged_fringe, sigma_family, visibility_vs_sigma
from .saturation import fit_saturation, read_saturation_csv, transmission_saturated

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _num(x) -> str:
    """Shortest round-tripping text for a float; ``nan`` for missing values."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _write_json(path: Path, record: dict) -> Path:
    path.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    return path


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out if args.out is not None else cfg.output_path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _detunings(args) -> np.ndarray:
    """Angular detunings from ``--detunings-hz`` or ``--range-hz``."""
    if args.detunings_hz is not None and args.range_hz is not None:
        raise ConfigError("give either --detunings-hz or --range-hz, not both")
    if args.detunings_hz is not None:
        try:
            hz = [float(v) for v in args.detunings_hz.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--detunings-hz: {exc}") from None
        if not hz:
            raise ConfigError("--detunings-hz is empty")
    elif args.range_hz is not None:
        parts = args.range_hz.split(",")
        try:
            if len(parts) != 3:
                raise ValueError(f"expected START,STOP,COUNT, got {args.range_hz!r}")
            start, stop, count = float(parts[0]), float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ConfigError(f"--range-hz: {exc}") from None
        if count != int(count) or count < 1:
            raise ConfigError("--range-hz COUNT must be a positive integer")
        hz = np.linspace(start, stop, int(count))
    else:
        raise ConfigError("a detuning scan needs --detunings-hz or --range-hz")
    return np.array([hz_to_angular(h) for h in hz])


def _manifest(args, cfg: ExperimentConfig, seeds=None) -> RunManifest:
    skip = {"func", "config", "out", "seed"}
    arguments = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return RunManifest(
        command=args.command,
        config=config_sections(cfg),
        seeds=seeds or {},
        arguments=arguments,
    )


def _finish(manifest: RunManifest, out: Path, paths: List[Path]) -> None:
    for p in paths:
        manifest.add_output(p)
    manifest.write(out)
    for p in paths:
        print(p)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_g2(args, cfg: ExperimentConfig) -> int:
    drive = cfg.drive
    if args.match:
        n = find_matching_n(cfg.params, drive.detuning, args.tau_star).n_match
        drive = dataclasses.replace(drive, atom_number=n)
    state = phi_ensemble_time(cfg.params, drive, cfg.grid)
    g2 = g2_of_tau(state)
    amp = complex(state.coherent_amp)
    with np.errstate(invalid="ignore", divide="ignore"):
        dphi = np.where(np.abs(state.phi_tau) > 0, principal_angle(np.angle(state.phi_tau / amp)), np.nan)
    out = _out_dir(args, cfg)
    path = _write_csv(
        out / "g2.csv",
        ["tau_seconds", "g2", "phi_real", "phi_imag", "delta_phi"],
        zip(state.taus, g2, state.phi_tau.real, state.phi_tau.imag, dphi),
    )
    m = _manifest(args, cfg)
    m.arguments["atom_number_used"] = float(drive.atom_number)
    _finish(m, out, [path])
    return EXIT_OK


def cmd_fringe(args, cfg: ExperimentConfig) -> int:
    detunings = _detunings(args)
    points = fringe_scan(cfg.params, detunings, args.tau_star)
    out = _out_dir(args, cfg)
    path = _write_csv(
        out / "fringe.csv",
        ["detuning_hz", "n_match", "delta_phi_unwrapped", "g2"],
        ((angular_to_hz(p.detuning), p.n_match, p.phase_unwrapped, p.g2_at_tau_star) for p in points),
    )
    m = _manifest(args, cfg)
    m.warnings = [f"detuning_hz={_num(angular_to_hz(p.detuning))}: {p.error}" for p in points if not p.ok]
    _finish(m, out, [path])
    return EXIT_OK


def cmd_match(args, cfg: ExperimentConfig) -> int:
    detuning = hz_to_angular(args.detuning_hz) if args.detuning_hz is not None else cfg.drive.detuning
    mp, ratio = matched_ratio(cfg.params, detuning, args.tau_star)
    record = {
        "detuning_hz": angular_to_hz(mp.detuning),
        "tau_star_seconds": mp.tau_star,
        "n_match": mp.n_match,
        "eta_residual": mp.residual,
        "delta_phi": float(principal_angle(math.atan2(ratio.imag, ratio.real))),
        "g2": abs(1.0 + ratio) ** 2,
    }
    out = _out_dir(args, cfg)
    path = _write_json(out / "match.json", record)
    _finish(_manifest(args, cfg), out, [path])
    return EXIT_OK


def cmd_fit_saturation(args, cfg: ExperimentConfig) -> int:
    data = read_saturation_csv(args.data)
    fit = fit_saturation(data, cfg.params, weighting=args.weighting)
    record = {
        "beta_hat": fit.beta_hat,
        "n_hat": fit.n_hat,
        "p_sat_hat_watts": fit.p_sat_hat,
        "beta_std": fit.beta_std,
        "n_std": fit.n_std,
        "covariance": fit.covariance.tolist(),
        "residual_norm": fit.residual_norm,
        "function_evaluations": fit.iterations,
        "weighting": args.weighting,
    }
    params = dataclasses.replace(cfg.params, beta=fit.beta_hat)
    powers = np.geomspace(data.powers[0], data.powers[-1], 200)
    curve = transmission_saturated(params, fit.n_hat, powers)
    out = _out_dir(args, cfg)
    paths = [
        _write_json(out / "saturation_fit.json", record),
        _write_csv(out / "saturation_curve.csv", ["power_watts", "transmission_model"], zip(powers, curve)),
    ]
    _finish(_manifest(args, cfg), out, paths)
    return EXIT_OK


def _model_g2_at(cfg: ExperimentConfig, drive, taus) -> np.ndarray:
    phi = phi_at_delays(cfg.params, drive, taus)
    amp = coherent_pair_amplitude(cfg.params, drive)
    state = TwoPhotonState(coherent_amp=amp, phi_tau=phi, grid=cfg.grid)
    return g2_of_tau(state)


def _model_drive(args, cfg: ExperimentConfig):
    drive = cfg.drive
    if args.match:
        drive = dataclasses.replace(drive, atom_number=find_matching_n(cfg.params, drive.detuning).n_match)
    return drive


def cmd_synth_histogram(args, cfg: ExperimentConfig) -> int:
    seed = args.seed if args.seed is not None else 0
    drive = _model_drive(args, cfg)
    taus = cfg.grid.taus
    g2 = _model_g2_at(cfg, drive, taus)
    g2_model = args.contrast * (g2 - 1.0) + 1.0
    hist = synth_histogram(np.maximum(g2_model, 0.0), args.baseline, seed, bin_centers=taus)
    out = _out_dir(args, cfg)
    csv_path = out / "histogram.csv"
    side = write_histogram(csv_path, hist)
    m = _manifest(args, cfg, seeds={"histogram": seed})
    m.arguments["atom_number_used"] = float(drive.atom_number)
    _finish(m, out, [csv_path, side])
    return EXIT_OK


def cmd_fit_contrast(args, cfg: ExperimentConfig) -> int:
    hist = read_histogram(args.histogram)
    drive = _model_drive(args, cfg)
    g2 = _model_g2_at(cfg, drive, hist.bin_centers)
    if args.wing_baseline:
        hist = dataclasses.replace(hist, baseline_expected=estimate_baseline(hist, cfg.params.gamma_tot))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = mle_fit_contrast(
            hist, g2, c_bounds=(args.c_min, args.c_max), fit_baseline=args.fit_baseline, ci_level=args.ci_level
        )
    record = {
        "c_hat": fit.c_hat,
        "ci_lower": fit.ci_lower,
        "ci_upper": fit.ci_upper,
        "g2_zero_hat": fit.g2_zero_hat,
        "g2_zero_lower": fit.g2_zero_lower,
        "g2_zero_upper": fit.g2_zero_upper,
        "baseline": fit.baseline,
        "log_likelihood": fit.log_likelihood,
        "at_boundary": fit.at_boundary,
        "ci_clipped": list(fit.ci_clipped),
        "ci_level": args.ci_level,
    }
    fitted = fit.c_hat * (g2 - 1.0) + 1.0
    out = _out_dir(args, cfg)
    paths = [
        _write_json(out / "contrast_fit.json", record),
        _write_csv(out / "contrast_curve.csv", ["tau_seconds", "g2_model", "g2_fit"], zip(hist.bin_centers, g2, fitted)),
    ]
    m = _manifest(args, cfg)
    m.warnings = [str(w.message) for w in caught]
    _finish(m, out, paths)
    return EXIT_OK


def cmd_montecarlo(args, cfg: ExperimentConfig) -> int:
    imp = cfg.imperfections or ImperfectionConfig(sigma_beta=0.0)
    if args.seed is not None:
        imp = dataclasses.replace(imp, seed=args.seed)
    if args.trials is not None:
        imp = dataclasses.replace(imp, trials=args.trials)
    if args.averaging is not None:
        imp = dataclasses.replace(imp, averaging=args.averaging)
    detunings = _detunings(args)
    matches: dict = {}
    points = averaged_fringe(cfg.params, detunings, imp, matches=matches)
    out = _out_dir(args, cfg)
    paths = [
        _write_csv(
            out / "montecarlo.csv",
            ["detuning_hz", "mean_g2", "std_g2", "trials"],
            ((angular_to_hz(p.detuning), p.mean_g2, p.std_g2, p.trials_used) for p in points),
        )
    ]
    record = {"visibility": visibility(p.mean_g2 for p in points)}
    if args.sigma_family_hz:
        try:
            sigmas = [hz_to_angular(float(v)) for v in args.sigma_family_hz.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--sigma-family-hz: {exc}") from None
        table = visibility_vs_sigma(cfg.params, detunings, sigma_family(imp, sigmas), freq=FAST_FREQUENCY_GRID)
        record["sigma_family"] = [{"sigma_detuning_hz": angular_to_hz(s), "visibility": v} for s, v in table]
        paths.append(
            _write_csv(
                out / "visibility_family.csv",
                ["sigma_detuning_hz", "visibility"],
                ((angular_to_hz(s), v) for s, v in table),
            )
        )
    paths.append(_write_json(out / "montecarlo.json", record))
    m = _manifest(args, cfg, seeds={"montecarlo": int(imp.seed)})
    m.config["imperfections"] = config_sections(dataclasses.replace(cfg, imperfections=imp))["imperfections"]
    m.warnings = [f"detuning_hz={_num(angular_to_hz(p.detuning))}: matching failed" for p in points if p.trials_used == 0]
    _finish(m, out, paths)
    return EXIT_OK


def _read_g2_column(path: Path) -> List[float]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        col = next((c for c in ("g2", "mean_g2") if c in cols), None)
        if col is None:
            raise ConfigError(f"{path}: need a 'g2' or 'mean_g2' column, got {cols!r}")
        vals = []
        for lineno, row in enumerate(reader, start=2):
            try:
                vals.append(float(row[col]))
            except (TypeError, ValueError):
                raise ConfigError(f"{path}:{lineno}: bad {col} value {row[col]!r}") from None
    return vals


def cmd_visibility(args, cfg: ExperimentConfig) -> int:
    if (args.values is None) == (args.input is None):
        raise ConfigError("give exactly one of --values or --input")
    if args.values is not None:
        try:
            vals = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--values: {exc}") from None
    else:
        vals = _read_g2_column(Path(args.input))
    try:
        v = visibility(vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(args, cfg)
    finite = [x for x in vals if math.isfinite(x)]
    path = _write_json(out / "visibility.json", {"visibility": v, "g2_max": max(finite), "g2_min": min(finite)})
    _finish(_manifest(args, cfg), out, [path])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _global_flags(parser, default):
    parser.add_argument("--config", default=default, help="experiment configuration (INI)")
    parser.add_argument("--seed", type=int, default=default, help="random seed override")
    parser.add_argument("--out", default=default, help="output directory (overrides [output] path)")


def _scan_flags(parser):
    parser.add_argument("--detunings-hz", help="comma-separated detunings Δ/2π in Hz")
    parser.add_argument("--range-hz", metavar="START,STOP,COUNT", help="evenly spaced scan in Hz, ends included")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twophoton", description=__doc__.splitlines()[0])
    _global_flags(parser, None)
    common = argparse.ArgumentParser(add_help=False)
    # subcommand copies must not clobber values given before the command name
    _global_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("g2", parents=[common], help="g2(τ) and φ(τ) on the configured delay grid")
    p.add_argument("--match", action="store_true", help="replace the atom number by the matched Ñ")
    p.add_argument("--tau-star", type=float, default=0.0, help="matching delay in seconds (with --match)")
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("fringe", parents=[common], help="matched fringe over a detuning scan")
    _scan_flags(p)
    p.add_argument("--tau-star", type=float, default=0.0, help="matching delay in seconds")
    p.set_defaults(func=cmd_fringe)

    p = sub.add_parser("match", parents=[common], help="matching atom number at one detuning")
    p.add_argument("--detuning-hz", type=float, help="Δ/2π in Hz (default: config)")
    p.add_argument("--tau-star", type=float, default=0.0)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("fit-saturation", parents=[common], help="fit (β, N) to a transmission scan")
    p.add_argument("data", help="CSV with header power_watts,transmission")
    p.add_argument("--weighting", choices=("linear", "log"), default="linear")
    p.set_defaults(func=cmd_fit_saturation)

    p = sub.add_parser("synth-histogram", parents=[common], help="Poisson coincidence histogram from the model")
    p.add_argument("--baseline", type=float, default=50.0, help="mean counts per bin at g2 = 1")
    p.add_argument("--contrast", type=float, default=1.0, help="contrast factor C applied to the model")
    p.add_argument("--match", action="store_true", help="use the matched Ñ as atom number")
    p.set_defaults(func=cmd_synth_histogram)

    p = sub.add_parser("fit-contrast", parents=[common], help="MLE contrast fit of a coincidence histogram")
    p.add_argument("histogram", help="CSV tau_seconds,counts with a JSON sidecar")
    p.add_argument("--match", action="store_true", help="use the matched Ñ as atom number")
    p.add_argument("--fit-baseline", action="store_true", help="profile the baseline jointly with C")
    p.add_argument("--wing-baseline", action="store_true", help="estimate the baseline from the Γ|τ| > 8 wings")
    p.add_argument("--c-min", type=float, default=0.0)
    p.add_argument("--c-max", type=float, default=1.5)
    p.add_argument("--ci-level", type=float, default=0.95, help="confidence level of the profile interval")
    p.set_defaults(func=cmd_fit_contrast)

    p = sub.add_parser("montecarlo", parents=[common], help="imperfection-averaged fringe")
    _scan_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--averaging", choices=AVERAGING_MODES)
    p.add_argument("--sigma-family-hz", help="comma-separated σ_Δ/2π values for a visibility table")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("visibility", parents=[common], help="fringe visibility of a set of g2 values")
    p.add_argument("--values", help="comma-separated g2 values")
    p.add_argument("--input", help="CSV with a g2 or mean_g2 column")
    p.set_defaults(func=cmd_visibility)
    return parser


_NUMERIC_OPTIONS = {
    "--detunings-hz", "--range-hz", "--detuning-hz", "--sigma-family-hz", "--values", "--tau-star",
    "--c-min", "--c-max", "--contrast", "--baseline", "--seed",
}
_NEGATIVE_VALUE = re.compile(r"^-(\d|\.\d)")


def _attach_negative_values(argv: Sequence[str]) -> List[str]:
    """Glue ``--opt -1e6,...`` into ``--opt=-1e6,...``; argparse would read the value as a flag."""
    out: List[str] = []
    items = list(argv)
    i = 0
    while i < len(items):
        tok = items[i]
        if tok in _NUMERIC_OPTIONS and i + 1 < len(items) and _NEGATIVE_VALUE.match(items[i + 1]):
            out.append(f"{tok}={items[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_negative_values(sys.argv[1:] if argv is None else argv))
    try:
        cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # invalid values reaching a domain type from the command line
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
