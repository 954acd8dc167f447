"""Experiment configuration files and run manifests.

The configuration is an INI file with one section per domain type::

    [params]
    beta = 0.007
    gamma_hz = 5220000.0          # Γ/2π
    probe_wavelength_m = 8.52e-07

    [drive]
    detuning_hz = 0.0             # Δ/2π
    atom_number = 222.1
    # probe_power_w = 1e-12

    [grid]
    tau_max_s = 1e-06
    num_samples = 1024

    [imperfections]               # optional
    od_bin_width = 1.7
    sigma_detuning_hz = 200000.0
    sigma_beta = 0.0
    trials = 2000
    seed = 0
    averaging = pooled

    [output]
    path = out

Every key is optional and falls back to the type defaults, but unknown
sections or keys are errors. Frequencies are written in Hz (divided by 2π)
and converted to angular units when parsed.
"""

from __future__ import annotations

import configparser
import datetime as _dt
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .errors import ConfigError
from .model import DelayGrid, DriveConfig, EmitterChainParams
from .montecarlo import ImperfectionConfig

TWO_PI = 2.0 * math.pi

_SCHEMA = {
    "params": ("beta", "gamma_hz", "probe_wavelength_m"),
    "drive": ("detuning_hz", "atom_number", "probe_power_w"),
    "grid": ("tau_max_s", "num_samples"),
    "imperfections": ("od_bin_width", "sigma_detuning_hz", "sigma_beta", "trials", "seed", "averaging"),
    "output": ("path",),
}
_INT_KEYS = {"num_samples", "trials", "seed"}
_STR_KEYS = {"path", "averaging"}

DEFAULT_TAU_MAX = 1e-6
DEFAULT_DELAY_SAMPLES = 1024


@dataclass(frozen=True)
class ExperimentConfig:
    params: EmitterChainParams = field(default_factory=EmitterChainParams)
    drive: DriveConfig = field(default_factory=DriveConfig)
    grid: DelayGrid = field(default_factory=lambda: DelayGrid(DEFAULT_TAU_MAX, DEFAULT_DELAY_SAMPLES))
    imperfections: Optional[ImperfectionConfig] = None
    output_path: str = "out"


def hz_to_angular(hz: float) -> float:
    return TWO_PI * float(hz)


def angular_to_hz(omega: float) -> float:
    """Hz value that maps back onto ``omega`` exactly under ``hz_to_angular``."""
    omega = float(omega)
    hz = omega / TWO_PI
    if TWO_PI * hz == omega:
        return hz
    for direction in (math.inf, -math.inf):
        cand = hz
        for _ in range(4):
            cand = math.nextafter(cand, direction)
            if TWO_PI * cand == omega:
                return cand
    return hz


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


_SECTION_RE = re.compile(r"^\s*\[([^\]]*)\]")
_KEY_RE = re.compile(r"^\s*([^\s=:#;][^=:]*?)\s*[=:]")


def _line_index(text: str) -> Dict[tuple, int]:
    """Map ``(section,)`` and ``(section, key)`` to 1-based line numbers."""
    index = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section,), lineno)
            continue
        if section is None or not line.strip():
            continue
        m = _KEY_RE.match(line)
        if m:
            index.setdefault((section, m.group(1).strip().lower()), lineno)
    return index


def _coerce(source, lines, section, key, raw):
    where = f"{source}:{lines.get((section, key), '?')}: [{section}] {key}"
    if key in _STR_KEYS:
        if not raw:
            raise ConfigError(f"{where}: value must not be empty")
        return raw
    try:
        if key in _INT_KEYS:
            value = int(raw)
        else:
            value = float(raw)
    except ValueError:
        kind = "an integer" if key in _INT_KEYS else "a number"
        raise ConfigError(f"{where}: expected {kind}, got {raw!r}") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{where}: value must be finite, got {raw!r}")
    return value


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse configuration text; all diagnostics carry ``source:line``."""
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, inline_comment_prefixes=("#", ";"), default_section="__none__"
    )
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    lines = _line_index(text)
    values: Dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"{source}:{lines.get((section,), '?')}: unknown section [{section}]; "
                f"expected one of {sorted(_SCHEMA)}"
            )
        known = _SCHEMA[section]
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(
                    f"{source}:{lines.get((section, key), '?')}: unknown key '{key}' in [{section}]; "
                    f"expected one of {list(known)}"
                )
            values[section][key] = _coerce(source, lines, section, key, raw.strip())

    def build(section, factory):
        try:
            return factory(values.get(section, {}))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lines.get((section,), '?')}: [{section}] {exc}") from None

    def make_params(v):
        base = EmitterChainParams()
        return EmitterChainParams(
            beta=v.get("beta", base.beta),
            gamma_tot=hz_to_angular(v["gamma_hz"]) if "gamma_hz" in v else base.gamma_tot,
            probe_wavelength=v.get("probe_wavelength_m", base.probe_wavelength),
        )

    def make_drive(v):
        return DriveConfig(
            detuning=hz_to_angular(v.get("detuning_hz", 0.0)),
            atom_number=v.get("atom_number", 0.0),
            probe_power=v.get("probe_power_w"),
        )

    def make_grid(v):
        return DelayGrid(v.get("tau_max_s", DEFAULT_TAU_MAX), v.get("num_samples", DEFAULT_DELAY_SAMPLES))

    def make_imperfections(v):
        base = ImperfectionConfig()
        return ImperfectionConfig(
            od_bin_width=v.get("od_bin_width", base.od_bin_width),
            sigma_detuning=hz_to_angular(v["sigma_detuning_hz"]) if "sigma_detuning_hz" in v else base.sigma_detuning,
            sigma_beta=v.get("sigma_beta", base.sigma_beta),
            trials=v.get("trials", base.trials),
            seed=v.get("seed", base.seed),
            averaging=v.get("averaging", base.averaging),
        )

    return ExperimentConfig(
        params=build("params", make_params),
        drive=build("drive", make_drive),
        grid=build("grid", make_grid),
        imperfections=build("imperfections", make_imperfections) if "imperfections" in values else None,
        output_path=values.get("output", {}).get("path", "out"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    return parse_config(text, source=str(path))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def config_sections(cfg: ExperimentConfig) -> Dict[str, Dict[str, object]]:
    """Plain-value view of a configuration, in file units."""
    out = {
        "params": {
            "beta": cfg.params.beta,
            "gamma_hz": angular_to_hz(cfg.params.gamma_tot),
            "probe_wavelength_m": cfg.params.probe_wavelength,
        },
        "drive": {
            "detuning_hz": angular_to_hz(cfg.drive.detuning),
            "atom_number": float(cfg.drive.atom_number),
        },
        "grid": {"tau_max_s": cfg.grid.tau_max, "num_samples": int(cfg.grid.num_samples)},
    }
    if cfg.drive.probe_power is not None:
        out["drive"]["probe_power_w"] = cfg.drive.probe_power
    if cfg.imperfections is not None:
        imp = cfg.imperfections
        out["imperfections"] = {
            "od_bin_width": imp.od_bin_width,
            "sigma_detuning_hz": angular_to_hz(imp.sigma_detuning),
            "sigma_beta": imp.sigma_beta,
            "trials": int(imp.trials),
            "seed": int(imp.seed),
            "averaging": imp.averaging,
        }
    out["output"] = {"path": cfg.output_path}
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    chunks = []
    for section, entries in config_sections(cfg).items():
        body = "\n".join(f"{k} = {_fmt(v)}" for k, v in entries.items())
        chunks.append(f"[{section}]\n{body}\n")
    return "\n".join(chunks)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run_timestamp() -> str:
    """UTC ISO timestamp; honours SOURCE_DATE_EPOCH for reproducible builds."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        try:
            moment = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
        except ValueError:
            raise ConfigError(f"SOURCE_DATE_EPOCH must be an integer, got {epoch!r}") from None
    else:
        moment = _dt.datetime.now(tz=_dt.timezone.utc).replace(microsecond=0)
    return moment.isoformat().replace("+00:00", "Z")


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Dict[str, object]]
    seeds: Dict[str, int] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    arguments: Dict[str, object] = field(default_factory=dict)
    version: str = __version__
    timestamp: str = field(default_factory=run_timestamp)

    def add_output(self, path) -> None:
        path = Path(path)
        self.outputs[path.name] = sha256_file(path)

    def to_json(self) -> str:
        record = {
            "tool": "twophoton",
            "version": self.version,
            "command": self.command,
            "arguments": self.arguments,
            "config": self.config,
            "seeds": self.seeds,
            "timestamp": self.timestamp,
            "outputs": dict(sorted(self.outputs.items())),
            "warnings": self.warnings,
        }
        return json.dumps(_jsonable(record), indent=2, sort_keys=False, allow_nan=True) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value
