"""Monte-Carlo averaging of the matched fringe over experimental imperfections.

Each trial perturbs the matched operating point: the optical depth is drawn
flat within an OD bin, the detuning from a Gaussian and β from a Gaussian
truncated to positive values. Trial ``i`` uses its own generator seeded with
``(seed, i)`` so results do not depend on evaluation order or batching.

Two averages are offered. ``"pooled"`` mimics summing the coincidence
histograms of all runs in a bin and normalizing by the pooled uncorrelated
level, which weights every trial by its coherent pair rate ``|α²/2|²``.
``"per-run"`` is the plain mean of the individual g²(0) values.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .errors import NumericalError
from .matching import find_matching_n, visibility
from .model import (
    FAST_FREQUENCY_GRID,
    DriveConfig,
    EmitterChainParams,
    FrequencyGrid,
    _Spectrum,
)

BETA_FLOOR = 1e-4
_BATCH = 256
AVERAGING_MODES = ("pooled", "per-run")


@dataclass(frozen=True)
class ImperfectionConfig:
    od_bin_width: float = 1.7
    sigma_detuning: float = 2.0 * math.pi * 200e3
    sigma_beta: float = 0.002
    trials: int = 2000
    seed: int = 0
    averaging: str = "pooled"

    def __post_init__(self):
        for name in ("od_bin_width", "sigma_detuning", "sigma_beta"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v!r}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be a positive integer")
        if self.averaging not in AVERAGING_MODES:
            raise ValueError(f"averaging must be one of {AVERAGING_MODES}, got {self.averaging!r}")


@dataclass(frozen=True)
class OperatingPoint:
    beta: float
    n: float
    detuning: float


@dataclass(frozen=True)
class AveragedFringePoint:
    detuning: float
    mean_g2: float
    std_g2: float
    trials_used: int
    n_match: float = math.nan


def _trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _standard_draws(seed: int, index: int, beta0: float, sigma_beta: float):
    """Uniform OD offset in [-1/2, 1/2), detuning z-score, accepted β."""
    rng = _trial_rng(seed, index)
    u = rng.random() - 0.5
    z_det = rng.standard_normal()
    beta = beta0
    if sigma_beta > 0:
        while True:
            beta = beta0 + sigma_beta * rng.standard_normal()
            if beta > BETA_FLOOR:
                break
    return u, z_det, beta


def _od_per_atom(beta):
    return -np.log((1.0 - 2.0 * np.asarray(beta, dtype=float)) ** 2)


def sample_operating_point(
    params: EmitterChainParams,
    nominal: DriveConfig,
    cfg: ImperfectionConfig,
    draw_index: int,
) -> OperatingPoint:
    """Perturb ``(β, N, Δ)`` around ``nominal`` for one Monte-Carlo draw.

    The optical depth is fixed by the OD bin, so the perturbed atom number is
    the drawn OD divided by the per-atom OD of the drawn β.
    """
    u, z_det, beta = _standard_draws(cfg.seed, draw_index, params.beta, cfg.sigma_beta)
    n = _perturbed_n(params.beta, nominal.atom_number, cfg.od_bin_width * u, beta)
    return OperatingPoint(
        beta=float(beta),
        n=float(n),
        detuning=nominal.detuning + cfg.sigma_detuning * z_det,
    )


def _perturbed_n(beta0, n0, od_offset, beta):
    kappa0 = _od_per_atom(beta0)
    od0 = n0 * kappa0
    od = od0 + od_offset
    # exact identity when od_offset == 0 and beta == beta0
    n = n0 * (od / od0) * (kappa0 / _od_per_atom(beta)) if od0 > 0 else np.zeros_like(od)
    return np.maximum(n, 0.0)


def _draw_table(params: EmitterChainParams, cfg: ImperfectionConfig):
    draws = [_standard_draws(cfg.seed, i, params.beta, cfg.sigma_beta) for i in range(int(cfg.trials))]
    u, z, beta = (np.array(col, dtype=float) for col in zip(*draws))
    return u, z, beta


def _g2_zero_batch(gamma, beta, n, detuning, freq: FrequencyGrid):
    """g²(0) and ln|α²/2|² for every trial."""
    g2 = np.empty(n.size)
    log_rate = np.empty(n.size)
    shared = np.all(beta == beta[0]) and np.all(detuning == detuning[0])
    spec = _Spectrum(beta[0], gamma, detuning[0], freq) if shared else None
    for start in range(0, n.size, _BATCH):
        sl = slice(start, start + _BATCH)
        s = spec if shared else _Spectrum(beta[sl], gamma, detuning[sl], freq)
        phi0 = s.phi_time(n[sl], [0.0])[:, 0]
        # α²/2 = exp(2N ln t); ratio formed in log space
        log_alpha = 2.0 * n[sl] * s.log_t
        g2[sl] = np.abs(1.0 + phi0 * np.exp(-log_alpha)) ** 2
        log_rate[sl] = 2.0 * log_alpha.real
    return g2, log_rate


def _weighted_stats(values, log_weights):
    if log_weights is None:
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return float(values.mean()), std
    w = np.exp(log_weights - log_weights.max())
    v1, v2 = w.sum(), (w * w).sum()
    mean = float((w * values).sum() / v1)
    denom = v1 - v2 / v1
    var = float((w * (values - mean) ** 2).sum() / denom) if denom > 0 else 0.0
    return mean, math.sqrt(var)


def averaged_fringe(
    params: EmitterChainParams,
    detunings: Sequence[float],
    cfg: ImperfectionConfig,
    *,
    freq: FrequencyGrid = FAST_FREQUENCY_GRID,
    matches: dict = None,
) -> List[AveragedFringePoint]:
    """Mean and spread of g²(0) over perturbed operating points at each detuning.

    The average follows ``cfg.averaging``; for pooled averages the spread is
    the weighted standard deviation with the reliability-weight correction.
    ``matches`` may map detuning to a precomputed Ñ; missing entries are
    solved and inserted, so one dict can be shared across a family of configs.
    """
    if matches is None:
        matches = {}
    u, z, beta = _draw_table(params, cfg)
    out = []
    for d in detunings:
        d = float(d)
        if d not in matches:
            try:
                matches[d] = find_matching_n(params, d, freq=freq).n_match
            except NumericalError:
                matches[d] = math.nan
        n0 = matches[d]
        if not math.isfinite(n0):
            out.append(AveragedFringePoint(d, math.nan, math.nan, 0, n0))
            continue
        n = _perturbed_n(params.beta, n0, cfg.od_bin_width * u, beta)
        det = d + cfg.sigma_detuning * z
        g2, log_rate = _g2_zero_batch(params.gamma_tot, beta, n, det, freq)
        good = np.isfinite(g2) & np.isfinite(log_rate)
        if not np.any(good):
            out.append(AveragedFringePoint(d, math.nan, math.nan, 0, n0))
            continue
        weights = log_rate[good] if cfg.averaging == "pooled" else None
        mean, std = _weighted_stats(g2[good], weights)
        out.append(AveragedFringePoint(d, mean, std, int(good.sum()), n0))
    return out


def sigma_family(cfg: ImperfectionConfig, sigmas: Iterable[float]) -> List[ImperfectionConfig]:
    """Copies of ``cfg`` differing only in the detuning spread (rad/s)."""
    return [dataclasses.replace(cfg, sigma_detuning=float(s)) for s in sigmas]


def visibility_vs_sigma(
    params: EmitterChainParams,
    detunings: Sequence[float],
    cfg_family: Sequence[ImperfectionConfig],
    *,
    freq: FrequencyGrid = FAST_FREQUENCY_GRID,
) -> List[tuple]:
    """``(sigma_detuning, visibility)`` of the averaged fringe for each config."""
    matches: dict = {}
    table = []
    for cfg in cfg_family:
        pts = averaged_fringe(params, detunings, cfg, freq=freq, matches=matches)
        table.append((cfg.sigma_detuning, visibility(p.mean_g2 for p in pts)))
    return table
