"""Amplitude matching, interference fringes and small-detuning approximations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import MatchingError, NumericalError
from .model import (
    DEFAULT_FREQUENCY_GRID,
    EmitterChainParams,
    FrequencyGrid,
    _Spectrum,
    principal_angle,
    single_atom_transmission,
)

N_CAP = 1e5
#: Largest |Δ|/Γ accepted by the matcher.
MAX_DETUNING_RATIO = 2.0
ETA_TOLERANCE = 1e-6
BISECTION_STEPS = 60


@dataclass(frozen=True)
class MatchingPoint:
    detuning: float
    tau_star: float
    n_match: float
    residual: float


@dataclass(frozen=True)
class FringePoint:
    """One matched point of a fringe scan; failed points carry NaNs and ``error``."""

    detuning: float
    n_match: float
    phase_zero: float
    phase_unwrapped: float
    g2_at_tau_star: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class PairRatio:
    """φ(τ*)/(α²/2) as a function of atom number at fixed detuning and delay.

    Works with logarithms of the coherent amplitude so that very opaque
    chains do not underflow.
    """

    def __init__(
        self,
        params: EmitterChainParams,
        detuning: float,
        tau_star: float = 0.0,
        freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID,
    ):
        self.params = params
        self.detuning = float(detuning)
        self.tau_star = float(tau_star)
        self._spec = _Spectrum(params.beta, params.gamma_tot, detuning, freq)
        self._log_t = complex(np.log(single_atom_transmission(params, detuning)))

    def log_eta_phase(self, n: float):
        """Return ``(ln η, Δφ)`` with Δφ not wrapped."""
        if n <= 0:
            return -math.inf, math.nan
        phi = complex(self._spec.phi_time(n, [self.tau_star])[0, 0])
        if phi == 0:
            return -math.inf, math.nan
        log_eta = math.log(abs(phi)) - 2.0 * n * self._log_t.real
        phase = math.atan2(phi.imag, phi.real) - 2.0 * n * self._log_t.imag
        return log_eta, phase

    def eta(self, n: float) -> float:
        return math.exp(self.log_eta_phase(n)[0])

    def ratio(self, n: float) -> complex:
        log_eta, phase = self.log_eta_phase(n)
        return complex(math.exp(log_eta) * complex(math.cos(phase), math.sin(phase)))


def _bisect_log_eta(ratio: PairRatio, lo: float, hi: float) -> float:
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if ratio.log_eta_phase(mid)[0] > 0.0:
            hi = mid
        else:
            lo = mid
    # keep the end point with the smaller residual
    r_lo = abs(ratio.eta(lo) - 1.0) if lo > 0 else math.inf
    r_hi = abs(ratio.eta(hi) - 1.0)
    return lo if r_lo < r_hi else hi


def find_matching_n(
    params: EmitterChainParams,
    detuning: float,
    tau_star: float = 0.0,
    *,
    n_cap: float = N_CAP,
    max_detuning_ratio: float = MAX_DETUNING_RATIO,
    freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID,
    n_guess: Optional[float] = None,
    _ratio: Optional[PairRatio] = None,
) -> MatchingPoint:
    """Atom number Ñ for which ``|φ(τ*)| = |α²/2|``.

    The root is bracketed on the ladder N = 1, 2, 4, ... and refined by
    bisection on ln η. When ``n_guess`` is given the bracket is instead grown
    geometrically around the guess, which reproduces the ladder root whenever
    the guess lies in its basin.

    Raises
    ------
    MatchingError
        If η stays below 1 up to ``n_cap`` or the detuning is outside the
        model's validity window.
    """
    if abs(detuning) > max_detuning_ratio * params.gamma_tot:
        raise MatchingError(
            f"|detuning| = {abs(detuning) / params.gamma_tot:.3g} Gamma exceeds the "
            f"{max_detuning_ratio:g} Gamma validity window"
        )
    if tau_star < 0:
        tau_star = -tau_star
    ratio = _ratio or PairRatio(params, detuning, tau_star, freq)

    if n_guess is not None and n_guess > 0:
        lo, hi = n_guess / 1.01, n_guess * 1.01
        while ratio.log_eta_phase(lo)[0] > 0.0 and lo > 1e-6:
            lo /= 2.0
        while ratio.log_eta_phase(hi)[0] <= 0.0:
            hi *= 2.0
            if hi > n_cap:
                raise MatchingError(f"eta < 1 for all N <= {n_cap:g}")
    else:
        lo, hi = 0.0, 1.0
        while ratio.log_eta_phase(hi)[0] <= 0.0:
            lo, hi = hi, 2.0 * hi
            if hi > n_cap:
                if ratio.log_eta_phase(n_cap)[0] > 0.0:
                    hi = n_cap
                    break
                raise MatchingError(
                    f"eta < 1 for all N <= {n_cap:g} at detuning "
                    f"{detuning / params.gamma_tot:.3g} Gamma, tau* = {tau_star:.3g} s"
                )
    n = _bisect_log_eta(ratio, lo, hi)
    residual = abs(ratio.eta(n) - 1.0)
    if residual >= ETA_TOLERANCE:
        raise NumericalError(f"matching residual {residual:.3g} above {ETA_TOLERANCE:g}")
    return MatchingPoint(detuning=float(detuning), tau_star=float(tau_star), n_match=n, residual=residual)


def matched_ratio(
    params: EmitterChainParams,
    detuning: float,
    tau_star: float = 0.0,
    freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID,
):
    """Matching point together with the complex ratio φ(τ*)/(α²/2) there."""
    ratio = PairRatio(params, detuning, tau_star, freq)
    mp = find_matching_n(params, detuning, tau_star, freq=freq, _ratio=ratio)
    return mp, ratio.ratio(mp.n_match)


def _unwrap_next(prev: Optional[float], value: float) -> float:
    if prev is None or not math.isfinite(prev):
        return value
    return value + 2.0 * math.pi * round((prev - value) / (2.0 * math.pi))


def fringe_scan(
    params: EmitterChainParams,
    detunings: Sequence[float],
    tau_star: float = 0.0,
    *,
    freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID,
    max_detuning_ratio: float = MAX_DETUNING_RATIO,
) -> list:
    """Match the amplitudes at each detuning and report Δφ(τ*) and g²(τ*).

    The unwrapped phase follows the scan order, taking at every point the
    2π branch nearest to the previous successful point. Points where
    matching fails are kept with NaN values and an error message.
    """
    out = []
    prev = None
    for d in detunings:
        try:
            ratio = PairRatio(params, d, tau_star, freq)
            mp = find_matching_n(
                params, d, tau_star, freq=freq, max_detuning_ratio=max_detuning_ratio, _ratio=ratio
            )
        except NumericalError as exc:
            out.append(FringePoint(float(d), math.nan, math.nan, math.nan, math.nan, error=str(exc)))
            continue
        z = ratio.ratio(mp.n_match)
        raw_phase = ratio.log_eta_phase(mp.n_match)[1]
        unwrapped = _unwrap_next(prev, principal_angle(raw_phase))
        prev = unwrapped
        out.append(
            FringePoint(
                detuning=float(d),
                n_match=mp.n_match,
                phase_zero=principal_angle(raw_phase),
                phase_unwrapped=unwrapped,
                g2_at_tau_star=abs(1.0 + z) ** 2,
            )
        )
    return out


def approx_phase_linear(params: EmitterChainParams, n_match_resonant: float, detuning: float) -> float:
    """Small-detuning phase estimate ``π + 8 Ñ(0) Δ/Γ``, returned unwrapped."""
    return math.pi + 8.0 * n_match_resonant * detuning / params.gamma_tot


def approx_eta_exponential(params: EmitterChainParams, detuning: float, n: float, n_match: float) -> float:
    """Near-matching amplitude ratio ``|t(Δ)²|^(Ñ - N)``."""
    t2 = abs(single_atom_transmission(params, detuning)) ** 2
    return t2 ** (n_match - n)


@dataclass(frozen=True)
class PhaseSlopeFit:
    """Linear fit of the matched phase Δφ(0) against Δ/Γ."""

    slope: float
    intercept: float
    r_squared: float
    linear_slope: float
    beta_scaled_linear_slope: float
    n_match_resonant: float


def phase_slope_fit(
    params: EmitterChainParams,
    detunings: Sequence[float],
    freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID,
) -> PhaseSlopeFit:
    """Fit the full-model matched phase against Δ/Γ and compare with ``8Ñ(0)``."""
    points = fringe_scan(params, sorted(detunings), 0.0, freq=freq)
    if not all(p.ok for p in points):
        raise NumericalError("matching failed inside the slope-fit window")
    x = np.array([p.detuning for p in points]) / params.gamma_tot
    y = np.array([p.phase_unwrapped for p in points])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    n0 = find_matching_n(params, 0.0, freq=freq).n_match
    return PhaseSlopeFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        linear_slope=8.0 * n0,
        beta_scaled_linear_slope=8.0 * params.beta * n0,
        n_match_resonant=n0,
    )


def visibility(g2_values) -> float:
    """Michelson contrast ``(max - min)/(max + min)``, ignoring NaNs."""
    v = np.asarray(list(g2_values), dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("visibility needs at least one finite value")
    if np.any(v < 0):
        raise ValueError("g2 values must be non-negative")
    hi, lo = float(v.max()), float(v.min())
    if hi + lo == 0:
        return 0.0
    return (hi - lo) / (hi + lo)
