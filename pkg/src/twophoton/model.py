"""Forward model of near-resonant light transmitted past a chain of emitters.

All frequencies are angular (rad/s) and all times are in seconds. The
two-photon amplitudes are normalized to the input laser amplitude, so the
coherent pair amplitude of an empty chain is exactly 1.

The incoherent pair amplitude is defined in the frequency domain as a sum
over emitters. Writing ``A = Γ/2 - iΔ`` and ``u(ω) = 1/(A² + ω²)`` one has

    φ_atom(ω) = -2A r² u(ω),      t(Δ+ω) t(Δ-ω) = 1 - K u(ω),

with ``K = βΓ(2A - βΓ)``. The ensemble amplitude is therefore a power series
in ``u`` whose leading terms have closed-form inverse transforms. The time
domain evaluation subtracts the first few of these terms analytically and
integrates only the rapidly decaying remainder numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GridError, NumericalError

HBAR = 1.054571817e-34
SPEED_OF_LIGHT = 299_792_458.0

#: Cs D2 line total decay rate, 2π × 5.22 MHz.
GAMMA_CS_D2 = 2.0 * math.pi * 5.22e6
BETA_NANOFIBER = 0.007
WAVELENGTH_CS_D2 = 852e-9

#: Below this |ln a - ln b| the geometric ratio uses its degenerate limit.
DEGENERATE_RATIO_TOL = 1e-12
#: Below this |ln a - ln b| the ratio switches to the cancellation-free form.
NEAR_DEGENERATE_RATIO = 1e-3
#: Smallest coherent amplitude that can still normalize g2.
MIN_COHERENT_AMP = 1e-300


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmitterChainParams:
    """Fixed properties of the emitter chain.

    Parameters
    ----------
    beta : float
        Fraction of the emission into the guided mode. Must lie in (0, 0.5).
    gamma_tot : float
        Total linewidth in rad/s.
    probe_wavelength : float
        Probe wavelength in metres.
    """

    beta: float = BETA_NANOFIBER
    gamma_tot: float = GAMMA_CS_D2
    probe_wavelength: float = WAVELENGTH_CS_D2

    def __post_init__(self):
        if not (0.0 < self.beta < 0.5):
            raise ValueError(f"beta must lie in (0, 0.5), got {self.beta!r}")
        if not (self.gamma_tot > 0.0 and math.isfinite(self.gamma_tot)):
            raise ValueError(f"gamma_tot must be positive, got {self.gamma_tot!r}")
        if not (self.probe_wavelength > 0.0):
            raise ValueError("probe_wavelength must be positive")

    @property
    def probe_omega(self) -> float:
        return 2.0 * math.pi * SPEED_OF_LIGHT / self.probe_wavelength

    @property
    def p_sat(self) -> float:
        """Saturation power ħω_L Γ / (8β) in watts."""
        return saturation_power(self.beta, self.gamma_tot, self.probe_wavelength)


def saturation_power(beta, gamma_tot, probe_wavelength=WAVELENGTH_CS_D2):
    omega_l = 2.0 * math.pi * SPEED_OF_LIGHT / probe_wavelength
    return HBAR * omega_l * gamma_tot / (8.0 * beta)


@dataclass(frozen=True)
class DriveConfig:
    """Operating point of the interferometer: detuning (rad/s), atom number, probe power (W)."""

    detuning: float = 0.0
    atom_number: float = 0.0
    probe_power: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.detuning):
            raise ValueError("detuning must be finite")
        if not (self.atom_number >= 0.0 and math.isfinite(self.atom_number)):
            raise ValueError(f"atom_number must be >= 0, got {self.atom_number!r}")
        if self.probe_power is not None and not self.probe_power > 0.0:
            raise ValueError("probe_power must be positive when given")

    def saturation_parameter(self, params: EmitterChainParams) -> Optional[float]:
        if self.probe_power is None:
            return None
        return self.probe_power / params.p_sat

    def check_low_saturation(self, params: EmitterChainParams, limit: float = 0.1) -> None:
        s = self.saturation_parameter(params)
        if s is not None and s >= limit:
            raise ValueError(
                f"saturation parameter s={s:.3g} >= {limit}; the two-photon model "
                "is only valid for weak driving"
            )


@dataclass(frozen=True)
class DelayGrid:
    """Symmetric uniform delay grid ``τ_k = k·tau_max/M`` for ``k = -M..M``.

    ``num_samples`` is the (even) number of intervals, so the grid holds
    ``num_samples + 1`` points and always contains τ = 0.
    """

    tau_max: float
    num_samples: int = 1024

    def __post_init__(self):
        if not (self.tau_max > 0.0 and math.isfinite(self.tau_max)):
            raise ValueError("tau_max must be positive")
        if (
            isinstance(self.num_samples, bool)
            or int(self.num_samples) != self.num_samples
            or self.num_samples <= 0
            or self.num_samples % 2
        ):
            raise ValueError(f"num_samples must be an even positive integer, got {self.num_samples!r}")

    @property
    def half_count(self) -> int:
        return int(self.num_samples) // 2

    @property
    def spacing(self) -> float:
        return self.tau_max / self.half_count

    @property
    def taus(self) -> np.ndarray:
        k = np.arange(-self.half_count, self.half_count + 1)
        return k * self.spacing

    def index_of(self, tau: float) -> int:
        k = tau / self.spacing
        kr = round(k)
        if abs(k - kr) > 1e-9 or abs(kr) > self.half_count:
            raise GridError(f"tau={tau!r} is not a node of the delay grid")
        return int(kr) + self.half_count

    def check(self, params: EmitterChainParams, freq: "FrequencyGrid") -> None:
        if self.tau_max * params.gamma_tot < 10.0:
            raise GridError(
                f"tau_max*Gamma = {self.tau_max * params.gamma_tot:.3g} < 10; "
                "the pair envelope has not decayed at the grid edge"
            )
        omega_max = freq.span * params.gamma_tot
        if self.spacing > math.pi / omega_max:
            raise GridError(
                f"delay spacing {self.spacing:.3g} s exceeds pi/omega_max = "
                f"{math.pi / omega_max:.3g} s; refine the delay grid"
            )


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform sideband grid on ``[-span·Γ, span·Γ]`` used for inverse transforms.

    Only the non-negative half is evaluated because every spectrum is even
    in ω. ``series_order`` is the number of closed-form terms removed before
    the numerical quadrature.
    """

    span: float = 40.0
    num_samples: int = 2**14
    series_order: int = 4

    def __post_init__(self):
        if self.span < 40.0:
            raise ValueError("frequency span must cover at least +/-40 Gamma")
        if self.num_samples < 2 or self.num_samples % 2:
            raise ValueError("num_samples must be an even integer >= 2")
        if not (1 <= self.series_order <= 8):
            raise ValueError("series_order must lie in 1..8")

    def nodes(self, gamma_tot: float):
        """Half-line nodes (rad/s) and trapezoid weights."""
        half = self.num_samples // 2
        omega = np.linspace(0.0, self.span * gamma_tot, half + 1)
        h = omega[1] - omega[0]
        weights = np.full(omega.size, h)
        weights[0] = weights[-1] = 0.5 * h
        return omega, weights


DEFAULT_FREQUENCY_GRID = FrequencyGrid()
#: Coarser grid for bulk sampling at a handful of delays; same span, 2^11 samples.
FAST_FREQUENCY_GRID = FrequencyGrid(num_samples=2**11)


@dataclass(frozen=True)
class TwoPhotonState:
    """Coherent pair amplitude α²/2 and incoherent envelope φ(τ) on a delay grid."""

    coherent_amp: complex
    phi_tau: np.ndarray = field(repr=False)
    grid: DelayGrid

    @property
    def taus(self) -> np.ndarray:
        return self.grid.taus

    def phi_at(self, tau: float) -> complex:
        return complex(self.phi_tau[self.grid.index_of(tau)])


# ---------------------------------------------------------------------------
# Single-emitter response
# ---------------------------------------------------------------------------


def single_atom_transmission(params: EmitterChainParams, detuning):
    """Amplitude transmission ``t(Δ) = 1 - 2β/(1 - 2iΔ/Γ)`` of one emitter."""
    d = np.asarray(detuning, dtype=float)
    out = 1.0 - 2.0 * params.beta / (1.0 - 2j * d / params.gamma_tot)
    return out[()] if out.ndim == 0 else out


def single_atom_reflection(params: EmitterChainParams, detuning):
    """Linear scattering amplitude ``r(Δ) = t(Δ) - 1``."""
    d = np.asarray(detuning, dtype=float)
    out = -2.0 * params.beta / (1.0 - 2j * d / params.gamma_tot)
    return out[()] if out.ndim == 0 else out


def coherent_pair_amplitude(params: EmitterChainParams, drive: DriveConfig) -> complex:
    """Beer-Lambert attenuated coherent pair amplitude α²/2 = t(Δ)^(2N)."""
    if drive.atom_number == 0:
        return 1.0 + 0.0j
    log_t = np.log(single_atom_transmission(params, drive.detuning))
    return complex(np.exp(2.0 * drive.atom_number * log_t))


def phi_atom_time(params: EmitterChainParams, detuning, tau):
    """Single-emitter pair amplitude ``-r² exp(-Γ|τ|/2) exp(iΔ|τ|)``."""
    r = single_atom_reflection(params, detuning)
    a = 0.5 * params.gamma_tot - 1j * np.asarray(detuning, dtype=float)
    out = -(r**2) * np.exp(-a * np.abs(np.asarray(tau, dtype=float)))
    return out[()] if np.ndim(out) == 0 else out


def phi_atom_freq(params: EmitterChainParams, detuning, omega):
    """Fourier image of :func:`phi_atom_time` with kernel ``exp(+iωτ)``."""
    d = np.asarray(detuning, dtype=float)
    w = np.asarray(omega, dtype=float)
    half = 0.5 * params.gamma_tot
    r = single_atom_reflection(params, d)
    out = -(r**2) * (1.0 / (half - 1j * (d + w)) + 1.0 / (half - 1j * (d - w)))
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Ensemble amplitude
# ---------------------------------------------------------------------------


def _expm1_complex(z):
    # exp(z) - 1 without cancellation for small |z|
    x, y = z.real, z.imag
    return (np.expm1(x) * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2) + 1j * np.exp(x) * np.sin(y)


def _geometric_ratio(n, log_a, log_b):
    """``(a^n - b^n)/(a - b)`` evaluated from logarithms, valid for real n >= 0.

    Uses the plain quotient away from a = b and an expm1 form close to it,
    switching to the limit ``n a^(n-1)`` once the two coincide.
    """
    n, log_a, log_b = np.broadcast_arrays(np.asarray(n, dtype=float), log_a, log_b)
    shape = n.shape
    n, log_a, log_b = n.ravel(), log_a.ravel(), log_b.ravel()
    lr = log_a - log_b
    out = np.empty(n.shape, dtype=complex)
    near = np.abs(lr) < NEAR_DEGENERATE_RATIO
    far = ~near
    with np.errstate(under="ignore", over="ignore"):
        nf, la, lb = n[far], log_a[far], log_b[far]
        out[far] = (np.exp(nf * la) - np.exp(nf * lb)) / (np.exp(la) - np.exp(lb))
        idx = np.flatnonzero(near)
        if idx.size:
            nn, ll, lbn = n[idx], lr[idx], log_b[idx]
            degenerate = np.abs(ll) < DEGENERATE_RATIO_TOL
            vals = nn * np.exp(0.5 * (nn - 1.0) * (log_a[idx] + lbn))
            r = ~degenerate
            vals[r] = np.exp((nn[r] - 1.0) * lbn[r]) * _expm1_complex(nn[r] * ll[r]) / _expm1_complex(ll[r])
            out[idx] = vals
    out[n == 0] = 0.0
    return out.reshape(shape)


def _binomials(n, order):
    # generalized binomial coefficients C(n, k), k = 0..order-1, for real n
    n = np.asarray(n, dtype=float)
    coeffs = [np.ones_like(n)]
    for k in range(1, order):
        coeffs.append(coeffs[-1] * (n - (k - 1)) / k)
    return coeffs


def _taylor_sums(n, a, order):
    """Closed forms of ``S_j = Σ_{m=1}^{n} a^(m-1) C(n-m, j)`` for j < order."""
    n = np.asarray(n, dtype=float)
    am1 = a - 1.0
    with np.errstate(under="ignore"):
        a_pow = np.where(n == 0, 1.0 + 0j, np.exp(n * np.log(a)))
    binoms = _binomials(n, order)
    sums = []
    for j in range(order):
        s = a_pow / am1 ** (j + 1)
        for k in range(j + 1):
            s = s - binoms[k] / am1 ** (j - k + 1)
        sums.append(s)
    return sums


def _lorentzian_power_transform(a, m, tau_abs):
    """Inverse transform of ``(ω² + a²)^(-m)``: ``(1/2π)∫ e^{-iωτ}(ω²+a²)^{-m} dω``."""
    x = 2.0 * a * tau_abs
    poly = 0.0
    for k in range(m):
        poly = poly + (
            math.factorial(2 * m - 2 - k) / (math.factorial(k) * math.factorial(m - 1 - k))
        ) * x**k
    return np.exp(-a * tau_abs) * poly / ((2.0 * a) ** (2 * m - 1) * math.factorial(m - 1))


class _Spectrum:
    """Detuning-dependent pieces of the ensemble spectrum on a frequency grid.

    Holds everything that does not depend on the atom number, for a batch of
    ``B`` operating points (β_i, Δ_i) sharing one Γ. Atom numbers are supplied
    per call so that root finding in N reuses the expensive arrays.
    """

    def __init__(self, beta, gamma_tot, detuning, freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID):
        self.gamma = float(gamma_tot)
        self.beta = np.atleast_1d(np.asarray(beta, dtype=float))
        self.detuning = np.atleast_1d(np.asarray(detuning, dtype=float))
        self.beta, self.detuning = np.broadcast_arrays(self.beta, self.detuning)
        self.freq = freq
        self.omega, self.weights = freq.nodes(self.gamma)

        bg = self.beta * self.gamma
        self.A = 0.5 * self.gamma - 1j * self.detuning
        self.r = -bg / self.A
        self.log_t = np.log(1.0 + self.r)
        self.log_a = 2.0 * self.log_t
        self.K = bg * (2.0 * self.A - bg)

        A = self.A[:, None]
        w = self.omega[None, :]
        self.u = 1.0 / (A * A + w * w)
        # t(Δ+ω)t(Δ-ω) = 1 - K u; both factors have |arg| < π/2, so one log suffices
        self.log_b = np.log(1.0 - self.K[:, None] * self.u)
        self.phi_atom = -2.0 * A * self.r[:, None] ** 2 * self.u
        self._cos_cache = {}

    def _atom_numbers(self, n):
        n = np.asarray(n, dtype=float).reshape(-1)
        if n.size != self.A.size and self.A.size != 1:
            raise ValueError("atom numbers must match the batch size or the batch must hold one point")
        return n

    def phi_freq(self, n):
        """φ(ω) on the grid nodes; one row per atom number (or batch member)."""
        n = self._atom_numbers(n)[:, None]
        return self.phi_atom * _geometric_ratio(n, self.log_a[:, None], self.log_b)

    def _cosines(self, tau_abs):
        key = tau_abs.tobytes()
        cos = self._cos_cache.get(key)
        if cos is None:
            cos = np.cos(np.outer(self.omega, tau_abs)) * self.weights[:, None]
            if len(self._cos_cache) < 8:
                self._cos_cache[key] = cos
        return cos

    def phi_time(self, n, taus):
        """φ(τ) at the delays ``taus``; shape (max(B, len(n)), T)."""
        n = self._atom_numbers(n)
        tau_abs = np.abs(np.atleast_1d(np.asarray(taus, dtype=float)))
        order = self.freq.series_order
        sums = _taylor_sums(n, np.exp(self.log_a), order)

        A = self.A[:, None]
        prefactor = -2.0 * self.A * self.r**2
        remainder = self.phi_freq(n)
        analytic = np.zeros((self.A.size, tau_abs.size), dtype=complex)
        u_pow = self.u
        for j in range(order):
            c = prefactor * sums[j] * (-self.K) ** j
            remainder = remainder - c[:, None] * u_pow
            analytic = analytic + c[:, None] * _lorentzian_power_transform(A, j + 1, tau_abs[None, :])
            u_pow = u_pow * self.u
        numeric = (remainder @ self._cosines(tau_abs)) / math.pi
        return analytic + numeric


def phi_ensemble_freq(params: EmitterChainParams, drive: DriveConfig, omega, method: str = "closed"):
    """Collective incoherent pair amplitude φ(ω) of the chain.

    Parameters
    ----------
    method : {"closed", "sum"}
        ``"closed"`` sums the geometric series analytically and accepts real
        atom numbers. ``"sum"`` adds the per-emitter terms one by one and is
        restricted to integer N; it serves as the reference for the closed form.
    """
    n = drive.atom_number
    w = np.asarray(omega, dtype=float)
    if n == 0:
        out = np.zeros(w.shape, dtype=complex)
        return out[()] if out.ndim == 0 else out
    if method == "sum":
        if n != int(n):
            raise ValueError(f"direct sum needs an integer atom number, got {n!r}")
        n = int(n)
        t_d = single_atom_transmission(params, drive.detuning)
        a = t_d * t_d
        b = single_atom_transmission(params, drive.detuning + w) * single_atom_transmission(
            params, drive.detuning - w
        )
        total = np.zeros(np.shape(b), dtype=complex)
        for m in range(1, n + 1):
            total = total + a ** (m - 1) * b ** (n - m)
        out = phi_atom_freq(params, drive.detuning, w) * total
    elif method == "closed":
        log_a = 2.0 * np.log(single_atom_transmission(params, drive.detuning))
        log_b = np.log(single_atom_transmission(params, drive.detuning + w)) + np.log(
            single_atom_transmission(params, drive.detuning - w)
        )
        out = phi_atom_freq(params, drive.detuning, w) * _geometric_ratio(n, log_a, log_b)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = np.asarray(out)
    return out[()] if out.ndim == 0 else out


def phi_at_delays(
    params: EmitterChainParams,
    drive: DriveConfig,
    taus,
    freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID,
) -> np.ndarray:
    """φ(τ) at arbitrary delays (seconds)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if drive.atom_number == 0:
        return np.zeros(taus.shape, dtype=complex)
    spec = _Spectrum(params.beta, params.gamma_tot, drive.detuning, freq)
    uniq, inverse = np.unique(np.abs(taus), return_inverse=True)
    return spec.phi_time(drive.atom_number, uniq)[0][inverse]


def phi_ensemble_time(
    params: EmitterChainParams,
    drive: DriveConfig,
    grid: DelayGrid,
    freq: FrequencyGrid = DEFAULT_FREQUENCY_GRID,
) -> TwoPhotonState:
    """Sample φ(τ) on ``grid`` and pair it with the coherent amplitude."""
    grid.check(params, freq)
    drive.check_low_saturation(params)
    taus = grid.taus
    if drive.atom_number == 0:
        phi = np.zeros(taus.shape, dtype=complex)
    else:
        spec = _Spectrum(params.beta, params.gamma_tot, drive.detuning, freq)
        half = spec.phi_time(drive.atom_number, taus[grid.half_count:])[0]
        phi = np.concatenate([half[:0:-1], half])
    return TwoPhotonState(coherent_amp=coherent_pair_amplitude(params, drive), phi_tau=phi, grid=grid)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------


def _check_coherent(state: TwoPhotonState) -> complex:
    amp = complex(state.coherent_amp)
    if abs(amp) < MIN_COHERENT_AMP:
        raise NumericalError("coherent amplitude vanishes; g2 is undefined for an opaque medium")
    return amp


def g2_of_tau(state: TwoPhotonState) -> np.ndarray:
    """Normalized correlation ``|1 + φ(τ)/(α²/2)|²`` (1 for a coherent state)."""
    amp = _check_coherent(state)
    return np.abs(1.0 + state.phi_tau / amp) ** 2


def relative_phase(state: TwoPhotonState, tau: float) -> float:
    """Principal value of ``arg φ(τ) - arg(α²/2)`` in (-π, π]."""
    amp = _check_coherent(state)
    phi = state.phi_at(tau)
    if abs(phi) < MIN_COHERENT_AMP:
        raise NumericalError(f"phase undefined: phi({tau!r}) vanishes")
    return principal_angle(np.angle(phi / amp))


def relative_amplitude_eta(state: TwoPhotonState, tau: float) -> float:
    """Magnitude ratio ``|φ(τ)| / |α²/2|``."""
    amp = _check_coherent(state)
    return abs(state.phi_at(tau)) / abs(amp)


def principal_angle(x):
    """Wrap angles to (-π, π]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    y = np.where(y <= -np.pi, y + 2.0 * np.pi, y)
    return float(y) if np.ndim(y) == 0 else y
