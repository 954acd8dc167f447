"""Saturated Beer-Lambert transmission and the (β, N) fit to power scans."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigError, FitError
from .model import EmitterChainParams, saturation_power, single_atom_transmission

_INV_E = math.exp(-1.0)
#: Below this saturation parameter the transmission uses its analytic limit.
LOW_POWER_LIMIT = 1e-12
MAX_LM_STEPS = 200


def _halley_w(x: float, w: float) -> float:
    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 4e-16 * (1.0 + abs(w)):
            break
    return w


def _w_from_log(log_x: float) -> float:
    # solves w + ln w = log_x for large arguments, where x itself would overflow
    w = log_x - math.log(log_x)
    for _ in range(64):
        f = w + math.log(w) - log_x
        fp = 1.0 + 1.0 / w
        fpp = -1.0 / (w * w)
        step = f / (fp - 0.5 * f * fpp / fp)
        w -= step
        if abs(step) <= 4e-16 * w:
            break
    return w


def _lambert_w0_scalar(x: float) -> float:
    if math.isnan(x):
        return math.nan
    if x < -_INV_E:
        if x > -_INV_E - 1e-15:
            return -1.0
        raise ValueError(f"Lambert W0 is real only for x >= -1/e, got {x!r}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    if x < -0.25:
        # branch-point expansion in p = sqrt(2(ex + 1))
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
        if p < 1e-7:
            return w
    elif x < 1.0:
        w = x - x * x + 1.5 * x**3
    elif x < 3.0:
        w = 0.5 * math.log1p(x) + 0.2
    else:
        lx = math.log(x)
        w = lx - math.log(lx)
    return _halley_w(x, w)


def lambert_w0(x):
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Accepts scalars or arrays. Starts from a series (near the branch point and
    near zero) or from ``ln x - ln ln x`` and polishes with Halley steps.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return _lambert_w0_scalar(float(arr))
    return np.vectorize(_lambert_w0_scalar, otypes=[float])(arr)


def transmission_saturated(params: EmitterChainParams, n: float, input_power):
    """Extended Beer-Lambert transmission ``W(s·e^(s - 4βN)) / s`` with s = P/P_sat."""
    p = np.asarray(input_power, dtype=float)
    if np.any(p <= 0):
        raise ValueError("input power must be positive")
    out = _transmission(params.beta, n, p / params.p_sat)
    return float(out) if out.ndim == 0 else out


def _transmission(beta: float, n: float, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    od = 4.0 * beta * n
    flat = s.reshape(-1)
    out = np.empty_like(flat)
    for i, si in enumerate(flat):
        if si < LOW_POWER_LIMIT or od == 0.0:
            out[i] = math.exp(-od)
            continue
        log_x = math.log(si) + si - od
        w = _lambert_w0_scalar(math.exp(log_x)) if log_x < 700.0 else _w_from_log(log_x)
        # W(s·e^s)/s rounds a hair above one when od is tiny
        out[i] = min(w / si, 1.0)
    return out.reshape(s.shape)


def od_from(params: EmitterChainParams, n: float) -> float:
    """Resonant optical depth ``-N ln|t(0)|²``."""
    if n < 0:
        raise ValueError("atom number must be non-negative")
    t0 = abs(single_atom_transmission(params, 0.0))
    return -n * math.log(t0 * t0)


def atom_number_from_od(params: EmitterChainParams, od: float) -> float:
    t0 = abs(single_atom_transmission(params, 0.0))
    return od / (-math.log(t0 * t0))


# ---------------------------------------------------------------------------
# Data and fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaturationDataset:
    powers: np.ndarray
    transmissions: np.ndarray
    metadata: str = ""

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=float)
        t = np.asarray(self.transmissions, dtype=float)
        object.__setattr__(self, "powers", p)
        object.__setattr__(self, "transmissions", t)
        if p.ndim != 1 or p.shape != t.shape:
            raise ValueError("powers and transmissions must be 1-D arrays of equal length")
        if np.any(p <= 0) or np.any(np.diff(p) <= 0):
            raise ValueError("powers must be positive and strictly increasing")
        if np.any(t <= 0) or np.any(t > 1.05):
            raise ValueError("transmissions must lie in (0, 1.05]")

    @property
    def decades(self) -> float:
        return math.log10(self.powers[-1] / self.powers[0])


@dataclass(frozen=True)
class SaturationFit:
    beta_hat: float
    n_hat: float
    p_sat_hat: float
    covariance: np.ndarray = field(repr=False)
    residual_norm: float
    iterations: int = 0

    @property
    def beta_std(self) -> float:
        return math.sqrt(max(self.covariance[0, 0], 0.0))

    @property
    def n_std(self) -> float:
        return math.sqrt(max(self.covariance[1, 1], 0.0))


def fit_saturation(
    dataset: SaturationDataset,
    params_prior: EmitterChainParams,
    *,
    weighting: str = "linear",
    max_steps: int = MAX_LM_STEPS,
) -> SaturationFit:
    """Least-squares fit of (β, N) to a transmission-vs-power scan.

    The saturation power is tied to β through ħω_LΓ/(8β). With
    ``weighting="log"`` the residuals are taken on ln T instead of T. The
    start point uses the prior β and the N that reproduces the lowest-power
    transmission.
    """
    if len(dataset.powers) < 4:
        raise FitError("need at least 4 points to fit (beta, N)")
    if dataset.decades < 1.0:
        raise FitError(f"powers span only {dataset.decades:.2f} decades; need at least 1")
    if weighting not in ("linear", "log"):
        raise ValueError(f"unknown weighting {weighting!r}")

    gamma = params_prior.gamma_tot
    wavelength = params_prior.probe_wavelength
    p_sat_per_beta = saturation_power(1.0, gamma, wavelength)
    powers = dataset.powers
    data = dataset.transmissions

    def model(theta):
        beta, n = theta
        return _transmission(beta, n, powers * beta / p_sat_per_beta)

    if weighting == "linear":

        def residuals(theta):
            return model(theta) - data

    else:
        log_data = np.log(data)

        def residuals(theta):
            return np.log(model(theta)) - log_data

    beta0 = params_prior.beta
    n0 = max(-math.log(min(data[0], 0.999)) / (4.0 * beta0), 1.0)
    try:
        res = least_squares(
            residuals,
            x0=[beta0, n0],
            method="lm",
            x_scale=[beta0, n0],
            max_nfev=max_steps * 3,
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
    except (ValueError, OverflowError) as exc:
        raise FitError(f"saturation fit failed: {exc}") from exc
    if res.status <= 0:
        raise FitError(f"saturation fit did not converge: {res.message}")
    beta_hat, n_hat = (float(v) for v in res.x)
    if not (beta_hat > 0 and n_hat > 0):
        raise FitError(f"unphysical fit result beta={beta_hat:.3g}, N={n_hat:.3g}")

    jac = res.jac
    dof = max(len(data) - 2, 1)
    s2 = float(res.fun @ res.fun) / dof
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.nan)
    return SaturationFit(
        beta_hat=beta_hat,
        n_hat=n_hat,
        p_sat_hat=saturation_power(beta_hat, gamma, wavelength),
        covariance=cov,
        residual_norm=float(np.linalg.norm(res.fun)),
        iterations=int(res.nfev),
    )


def synthetic_dataset(params: EmitterChainParams, n: float, powers, noise: float = 0.0, seed=None):
    """Transmission scan from the model, optionally with Gaussian noise on T."""
    powers = np.asarray(powers, dtype=float)
    t = np.asarray(transmission_saturated(params, n, powers), dtype=float)
    if noise > 0:
        rng = np.random.default_rng(seed)
        t = np.clip(t + noise * rng.standard_normal(t.shape), 1e-6, 1.05)
    return SaturationDataset(powers, t, metadata=f"synthetic beta={params.beta} N={n} noise={noise}")


def read_saturation_csv(path) -> SaturationDataset:
    """Read a ``power_watts,transmission`` CSV file."""
    path = Path(path)
    powers, trans = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["power_watts", "transmission"]:
            raise ConfigError(f"{path}: expected header 'power_watts,transmission', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                powers.append(float(row[0]))
                trans.append(float(row[1]))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    try:
        return SaturationDataset(np.array(powers), np.array(trans), metadata=str(path))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def write_saturation_csv(path, dataset: SaturationDataset) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["power_watts", "transmission"])
        for p, t in zip(dataset.powers, dataset.transmissions):
            w.writerow([repr(float(p)), repr(float(t))])
