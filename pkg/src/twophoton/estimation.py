"""Coincidence histograms and the Poisson maximum-likelihood contrast fit."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import gammaln
from scipy.stats import chi2

from .errors import ConfigError, FitError

RATE_FLOOR = 1e-12
DEFAULT_C_BOUNDS = (0.0, 1.5)
#: Confidence level of the profile-likelihood interval; 0.6827 gives the ΔlnL = 1/2 interval.
DEFAULT_CI_LEVEL = 0.95
#: Bins with Γ|τ| above this are treated as uncorrelated when estimating the baseline.
BASELINE_CUTOFF = 8.0


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Binned coincidences; ``baseline_expected`` is the mean count per bin at g2 = 1."""

    bin_centers: np.ndarray
    counts: np.ndarray
    baseline_expected: float
    bin_width: Optional[float] = None

    def __post_init__(self):
        tau = np.asarray(self.bin_centers, dtype=float)
        counts = np.asarray(self.counts)
        if tau.ndim != 1 or tau.shape != counts.shape:
            raise ValueError("bin_centers and counts must be 1-D arrays of equal length")
        if tau.size > 1:
            d = np.diff(tau)
            if np.any(d <= 0):
                raise ValueError("bin_centers must be strictly increasing")
            if not np.allclose(d, d[0], rtol=1e-6, atol=0):
                raise ValueError("bin_centers must be uniformly spaced")
        if counts.size and (np.any(counts < 0) or np.any(counts != np.round(counts))):
            raise ValueError("counts must be non-negative integers")
        object.__setattr__(self, "bin_centers", tau)
        object.__setattr__(self, "counts", counts.astype(np.int64))
        if self.bin_width is None and tau.size > 1:
            object.__setattr__(self, "bin_width", float(tau[1] - tau[0]))


@dataclass(frozen=True)
class ContrastFit:
    c_hat: float
    ci_lower: float
    ci_upper: float
    g2_zero_hat: float
    log_likelihood: float
    g2_zero_lower: float = math.nan
    g2_zero_upper: float = math.nan
    baseline: float = math.nan
    at_boundary: bool = False
    ci_clipped: Tuple[bool, bool] = field(default=(False, False))


def synth_histogram(model_g2, baseline: float, seed: int, *, bin_centers) -> CoincidenceHistogram:
    """Draw Poisson counts with mean ``baseline·g2`` in every bin."""
    g2 = np.asarray(model_g2, dtype=float)
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    if np.any(g2 < 0):
        raise ValueError("model g2 must be non-negative")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(baseline * g2)
    return CoincidenceHistogram(np.asarray(bin_centers, dtype=float), counts, float(baseline))


def g2_estimate_from_histogram(hist: CoincidenceHistogram) -> np.ndarray:
    if not hist.baseline_expected > 0:
        raise ValueError("baseline_expected must be positive")
    return hist.counts / hist.baseline_expected


def estimate_baseline(hist: CoincidenceHistogram, gamma_tot: float, cutoff: float = BASELINE_CUTOFF) -> float:
    """Mean count over the uncorrelated wings ``Γ|τ| > cutoff``."""
    wings = np.abs(hist.bin_centers) * gamma_tot > cutoff
    if not np.any(wings):
        raise FitError(f"no bins with Gamma*|tau| > {cutoff}; cannot estimate the baseline")
    mean = float(hist.counts[wings].mean())
    if mean <= 0:
        raise FitError("baseline wings contain no counts")
    return mean


def _rates(c, g2, baseline):
    return np.maximum(baseline * (c * (g2 - 1.0) + 1.0), RATE_FLOOR)


def log_likelihood(c: float, counts, model_g2, baseline: float) -> float:
    """Poisson log-likelihood of the counts under ``g2_model = C(g2 - 1) + 1``."""
    lam = _rates(c, np.asarray(model_g2, dtype=float), baseline)
    k = np.asarray(counts, dtype=float)
    return float(np.sum(k * np.log(lam) - lam - gammaln(k + 1.0)))


def _profile_baseline(c, counts, g2):
    shape = np.maximum(c * (g2 - 1.0) + 1.0, RATE_FLOOR)
    return float(counts.sum()) / float(shape.sum())


def mle_fit_contrast(
    hist: CoincidenceHistogram,
    model_g2,
    *,
    c_bounds: Tuple[float, float] = DEFAULT_C_BOUNDS,
    fit_baseline: bool = False,
    ci_level: float = DEFAULT_CI_LEVEL,
    xatol: float = 1e-9,
) -> ContrastFit:
    """Maximum-likelihood contrast factor C with profile-likelihood interval.

    The interval is where the log-likelihood lies within ``χ²₁(ci_level)/2`` of
    its maximum (1.92 at the default 95 %, 1/2 at 68.27 %); it is clipped to ``c_bounds`` when the likelihood does not drop far enough
    inside the search range. With ``fit_baseline`` the baseline is profiled
    out analytically for each C instead of taken from the histogram.
    """
    g2 = np.asarray(model_g2, dtype=float)
    counts = np.asarray(hist.counts, dtype=float)
    if g2.shape != counts.shape:
        raise ValueError("model and histogram must share the same grid")
    if np.all(np.abs(g2 - 1.0) < 1e-12):
        raise FitError("model g2 is flat; the contrast factor is not identifiable")
    lo, hi = c_bounds
    if not lo < hi:
        raise ValueError("c_bounds must be increasing")
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must lie in (0, 1)")
    delta = 0.5 * float(chi2.ppf(ci_level, 1))

    def baseline_for(c):
        return _profile_baseline(c, counts, g2) if fit_baseline else hist.baseline_expected

    def loglik(c):
        return log_likelihood(c, counts, g2, baseline_for(c))

    res = minimize_scalar(lambda c: -loglik(c), bounds=(lo, hi), method="bounded", options={"xatol": xatol})
    c_hat = float(res.x)
    best = loglik(c_hat)
    for edge in (lo, hi):
        ll = loglik(edge)
        if ll > best:
            c_hat, best = edge, ll
    at_boundary = abs(c_hat - lo) <= 1e-6 or abs(c_hat - hi) <= 1e-6
    if at_boundary:
        warnings.warn(f"contrast estimate {c_hat:.6g} sits on the search boundary {c_bounds}", RuntimeWarning)

    target = best - delta

    def drop(c):
        return loglik(c) - target

    clipped_lo = clipped_hi = False
    if c_hat > lo and drop(lo) < 0:
        ci_lo = brentq(drop, lo, c_hat, xtol=1e-12)
    else:
        ci_lo, clipped_lo = lo, True
    if c_hat < hi and drop(hi) < 0:
        ci_hi = brentq(drop, c_hat, hi, xtol=1e-12)
    else:
        ci_hi, clipped_hi = hi, True

    g2_0 = float(g2[np.argmin(np.abs(hist.bin_centers))])

    def g2_zero(c):
        return c * (g2_0 - 1.0) + 1.0

    g_lo, g_hi = sorted((g2_zero(ci_lo), g2_zero(ci_hi)))
    return ContrastFit(
        c_hat=c_hat,
        ci_lower=float(ci_lo),
        ci_upper=float(ci_hi),
        g2_zero_hat=g2_zero(c_hat),
        log_likelihood=best,
        g2_zero_lower=g_lo,
        g2_zero_upper=g_hi,
        baseline=baseline_for(c_hat),
        at_boundary=at_boundary,
        ci_clipped=(clipped_lo, clipped_hi),
    )


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".json")


def write_histogram(path, hist: CoincidenceHistogram) -> Path:
    """Write ``tau_seconds,counts`` plus the JSON sidecar; returns the sidecar path."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau_seconds", "counts"])
        for tau, k in zip(hist.bin_centers, hist.counts):
            w.writerow([repr(float(tau)), int(k)])
    meta = {"baseline_expected": float(hist.baseline_expected), "bin_width_seconds": hist.bin_width}
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return side


def read_histogram(path, sidecar=None) -> CoincidenceHistogram:
    path = Path(path)
    taus, counts = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["tau_seconds", "counts"]:
            raise ConfigError(f"{path}: expected header 'tau_seconds,counts', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                taus.append(float(row[0]))
                k = float(row[1])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
            if k < 0 or k != int(k):
                raise ConfigError(f"{path}:{lineno}: counts must be non-negative integers")
            counts.append(int(k))
    side = Path(sidecar) if sidecar is not None else sidecar_path(path)
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{side}: {exc}") from None
    if not isinstance(meta, dict) or set(meta) - {"baseline_expected", "bin_width_seconds"}:
        raise ConfigError(f"{side}: unexpected keys in histogram sidecar")
    if "baseline_expected" not in meta:
        raise ConfigError(f"{side}: missing 'baseline_expected'")
    try:
        return CoincidenceHistogram(
            np.array(taus), np.array(counts, dtype=np.int64), float(meta["baseline_expected"]),
            bin_width=meta.get("bin_width_seconds"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
