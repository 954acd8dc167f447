import math

import numpy as np
import pytest

import oracles
from twophoton.errors import MatchingError
from twophoton.matching import (
    PairRatio,
    approx_eta_exponential,
    approx_phase_linear,
    find_matching_n,
    fringe_scan,
    matched_ratio,
    phase_slope_fit,
    visibility,
)
from twophoton.model import single_atom_transmission

G = 2 * math.pi * 5.22e6
N_RESONANT = 222.10312606656342


def quad_eta(n, detuning=0.0, beta=0.007):
    phi0 = oracles.phi_ensemble_tau_quad(beta, G, detuning, n, 0.0)
    return abs(phi0) / abs(oracles.t_single(beta, G, detuning)) ** (2 * n)


def test_resonant_match_value(params):
    mp = find_matching_n(params, 0.0)
    assert mp.n_match == pytest.approx(N_RESONANT, rel=1e-9)
    assert mp.residual < 1e-6
    assert mp.tau_star == 0.0


def test_resonant_match_brackets_integer_oracle():
    # the integer-N quadrature oracle crosses η = 1 between 222 and 223
    assert quad_eta(222) < 1.0 < quad_eta(223)


def test_match_gives_antibunching(params):
    mp, ratio = matched_ratio(params, 0.0)
    assert abs(1 + ratio) ** 2 < 1e-6
    assert abs(ratio) == pytest.approx(1.0, abs=1e-6)


def test_match_with_delay_needs_more_atoms(params):
    for d in (0.0, -0.3 * G):
        n0 = find_matching_n(params, d).n_match
        n1 = find_matching_n(params, d, 1.0 / G).n_match
        assert n1 > n0


def test_match_symmetric_in_tau_star(params):
    a = find_matching_n(params, -0.2 * G, 1.0 / G).n_match
    b = find_matching_n(params, -0.2 * G, -1.0 / G).n_match
    assert a == b


def test_match_detuning_window(params):
    with pytest.raises(MatchingError, match="validity window"):
        find_matching_n(params, 2.5 * G)
    # the window is configurable
    assert find_matching_n(params, 0.5 * G, max_detuning_ratio=0.6).n_match > 0


def test_match_no_crossing_below_cap(params):
    with pytest.raises(MatchingError, match="eta < 1"):
        find_matching_n(params, 0.0, n_cap=100.0)


def test_match_guess_reproduces_ladder(params):
    ladder = find_matching_n(params, -0.35 * G).n_match
    guided = find_matching_n(params, -0.35 * G, n_guess=ladder * 0.9).n_match
    assert guided == pytest.approx(ladder, rel=1e-12)


def test_pair_ratio_zero_atoms(params):
    r = PairRatio(params, 0.0)
    assert r.log_eta_phase(0.0)[0] == -math.inf
    assert r.eta(1e-3) < 1e-3


def test_fringe_scan_basic(params):
    ds = np.array([0.0, -0.2, -0.4]) * G
    pts = fringe_scan(params, ds)
    assert all(p.ok for p in pts)
    assert pts[0].phase_zero == pytest.approx(math.pi, abs=1e-9)
    assert pts[0].g2_at_tau_star < 1e-6
    for p in pts:
        assert 0 <= p.g2_at_tau_star <= 4 + 1e-9
        assert p.g2_at_tau_star == pytest.approx(abs(1 + np.exp(1j * p.phase_zero)) ** 2, abs=1e-6)


def test_fringe_scan_marks_failures(params):
    pts = fringe_scan(params, [0.0, 3.0 * G, -0.1 * G])
    assert pts[0].ok and pts[2].ok
    bad = pts[1]
    assert not bad.ok and "validity window" in bad.error
    assert math.isnan(bad.n_match) and math.isnan(bad.g2_at_tau_star)
    # unwrapping carries over the failed point
    assert abs(pts[2].phase_unwrapped - pts[0].phase_unwrapped) < math.pi


def test_fringe_scan_unwrapped_is_continuous(params):
    ds = np.linspace(0.0, -0.5 * G, 26)
    pts = fringe_scan(params, ds)
    ph = np.array([p.phase_unwrapped for p in pts])
    assert np.all(np.abs(np.diff(ph)) < math.pi)
    # the phase falls through more than one full turn on this range
    assert ph[0] - ph[-1] > 2 * math.pi
    assert np.all(np.diff(ph) < 0)


def test_fringe_reaches_bunching_maximum(params):
    ds = np.linspace(-0.15 * G, -0.3 * G, 16)
    pts = fringe_scan(params, ds)
    assert max(p.g2_at_tau_star for p in pts) > 3.99


def test_approx_phase_linear(params):
    assert approx_phase_linear(params, N_RESONANT, 0.0) == math.pi
    assert approx_phase_linear(params, N_RESONANT, 0.01 * G) > math.pi
    assert approx_phase_linear(params, N_RESONANT, -0.01 * G) < math.pi
    assert approx_phase_linear(params, 100.0, 0.1 * G) == pytest.approx(math.pi + 80.0)


def test_approx_eta_exponential(params):
    d = -0.2 * G
    assert approx_eta_exponential(params, d, 300.0, 300.0) == 1.0
    assert approx_eta_exponential(params, d, 250.0, 300.0) < 1.0
    t2 = abs(single_atom_transmission(params, d)) ** 2
    assert approx_eta_exponential(params, d, 290.0, 300.0) == pytest.approx(t2**10)


@pytest.mark.parametrize("d", [0.0, -0.25, 0.3])
def test_log_eta_slope_near_match(params, d):
    # ln η = ln|φ(0)| - N ln|t|²; the exponential factor dominates, while the
    # slow decay of |φ(0)| with N trims the slope by roughly 10 %
    d *= G
    nm = find_matching_n(params, d).n_match
    ratio = PairRatio(params, d)
    ns = nm * np.array([0.9, 0.95, 1.0, 1.05, 1.1])
    log_eta = np.array([ratio.log_eta_phase(n)[0] for n in ns])
    slope = np.polyfit(ns, log_eta, 1)[0]
    curvature = np.polyfit(ns, log_eta, 2)[0]
    # quadratic term stays a few percent of the linear change over the window
    assert abs(curvature) * (0.1 * nm) ** 2 < 0.03 * slope * 0.1 * nm
    attenuation = -math.log(abs(single_atom_transmission(params, d)) ** 2)
    log_phi = log_eta - ns * attenuation
    phi_slope = np.polyfit(ns, log_phi, 1)[0]
    assert slope == pytest.approx(attenuation + phi_slope, rel=1e-9)
    assert -0.15 * attenuation < phi_slope < 0
    assert np.all(np.diff(log_eta) > 0)


def test_phase_slope_fit(params):
    fit = phase_slope_fit(params, np.linspace(-0.2, 0.2, 9) * G)
    assert fit.r_squared > 0.99
    assert fit.intercept == pytest.approx(math.pi, abs=0.05)
    assert fit.n_match_resonant == pytest.approx(N_RESONANT, rel=1e-9)
    assert fit.linear_slope == pytest.approx(8 * N_RESONANT)
    assert fit.beta_scaled_linear_slope == pytest.approx(8 * 0.007 * N_RESONANT)
    # the model slope sits near 8βÑ, far from the literal 8Ñ
    assert 0.5 < fit.slope / fit.beta_scaled_linear_slope < 1.5
    assert fit.slope == pytest.approx(13.4, abs=0.2)


def test_visibility_examples():
    assert visibility([0.0, 4.0]) == 1.0
    assert visibility([1.0, 1.0]) == 0.0
    assert visibility([0.4, 2.7]) == pytest.approx(2.3 / 3.1)
    assert visibility([0.4, float("nan"), 2.7]) == pytest.approx(2.3 / 3.1)
    assert visibility([0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        visibility([])
    with pytest.raises(ValueError):
        visibility([1.0, -0.1])
