import dataclasses
import math

import numpy as np
import pytest

from twophoton.matching import find_matching_n, fringe_scan, visibility
from twophoton.model import FAST_FREQUENCY_GRID, DriveConfig
from twophoton.montecarlo import (
    BETA_FLOOR,
    ImperfectionConfig,
    averaged_fringe,
    sample_operating_point,
    sigma_family,
    visibility_vs_sigma,
)
from twophoton.saturation import od_from

TWO_PI = 2 * math.pi
PEAK = -TWO_PI * 1.2e6  # first bunching maximum of the matched fringe

IDEAL = ImperfectionConfig(od_bin_width=0.0, sigma_detuning=0.0, sigma_beta=0.0, trials=8, seed=3)
OD_ONLY = ImperfectionConfig(sigma_detuning=0.0, sigma_beta=0.0, trials=2000, seed=1)


def test_config_validation():
    with pytest.raises(ValueError):
        ImperfectionConfig(od_bin_width=-1.0)
    with pytest.raises(ValueError):
        ImperfectionConfig(sigma_beta=math.nan)
    with pytest.raises(ValueError):
        ImperfectionConfig(trials=0)
    with pytest.raises(ValueError):
        ImperfectionConfig(trials=2.5)
    with pytest.raises(ValueError):
        ImperfectionConfig(averaging="median")
    cfg = ImperfectionConfig()
    assert cfg.od_bin_width == 1.7
    assert cfg.sigma_detuning == pytest.approx(TWO_PI * 200e3)
    assert cfg.sigma_beta == 0.002 and cfg.trials == 2000


def test_zero_widths_return_nominal(params):
    nominal = DriveConfig(-0.1 * params.gamma_tot, 250.0)
    for i in range(20):
        op = sample_operating_point(params, nominal, IDEAL, i)
        assert op.beta == params.beta
        assert op.n == 250.0
        assert op.detuning == nominal.detuning


def test_od_draws_are_flat(params):
    nominal = DriveConfig(0.0, 222.0)
    cfg = ImperfectionConfig(sigma_detuning=0.0, sigma_beta=0.0, seed=5)
    od = np.array([od_from(params, sample_operating_point(params, nominal, cfg, i).n) for i in range(10_000)])
    od0 = od_from(params, 222.0)
    assert np.all(np.abs(od - od0) <= 0.85 + 1e-9)
    assert od.var() == pytest.approx(1.7**2 / 12, rel=0.05)


def test_detuning_draws_are_gaussian(params):
    nominal = DriveConfig(0.0, 222.0)
    cfg = ImperfectionConfig(od_bin_width=0.0, sigma_beta=0.0, seed=6)
    d = np.array([sample_operating_point(params, nominal, cfg, i).detuning for i in range(5000)])
    assert abs(d.mean()) < 4 * cfg.sigma_detuning / math.sqrt(5000)
    assert d.std() == pytest.approx(cfg.sigma_detuning, rel=0.05)


def test_beta_truncation(params):
    nominal = DriveConfig(0.0, 222.0)
    cfg = ImperfectionConfig(sigma_beta=0.01, seed=7)
    betas = [sample_operating_point(params, nominal, cfg, i).beta for i in range(3000)]
    assert min(betas) > BETA_FLOOR


def test_draws_deterministic_and_order_free(params):
    nominal = DriveConfig(0.0, 222.0)
    cfg = ImperfectionConfig(seed=11)
    forward = [sample_operating_point(params, nominal, cfg, i) for i in range(50)]
    backward = [sample_operating_point(params, nominal, cfg, i) for i in reversed(range(50))]
    assert forward == backward[::-1]
    other = sample_operating_point(params, nominal, dataclasses.replace(cfg, seed=12), 0)
    assert other != forward[0]


def test_zero_widths_reproduce_ideal_fringe(params):
    ds = np.array([0.0, -0.1, -0.2, -0.3]) * params.gamma_tot
    ideal = fringe_scan(params, ds, freq=FAST_FREQUENCY_GRID)
    for mode in ("pooled", "per-run"):
        pts = averaged_fringe(params, ds, dataclasses.replace(IDEAL, averaging=mode))
        for p, q in zip(pts, ideal):
            assert p.mean_g2 == pytest.approx(q.g2_at_tau_star, abs=1e-9)
            assert p.std_g2 == pytest.approx(0.0, abs=1e-9)
            assert p.trials_used == 8


def test_zero_widths_visibility_one(params):
    ds = np.linspace(0.0, PEAK, 7)
    table = visibility_vs_sigma(params, ds, [IDEAL])
    assert table[0][0] == 0.0
    assert table[0][1] == pytest.approx(1.0, abs=1e-6)


def test_averages_deterministic(params):
    cfg = dataclasses.replace(OD_ONLY, sigma_detuning=TWO_PI * 100e3, trials=300)
    a = averaged_fringe(params, [0.0, PEAK], cfg)
    b = averaged_fringe(params, [0.0, PEAK], cfg)
    assert a == b


def test_pooled_average_contracts_fringe(params):
    ideal = [p.g2_at_tau_star for p in fringe_scan(params, [0.0, PEAK], freq=FAST_FREQUENCY_GRID)]
    lo, hi = averaged_fringe(params, [0.0, PEAK], OD_ONLY)
    assert ideal[0] < lo.mean_g2 < 1.0
    assert 1.0 < hi.mean_g2 < ideal[1] < 4.0 + 1e-9
    assert lo.std_g2 > 0 and hi.std_g2 > 0
    assert visibility([lo.mean_g2, hi.mean_g2]) < 1.0


def test_per_run_mean_overshoots_at_peak(params):
    # g²(0) is convex in the trial phase, so the plain mean at the peak exceeds 4
    cfg = dataclasses.replace(OD_ONLY, averaging="per-run")
    lo, hi = averaged_fringe(params, [0.0, PEAK], cfg)
    assert lo.mean_g2 > 0.0
    assert hi.mean_g2 > 4.0


def test_standard_error_scaling(params):
    d = -0.1 * params.gamma_tot
    matches = {d: find_matching_n(params, d, freq=FAST_FREQUENCY_GRID).n_match}
    scaled = []
    for trials in (25, 100, 400):
        means = [
            averaged_fringe(params, [d], dataclasses.replace(OD_ONLY, trials=trials, seed=s), matches=matches)[0].mean_g2
            for s in range(60)
        ]
        scaled.append(np.std(means, ddof=1) * math.sqrt(trials))
    scaled = np.array(scaled)
    assert np.all(np.abs(scaled / scaled.mean() - 1.0) < 0.2)


def test_failed_match_propagates(params):
    pts = averaged_fringe(params, [0.0, 3.0 * params.gamma_tot], IDEAL)
    assert pts[0].trials_used == 8
    assert pts[1].trials_used == 0 and math.isnan(pts[1].mean_g2) and math.isnan(pts[1].n_match)


def test_sigma_family():
    fam = sigma_family(OD_ONLY, [0.0, 1.0, 2.0])
    assert [c.sigma_detuning for c in fam] == [0.0, 1.0, 2.0]
    assert all(c.od_bin_width == 1.7 and c.seed == 1 for c in fam)


def test_visibility_drops_with_detuning_noise(params):
    ds = np.linspace(-TWO_PI * 1.4e6, TWO_PI * 0.2e6, 9)
    fam = sigma_family(dataclasses.replace(OD_ONLY, trials=400), TWO_PI * np.array([0.0, 400e3]))
    (_, v0), (_, v4) = visibility_vs_sigma(params, ds, fam)
    assert v4 < v0 < 1.0
