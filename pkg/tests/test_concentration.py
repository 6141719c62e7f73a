import math

import numpy as np
import pytest
from scipy import stats

from pco.concentration import (CalibrationError, allowed_violations, band, calibrate_constants,
                               calibrated_moments, simulate_Z, tail_check)
from pco.penalty import NoiseMoments, UncalibratedError, default_moments, sigma_p
from pco.sequence import NoiseSpec


def test_simulate_Z_chi_square():
    Z = simulate_Z(NoiseSpec("gaussian", 1), 2, 1, 200000)
    assert abs(Z.mean() - 1) < 4 * math.sqrt(2 / len(Z))
    Z = simulate_Z(NoiseSpec("gaussian", 2), 2, 20, 20000)
    assert abs(Z.mean() - 20) < 3 * math.sqrt(40 / len(Z))
    ks = stats.kstest(simulate_Z(NoiseSpec("gaussian", 3), 2, 5, 5000), "chi2", args=(5,))
    assert ks.pvalue > 1e-3


def test_simulate_Z_rademacher_and_replay():
    assert np.all(simulate_Z(NoiseSpec("rademacher"), 3.5, 7, 100) == 7.0)
    a = simulate_Z(NoiseSpec("gaussian", 5), 1.5, 10, 1000)
    assert np.array_equal(a, simulate_Z(NoiseSpec("gaussian", 5), 1.5, 10, 1000))
    with pytest.raises(ValueError):
        simulate_Z(NoiseSpec(), 2, 0, 10)


def test_band_edges():
    lo, hi = band(default_moments(2), 50, 3)
    assert lo == pytest.approx(25 - 4 * 3)
    assert hi == pytest.approx(75 + 4 * 3)


def test_tail_check_gaussian_p2():
    rep = tail_check(NoiseSpec("gaussian", 11), 2, 50, default_moments(2), [3], 100000)
    assert rep.passed
    assert rep.bound[0] == pytest.approx(2 * math.exp(-3))
    assert abs(rep.bound[0] - 0.0996) < 1e-4


def test_tail_check_gaussian_p1():
    rep = tail_check(NoiseSpec("gaussian", 12), 1, 100, default_moments(1), [1, 2, 3], 50000)
    assert rep.passed


def test_tail_check_rademacher_inside_band():
    m = NoiseMoments(3, 1.0, 0.05, 0.05)
    rep = tail_check(NoiseSpec("rademacher"), 3, 40, m, [1, 2, 5], 1000)
    assert rep.empirical_exceedance == [0.0, 0.0, 0.0]


def test_tail_check_errors():
    with pytest.raises(UncalibratedError):
        tail_check(NoiseSpec(), 2, 10, None, [1], 10)
    with pytest.raises(ValueError):
        tail_check(NoiseSpec(), 2, 10, default_moments(2), [0.5], 10)


def test_allowed_violations_against_clopper_pearson():
    n, target = 2000, 0.05
    k = allowed_violations(n, target, 0.99)
    assert stats.beta.ppf(0.99, k + 1, n - k) <= target
    assert stats.beta.ppf(0.99, k + 2, n - k - 1) > target
    assert allowed_violations(100, 1e-4, 0.99) == -1


def test_calibration_gaussian_p2_below_known_constants():
    c1, c2 = calibrate_constants(NoiseSpec("gaussian", 20261019), 2, replicates=20000)
    assert c1 <= 2.1 and c2 <= 2.1


def test_calibration_rademacher_minimal():
    assert calibrate_constants(NoiseSpec("rademacher"), 3, replicates=2000) == (0.05, 0.05)


def test_calibration_reproducible_and_valid():
    spec = NoiseSpec("uniform", 3)
    a = calibrate_constants(spec, 1.5, replicates=5000)
    assert a == calibrate_constants(spec, 1.5, replicates=5000)
    m = calibrated_moments(spec, 1.5, replicates=5000)
    rep = tail_check(NoiseSpec("uniform", 99), 1.5, 50, m, [1, 2, 3], 20000)
    assert rep.passed


def test_calibration_too_few_replicates():
    with pytest.raises(CalibrationError):
        calibrate_constants(NoiseSpec("gaussian"), 2, x_grid=(12,), replicates=100)
