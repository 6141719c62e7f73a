"""Acceptance criteria 1-10, each run at its stated tolerance.

Every test records one PASS/FAIL line, repeated in the terminal summary.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from pco.besov import BesovBall, gen_dense, gen_sparse
from pco.concentration import tail_check
from pco.penalty import PenaltySpec, default_moments
from pco.risk import expected_model_risk, rate_fit
from pco.selection import (argmin_H, argmin_I, argmin_S, brute_force_argmin,
                           threshold_estimate, threshold_via_pco)
from pco.sequence import (Model, NoiseSpec, ObservationSet, SignalSequence, WeightScheme,
                          bias_term, loss, projection, variance_term)
from pco.streams import make_rng
from pco.wavelet import (WaveletBasis, fit_c_phi, haar_series, level_sums, noise_coefficients,
                         reconstruct, regression_mc_risk, rough_function, theta_of_f, grid)

SEED = 2026
HOMOGENEOUS = dict(ball=BesovBall(1, 2, 1), p=2, generator=gen_dense,
                   epsilons=[0.2, 0.1, 0.05, 0.025])
# N = (R/eps)^2 reaches the 2^16 cap exactly at the last point
SPARSE = dict(ball=BesovBall(2, 1, 1), p=4, generator=gen_sparse,
              epsilons=[1 / 32, 1 / 64, 1 / 128, 1 / 256])
_FITS = {}


def sparse_row_exponent(p, s, r):
    """Sparse-row power of eps, evaluated exactly."""
    p, s, r = Fraction(p), Fraction(s), Fraction(r)
    return 2 * p * (s - 1 / r + 1 / p) / (2 * s + 1 - 2 / r)


def fitted(name):
    if name not in _FITS:
        cfg = HOMOGENEOUS if name == "homogeneous" else SPARSE
        p = cfg["p"]
        start = time.perf_counter()
        fit = rate_fit(cfg["ball"], p, cfg["epsilons"], PenaltySpec.default(p),
                       WeightScheme.dyadic(p), cfg["generator"], 200, seed=SEED)
        _FITS[name] = (fit, time.perf_counter() - start)
    return _FITS[name]


def test_criterion_1_threshold_equivalence(acceptance_log):
    start = time.perf_counter()
    mismatches = 0
    for p in (1.0, 2.0, 3.0):
        for i in range(200):
            rng = make_rng(SEED, "c1", int(p), i)
            obs = ObservationSet(rng.standard_normal(64) * rng.uniform(0.2, 3), 0.1)
            t = float(rng.uniform(0.05, 2.5))
            w = WeightScheme("dyadic" if i % 2 else "constant", p)
            if threshold_via_pco(obs, t, w, p) != threshold_estimate(obs, t, w, p)[0]:
                mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10
    acceptance_log(1, ok, f"{mismatches} mismatches in 600 instances, {elapsed:.1f}s")
    assert ok


def test_criterion_2_bias_variance_identity(acceptance_log):
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        rng = make_rng(SEED, "c2", i)
        N = 2 ** int(rng.integers(1, 9))
        p = float(rng.choice([1.0, 1.5, 2.0, 3.0, 4.0]))
        w = WeightScheme(str(rng.choice(["constant", "dyadic"])), p)
        theta = SignalSequence(rng.standard_normal(N) * rng.uniform(0.1, 2))
        obs = ObservationSet(theta.values + 0.2 * rng.standard_normal(N), 0.2)
        m = Model(rng.random(N) < rng.random())
        direct = loss(projection(obs, m), theta, w, p)
        split = bias_term(theta, m, w, p) + variance_term(obs, theta, m, w, p)
        worst = max(worst, abs(direct - split) / max(direct, 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 1
    acceptance_log(2, ok, f"max relative gap {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_3_fast_argmin_equals_brute_force(acceptance_log):
    start = time.perf_counter()
    bad = []
    for p in (1.0, 2.0, 4.0):
        spec, w = PenaltySpec.default(p, N=16), WeightScheme.dyadic(p)
        for seed in range(100):
            rng = make_rng(SEED, "c3", int(p), seed)
            # scale the signal to the noise so selections are non-trivial
            obs = ObservationSet(0.1 * rng.uniform(0, 6) * rng.standard_normal(16), 0.1)
            for tag, search in (("H", argmin_H), ("I", argmin_I), ("S", argmin_S)):
                if search(obs, spec, w).model != brute_force_argmin(obs, spec, w, tag).model:
                    bad.append((p, seed, tag))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 30
    acceptance_log(3, ok, f"{len(bad)} mismatches over 900 searches, {elapsed:.1f}s")
    assert ok


def test_criterion_4_concentration_band(acceptance_log):
    start = time.perf_counter()
    moments = default_moments(2, "gaussian")
    assert (moments.c1, moments.c2) == (2.0, 2.0)
    worst, ok = -math.inf, True
    for D in (10, 50, 200):
        rep = tail_check(NoiseSpec("gaussian", SEED), 2, D, moments, [1, 2, 3, 5], 10 ** 5)
        ok &= rep.passed
        for row in rep.rows():
            worst = max(worst, (row["exceedance"] - row["bound"]) / row["se"])
    elapsed = time.perf_counter() - start
    ok = bool(ok) and elapsed < 60
    acceptance_log(4, ok, f"worst (exceedance - bound)/SE = {worst:.2f} (limit 3), "
                          f"{elapsed:.1f}s")
    assert ok


def test_criterion_5_expected_risk_formula(acceptance_log):
    start = time.perf_counter()
    reps, worst = 10 ** 5, 0.0
    for i in range(10):
        rng = make_rng(SEED, "c5", i)
        N = 32
        p = float(rng.choice([1.0, 2.0, 3.0, 4.0]))
        eps = float(rng.uniform(0.05, 0.5))
        spec = PenaltySpec.default(p, N=N)
        w = WeightScheme.dyadic(p)
        theta = SignalSequence(0.3 * rng.standard_normal(N))
        m = Model(rng.random(N) < 0.5)
        analytic = expected_model_risk(theta, m, eps, spec, w)
        # Monte Carlo mean of the loss of the projection estimate, computed directly
        Y = theta.values + eps * make_rng(SEED, "c5-mc", i).standard_normal((reps, N))
        est = np.where(m.mask, Y, 0.0)
        losses = (w.weights(N) * np.abs(est - theta.values) ** p).sum(axis=1)
        se = losses.std(ddof=1) / math.sqrt(reps)
        worst = max(worst, abs(losses.mean() - analytic) / se)
    elapsed = time.perf_counter() - start
    ok = worst <= 3 and elapsed < 60
    acceptance_log(5, ok, f"worst |MC - analytic| = {worst:.2f} SE (limit 3), {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_6_homogeneous_slope(acceptance_log):
    fit, elapsed = fitted("homogeneous")
    lo, hi = 4 / 3 * 0.85, 4 / 3 * 1.15
    ok = lo <= fit.slope <= hi and elapsed < 600
    acceptance_log(6, ok, f"slope {fit.slope:.3f} in [{lo:.3f}, {hi:.3f}], theory "
                          f"{fit.theory:.3f}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_7_sparse_slope(acceptance_log):
    fit, elapsed = fitted("sparse")
    target = float(sparse_row_exponent(4, 2, 1))
    assert target == pytest.approx(10 / 3)
    lo, hi = 0.8 * target, 1.2 * target
    ok = lo <= fit.slope <= hi and elapsed < 900
    acceptance_log(7, ok, f"slope {fit.slope:.3f} in [{lo:.3f}, {hi:.3f}] around 10/3, "
                          f"{elapsed:.0f}s")
    assert ok


def _ratio_growth(fit, p):
    ratios = fit.oracle_ratios(p)
    return ratios, max(ratios[1:]) / ratios[0]


@pytest.mark.slow
def test_criterion_8_oracle_ratio_stability(acceptance_log):
    lines, ok = [], True
    for name, cfg in (("homogeneous", HOMOGENEOUS), ("sparse", SPARSE)):
        fit, _ = fitted(name)
        ratios, growth = _ratio_growth(fit, cfg["p"])
        ok &= growth <= 1.10
        lines.append(f"{name} ratios " + ", ".join(f"{r:.2f}" for r in ratios)
                     + f" (growth x{growth:.2f}, limit 1.10)")
    acceptance_log(8, ok, "; ".join(lines))
    assert ok


def test_criterion_9_regression_round_trip(acceptance_log):
    start = time.perf_counter()
    haar = WaveletBasis("haar")
    # piecewise constant on dyadic blocks of length 1/64
    c = make_rng(SEED, "c9").standard_normal(64)
    f = haar_series(c)
    theta = theta_of_f(f, haar, 5, 4096)
    err = float(np.max(np.abs(reconstruct(theta, haar, 4096) - f(grid(4096)))))
    g = rough_function(s=0.5, depth=15, seed=SEED)
    small, se_small = regression_mc_risk(g, 4096, 0.5, 2, 100, seed=SEED)
    large, se_large = regression_mc_risk(g, 16384, 0.5, 2, 100, seed=SEED)
    factor = small / large
    elapsed = time.perf_counter() - start
    ok = err <= 1e-10 and 1.7 <= factor <= 2.5 and elapsed < 300
    acceptance_log(9, ok, f"round-trip error {err:.1e}; risk {small:.4g} -> {large:.4g}, "
                          f"factor {factor:.2f} in [1.7, 2.5], {elapsed:.0f}s")
    assert ok


def test_criterion_10_noise_harness_tail(acceptance_log):
    start = time.perf_counter()
    J, n = 8, 512
    details, ok = [], True
    for p in (1.0, 2.0):
        moments = default_moments(p, "gaussian")
        Z = np.vstack([level_sums(noise_coefficients(n, 20000, seed=SEED + b), p, J)
                       for b in range(5)])
        c_phi = fit_c_phi(Z, moments, J, [2, 3])
        ok &= c_phi <= 4
        details.append(f"p={p:g}: c_phi={c_phi:.3f}")
    elapsed = time.perf_counter() - start
    ok = bool(ok) and elapsed < 120
    acceptance_log(10, ok, "; ".join(details) + f" (limit 4, levels -1..8, 1e5 replicates), "
                           f"{elapsed:.0f}s")
    assert ok
