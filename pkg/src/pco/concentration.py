"""Empirical checks of the deviation band for sums of ``|xi|^p``.

For ``D`` i.i.d. sub-Gaussian draws, ``Z = sum |xi|^p`` satisfies, with
probability at least ``1 - 2 exp(-x)``,

    1/2 sigma^p D - kappa D^e x^(p/2) <= Z <= 3/2 sigma^p D + kappa D^e x^(p/2)

with ``e = (1 - p/2)_+``. This module simulates ``Z``, measures how often
the band is violated and calibrates ``(c1, c2)`` for noises without known
constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta

from .penalty import NoiseMoments, UncalibratedError, kappa, sigma_p
from .sequence import NoiseSpec, sample_noise
from .streams import make_rng

CHUNK = 1 << 21


class CalibrationError(RuntimeError):
    pass


def band_exponent(p):
    """Exponent of ``D`` in the second band term: ``(1 - p/2)_+``."""
    return max(1.0 - p / 2.0, 0.0)


def simulate_Z(spec, p, D, replicates, seed=None):
    """``replicates`` independent draws of ``sum_{i<D} |xi_i|^p``."""
    if D < 1:
        raise ValueError("D must be >= 1")
    seed = spec.seed if seed is None else seed
    if spec.distribution == "rademacher":
        return np.full(replicates, float(D))
    out = np.empty(replicates)
    per_chunk = max(1, CHUNK // D)
    for c, start in enumerate(range(0, replicates, per_chunk)):
        stop = min(replicates, start + per_chunk)
        rng = make_rng(seed, "Z", D, c)
        xi = sample_noise(spec.distribution, (stop - start, D), rng)
        out[start:stop] = (np.abs(xi) ** p).sum(axis=1)
    return out


def binomial_se(prob, n):
    prob = min(max(prob, 0.0), 1.0)
    return math.sqrt(prob * (1 - prob) / n)


@dataclass
class TailCheckReport:
    p: float
    D: int
    x_grid: list
    empirical_exceedance: list
    bound: list
    replicates: int
    pass_: bool

    @property
    def passed(self):
        return self.pass_

    def rows(self):
        for x, e, b in zip(self.x_grid, self.empirical_exceedance, self.bound):
            yield {"p": self.p, "D": self.D, "x": x, "exceedance": e, "bound": b,
                   "se": binomial_se(b, self.replicates),
                   "ok": e <= b + 3 * binomial_se(b, self.replicates)}


def band(moments, D, x):
    """Lower and upper edges of the deviation band at ``(D, x)``."""
    sp = moments.sigma_p ** moments.p
    half_width = moments.kappa_p * D ** band_exponent(moments.p) * x ** (moments.p / 2)
    return 0.5 * sp * D - half_width, 1.5 * sp * D + half_width


def exceedance(Z, moments, D, x):
    lo, hi = band(moments, D, x)
    return float(np.mean((Z < lo) | (Z > hi)))


def tail_check(spec, p, D, moments, x_grid, replicates, seed=None, Z=None):
    """Fraction of replicates outside the band, against ``2 exp(-x)``.

    Passes when every grid point is within three binomial standard errors
    of its bound.
    """
    if moments is None:
        raise UncalibratedError(f"no constants for {spec.distribution} at p={p}")
    if any(x < 1 for x in x_grid):
        raise ValueError("x must be >= 1")
    if Z is None:
        Z = simulate_Z(spec, p, D, replicates, seed)
    exc = [exceedance(Z, moments, D, x) for x in x_grid]
    bounds = [2 * math.exp(-x) for x in x_grid]
    ok = all(e <= b + 3 * binomial_se(b, len(Z)) for e, b in zip(exc, bounds))
    return TailCheckReport(p, D, list(x_grid), exc, bounds, len(Z), ok)


# ---------------------------------------------------------------------------
# calibration


def allowed_violations(n, target, confidence):
    """Largest ``k`` whose exact upper confidence bound on ``k/n`` is ``<= target``.

    Returns -1 when even ``k = 0`` is too many.
    """
    if target >= 1:
        return n

    def upper(k):
        return 1.0 if k >= n else float(beta.ppf(confidence, k + 1, n - k))

    if upper(0) > target:
        return -1
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if upper(mid) <= target:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _constraints(spec, p, D_grid, x_grid, replicates, confidence, seed):
    sp = sigma_p(p, spec.distribution) ** p
    out = []
    for D in D_grid:
        dev = np.sort(np.abs(simulate_Z(spec, p, D, replicates, seed) - D * sp))[::-1]
        for x in x_grid:
            k = allowed_violations(len(dev), 2 * math.exp(-x), confidence)
            if k < 0:
                raise CalibrationError(
                    f"{replicates} replicates cannot certify 2exp(-{x}) at {confidence:.0%}")
            a = math.sqrt(D * x)
            b = D ** band_exponent(p) * x ** (p / 2)
            out.append((D, x, a, b, k, dev))
    return out


def _violations(dev, bound):
    # dev is sorted in decreasing order
    return int(np.searchsorted(-dev, -bound, side="right"))


def calibrate_constants(spec, p, D_grid=(10, 50, 200), x_grid=(1, 2, 3, 5),
                        replicates=20000, confidence=0.99, seed=None, step=0.05,
                        c_max=50.0):
    """Lattice search for ``(c1, c2)`` making ``|Z - EZ| < c1 sqrt(Dx) + c2 D^e x^(p/2)``.

    A lattice point is feasible when at every ``(D, x)`` the number of
    violations keeps the one-sided exact binomial upper bound (at
    ``confidence``) below ``2 exp(-x)``. Among feasible points the one with
    the smallest ``kappa_p`` is returned, ties going to the smaller ``c1``;
    ``kappa_p`` is the only combination the penalties use.
    """
    if not D_grid or not x_grid:
        raise ValueError("grids must be non-empty")
    seed = spec.seed if seed is None else seed
    cons = _constraints(spec, p, D_grid, x_grid, replicates, confidence, seed)
    sp = sigma_p(p, spec.distribution) ** p
    n_steps = int(round(c_max / step))
    lattice = [round(i * step, 10) for i in range(1, n_steps + 1)]
    best, worst = None, None
    for c1 in lattice:
        need = 0.0
        for D, x, a, b, k, dev in cons:
            if k >= len(dev):
                continue
            q = dev[k]  # the (k+1)-th largest deviation must fall strictly inside
            need = max(need, (q - c1 * a) / b)
        i2 = max(1, math.floor(need / step) + 1)
        while i2 <= n_steps:
            c2 = lattice[i2 - 1]
            if all(_violations(dev, c1 * a + c2 * b) <= k for _, _, a, b, k, dev in cons):
                break
            i2 += 1
        if i2 > n_steps:
            worst = c1
            continue
        cand = (kappa(c1, c2, sp), c1, c2)
        if best is None or cand < best:
            best = cand
    if best is None:
        raise CalibrationError(f"no lattice point up to {c_max} passes; last c1 tried {worst}")
    return best[1], best[2]


def calibrated_moments(spec, p, **kwargs):
    c1, c2 = calibrate_constants(spec, p, **kwargs)
    return NoiseMoments(float(p), sigma_p(p, spec.distribution), c1, c2)
