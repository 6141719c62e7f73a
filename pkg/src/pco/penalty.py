"""Noise-moment constants and penalty formulas.

The per-level penalty of a model is ``2 eps^p omega_j P_j(|m_j|)`` where
``P_j`` is the base level term (:func:`p_level`) or, for ``p > 2``, its
minimum with the ``(2 q log N)^(p/2 - 1)``-scaled index-2 term
(:func:`p_level_sharp`).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from scipy.special import gammaln

from .sequence import ConfigurationError, NoiseSpec, UNIFORM_HALF_WIDTH


class UncalibratedError(LookupError):
    """No concentration constants are known for a (distribution, p) pair."""


def pos(x):
    return max(x, 0.0)


def sigma_p_gaussian(p):
    """``(E|xi|^p)^(1/p)`` for a standard Gaussian."""
    if p < 1:
        raise ValueError(f"p={p} < 1")
    log_moment = (p / 2) * math.log(2) + gammaln((p + 1) / 2) - 0.5 * math.log(math.pi)
    return math.exp(log_moment / p)


def sigma_p(p, distribution="gaussian"):
    if p < 1:
        raise ValueError(f"p={p} < 1")
    if distribution == "gaussian":
        return sigma_p_gaussian(p)
    if distribution == "rademacher":
        return 1.0
    if distribution == "uniform":
        # E|U|^p = a^p / (p + 1) for U uniform on [-a, a]
        return UNIFORM_HALF_WIDTH * (p + 1) ** (-1.0 / p)
    raise ConfigurationError(f"unknown noise distribution {distribution!r}")


def kappa(c1, c2, sigma):
    return c2 + c1 * max(1.0, c1 / (2 * sigma))


@dataclass(frozen=True)
class NoiseMoments:
    """Moment and concentration constants of the noise at loss index ``p``.

    ``sigma_p`` is ``(E|xi|^p)^(1/p)``; ``kappa_p`` combines ``c1`` and
    ``c2`` into the single constant of the two-sided deviation band.
    """

    p: float
    sigma_p: float
    c1: float
    c2: float

    def __post_init__(self):
        if self.sigma_p <= 0:
            raise ValueError("sigma_p must be positive")

    @property
    def kappa_p(self):
        return kappa(self.c1, self.c2, self.sigma_p ** self.p)


# ---------------------------------------------------------------------------
# moments table

TABLE_FIELDS = ("distribution", "p", "sigma_p", "c1", "c2", "kappa_p", "calibration_date")


def load_moments_table(path=None):
    """Read a moments CSV into ``{(distribution, p): NoiseMoments}``.

    Without a path the table shipped with the package is used.
    """
    if path is None:
        text = resources.files("pco").joinpath("data/moments.csv").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    table = {}
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    for row in csv.DictReader(lines):
        key = (row["distribution"], float(row["p"]))
        table[key] = NoiseMoments(float(row["p"]), float(row["sigma_p"]),
                                  float(row["c1"]), float(row["c2"]))
    return table


def write_moments_table(path, rows):
    """``rows``: iterable of ``(distribution, NoiseMoments, date)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_FIELDS)
        for dist, m, date in rows:
            writer.writerow([dist, m.p, repr(m.sigma_p), m.c1, m.c2, repr(m.kappa_p), date])


def default_moments(p, dist="gaussian", table=None, calibrate=False, **calib_kwargs):
    """Concentration constants for ``dist`` at index ``p``.

    Gaussian ``p = 1`` and ``p = 2`` use the known values ``(sqrt 2, 0)``
    and ``(2, 2)``. Anything else comes from ``table`` (the packaged table
    by default) or, with ``calibrate=True``, from a fresh empirical
    calibration.
    """
    if isinstance(dist, NoiseSpec):
        dist = dist.distribution
    if p < 1:
        raise ValueError(f"p={p} < 1")
    sig = sigma_p(p, dist)
    if dist == "gaussian" and p == 1:
        return NoiseMoments(1.0, sig, math.sqrt(2.0), 0.0)
    if dist == "gaussian" and p == 2:
        return NoiseMoments(2.0, sig, 2.0, 2.0)
    if table is None:
        table = load_moments_table()
    elif isinstance(table, (str, os.PathLike)):
        table = load_moments_table(table)
    hit = table.get((dist, float(p)))
    if hit is not None:
        return hit
    if calibrate:
        from .concentration import calibrate_constants

        c1, c2 = calibrate_constants(NoiseSpec(dist), p, **calib_kwargs)
        return NoiseMoments(float(p), sig, c1, c2)
    raise UncalibratedError(f"no concentration constants for {dist} at p={p}; "
                            "run `pco calibrate` or pass calibrate=True")


# ---------------------------------------------------------------------------
# level terms


def _check_x(d, x):
    d = np.asarray(d)
    x = np.asarray(x, dtype=float)
    if np.any((d >= 1) & (x < 1)):
        raise ValueError("x_{m_j} must be >= 1 on non-empty levels")
    return d, x


def p_level(d, x, m):
    """Base level term ``3/2 sigma^p d + kappa 2^((p-2)_+/2) d^((1-p/2)_+) x^(p/2)``."""
    d, x = _check_x(d, x)
    p = m.p
    out = (1.5 * m.sigma_p ** p * d
           + m.kappa_p * 2.0 ** (pos(p - 2) / 2) * d ** pos(1 - p / 2) * x ** (p / 2))
    out = np.where(d == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def p_level_sharp(d, x, m2):
    """Index-2 level term ``3/2 sigma_2^2 d + kappa_2 x``."""
    d, x = _check_x(d, x)
    out = np.where(d == 0, 0.0, 1.5 * m2.sigma_p ** 2 * d + m2.kappa_p * x)
    return float(out) if out.ndim == 0 else out


STRATEGIES = ("H", "I", "S", "flat")


def x_factor(strategy, p, j, d, L=None, K_I=None, K_S=None, a=None):
    """Strategy factor ``x_{m_j}``, clamped to ``>= 1`` on non-empty levels.

    ``L`` is accepted for interface symmetry; none of the factors uses it.
    """
    d = np.asarray(d, dtype=float)
    safe = np.maximum(d, 1.0)
    if strategy == "H":
        x = (p / 2) * np.log(safe)
    elif strategy == "I":
        K = p + 1 if K_I is None else K_I
        x = K * safe * (1 + np.log(2.0 ** j / safe))
    elif strategy == "S":
        K = p + 1 if K_S is None else K_S
        x = K * safe * j
    elif strategy == "flat":
        a = default_flat_a(p) if a is None else a
        x = a * np.log(safe)
    else:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    out = np.where(d == 0, 0.0, np.maximum(x, 1.0))
    return float(out) if out.ndim == 0 else out


def default_flat_a(p):
    return 1 + pos(1 - p / 2) + 0.5


@dataclass(frozen=True)
class PenaltySpec:
    """Everything a penalty needs besides the noise level and weights."""

    p: float
    moments_p: NoiseMoments
    moments_2: NoiseMoments
    q: float | None = None
    N: int | None = None
    a: float | None = None
    K_I: float | None = None
    K_S: float | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"p={self.p} < 1")
        if self.q is None:
            object.__setattr__(self, "q", self.p + 1)
        if self.a is None:
            object.__setattr__(self, "a", default_flat_a(self.p))
        if self.K_I is None:
            object.__setattr__(self, "K_I", self.p + 1)
        if self.K_S is None:
            object.__setattr__(self, "K_S", self.p + 1)
        if self.q <= 1:
            raise ValueError("q must be > 1")

    @classmethod
    def default(cls, p, dist="gaussian", N=None, table=None, **kwargs):
        return cls(p=float(p), moments_p=default_moments(p, dist, table),
                   moments_2=default_moments(2, dist, table), N=N, **kwargs)

    def with_N(self, N):
        return self if self.N == N else replace(self, N=N)

    def cap_factor(self, N=None):
        N = self.N if N is None else N
        if self.p <= 2:
            return 1.0
        if N is None or N < 2:
            raise ValueError("the p > 2 penalty needs N >= 2")
        return (2 * self.q * math.log(N)) ** (self.p / 2 - 1)

    def x(self, strategy, j, d):
        return x_factor(strategy, self.p, j, d, K_I=self.K_I, K_S=self.K_S, a=self.a)


def level_term(spec, d, x, capped=True, N=None):
    """``P_j(d)`` for given ``x``: base term, capped when ``p > 2``."""
    base = p_level(d, x, spec.moments_p)
    if spec.p <= 2 or not capped:
        return base
    sharp = spec.cap_factor(N) * p_level_sharp(d, x, spec.moments_2)
    return np.minimum(base, sharp) if np.ndim(base) else min(base, float(sharp))


def pen(model, spec, epsilon, w, x_of, capped=True):
    """Total penalty ``2 eps^p sum_j omega_j P_j(m_j)``.

    ``x_of(j, d)`` supplies the factor of a level holding ``d`` coefficients.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    total = []
    for j, d in zip(range(-1, len(model.cardinalities()) - 1), model.cardinalities()):
        x = x_of(j, d)
        total.append(w.level_weight(j) * level_term(spec, d, x, capped, N=model.N))
    return 2 * epsilon ** spec.p * math.fsum(total)


class StrategyPenalty:
    """Level-indexed penalty of one strategy at a fixed noise level.

    ``level(j, d)`` accepts an array of cardinalities, which is what the
    sort-and-scan searches need.
    """

    def __init__(self, spec, epsilon, w, strategy, N=None):
        if strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {strategy!r}")
        self.spec = spec
        self.epsilon = float(epsilon)
        self.w = w
        self.strategy = strategy
        self.N = spec.N if N is None else N
        self._scale = 2 * self.epsilon ** spec.p

    def level(self, j, d):
        x = self.spec.x(self.strategy, j, d)
        capped = self.strategy != "flat"
        val = level_term(self.spec, d, x, capped=capped, N=self.N)
        return self._scale * self.w.level_weight(j) * val

    def total(self, model):
        cards = model.cardinalities()
        return math.fsum(float(self.level(j, d)) for j, d in zip(range(-1, len(cards) - 1), cards))


class ThresholdPenalty:
    """``pen(m) = sum_{l in m} w_l t^p``; selects exactly ``{|Y| > t}``."""

    strategy = "S"

    def __init__(self, t, w, p):
        if t <= 0:
            raise ValueError("threshold must be positive")
        self.t, self.w, self.p = float(t), w, float(p)

    def level(self, j, d):
        return self.w.level_weight(j) * np.asarray(d, dtype=float) * self.t ** self.p

    def total(self, model):
        cards = model.cardinalities()
        return math.fsum(float(self.level(j, d)) for j, d in zip(range(-1, len(cards) - 1), cards))


class ZeroPenalty(ThresholdPenalty):
    """Diagnostic override: no penalty at all."""

    def __init__(self):
        pass

    def level(self, j, d):
        return np.zeros_like(np.asarray(d, dtype=float))
