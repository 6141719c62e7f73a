"""Risk evaluation: analytic model risk, oracle risk, Monte Carlo, rate fits."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .penalty import PenaltySpec
from .selection import STRATEGY_ORDER, argmin_flat, argmin_overall, pco_estimate, strategy_i_cards
from .sequence import (NoiseSpec, SignalSequence, WeightScheme, bias_term, level_size,
                       level_slice, loss, observe, top_level)
from .streams import make_rng


@dataclass
class RiskReport:
    mc_risk: float
    mc_stderr: float
    oracle_risk: float
    oracle_ratio: float
    replicates: int
    epsilon: float
    N: int = 0
    strategy_counts: dict = field(default_factory=dict)

    def as_row(self):
        return {"epsilon": self.epsilon, "N": self.N, "mc_risk": self.mc_risk,
                "stderr": self.mc_stderr, "oracle_risk": self.oracle_risk}


def _tail_mass(theta, w, p, N):
    """Weighted p-th power mass of ``theta`` beyond the first ``N`` positions."""
    x = theta.values[N:]
    if len(x) == 0:
        return 0.0
    return math.fsum(w.weights(len(theta))[N:] * np.abs(x) ** p)


def expected_model_risk(theta, m, epsilon, spec, w, iid=True):
    """``B_p(m) + eps^p sigma_p^p sum_j omega_j |m_j|`` for i.i.d. noise."""
    if not iid:
        raise NotImplementedError("closed-form risk needs i.i.d. noise; use Monte Carlo")
    var = epsilon ** spec.p * spec.moments_p.sigma_p ** spec.p
    return float(bias_term(theta, m, w, spec.p)) + var * math.fsum(w.weights(m.N)[m.mask])


def _level_costs(theta, w, spec, epsilon, N):
    """Per level: sorted |theta|^p weighted gains and unit variance cost."""
    p = spec.p
    var = epsilon ** p * spec.moments_p.sigma_p ** p
    padded = theta.padded(N)
    out = {}
    for j in range(-1, top_level(N) + 1):
        a = np.sort(np.abs(padded[level_slice(j)]) ** p)[::-1]
        wj = w.level_weight(j)
        cum = wj * np.concatenate([[0.0], np.cumsum(a)])
        out[j] = (cum, wj * var)
    return out


def oracle_risk(theta, collection, epsilon, spec, w, N=None, regression=False):
    """``inf_m E||theta_hat^(m) - theta||_p^p`` over a strategy's collection.

    For a fixed level cardinality the bias is smallest when the kept
    coefficients are the largest ``|theta|``, so every collection reduces to a
    scan over cardinalities. ``collection="all"`` takes the union of
    ``H, I, S``.
    """
    N = spec.N if N is None else N
    if collection == "all":
        return min(oracle_risk(theta, a, epsilon, spec, w, N, regression) for a in STRATEGY_ORDER)
    if collection == "flat":
        x = np.abs(theta.padded(N)) ** spec.p
        var = epsilon ** spec.p * spec.moments_p.sigma_p ** spec.p
        k = np.arange(1, N + 1)
        total = math.fsum(x) + _tail_mass(theta, w, spec.p, N)
        return float(np.min(total - np.cumsum(x) + var * k))
    costs = _level_costs(theta, w, spec, epsilon, N)
    J = top_level(N)
    base = _tail_mass(theta, w, spec.p, N) + math.fsum(c[-1] for c, _ in costs.values())
    if collection == "S":
        best = 0.0
        for j, (cum, unit) in costs.items():
            d = np.arange(len(cum))
            best += float(np.min(-cum + unit * d))
        return base + best
    values = []
    for L in range(J + 1):
        if collection == "H":
            cards = [level_size(j) if j <= L else 0 for j in range(-1, J + 1)]
        elif collection == "I":
            cards = strategy_i_cards(L, J, spec.p, regression)
        else:
            raise ValueError(f"unknown collection {collection!r}")
        values.append(base + math.fsum(-costs[j][0][d] + costs[j][1] * d
                                       for j, d in zip(range(-1, J + 1), cards)))
    return min(values)


def _stderr(values):
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def mc_risk(theta, epsilon, spec, w, strategies=STRATEGY_ORDER, replicates=100, seed=0,
            noise="gaussian", N=None, regression=False, flat=False):
    """Monte Carlo mean and standard error of ``||theta_tilde - theta||_p^p``.

    Replicate ``i`` draws its noise from the stream ``(seed, "mc", i)``, so
    the report does not depend on execution order.
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    N = spec.N if N is None else N
    spec = spec.with_N(N)
    noise_spec = NoiseSpec(noise, seed)
    losses, counts = [], Counter()
    for i in range(replicates):
        obs = observe(theta, epsilon, noise_spec, N, rng=make_rng(seed, "mc", i), dyadic=not flat)
        if flat:
            result = argmin_flat(obs, spec)
        else:
            result = argmin_overall(obs, spec, w, strategies, regression=regression)
        counts[result.strategy] += 1
        losses.append(loss(pco_estimate(obs, result), theta, w, spec.p))
    mean, se = _stderr(losses)
    collection = "flat" if flat else ("all" if set(strategies) == set(STRATEGY_ORDER)
                                      else None)
    if collection is None:
        orc = min(oracle_risk(theta, a, epsilon, spec, w, N, regression) for a in strategies)
    else:
        orc = oracle_risk(theta, collection, epsilon, spec, w, N, regression)
    ratio = mean / orc if orc > 0 else math.inf
    return RiskReport(mean, se, orc, ratio, replicates, float(epsilon), N, dict(counts))


# ---------------------------------------------------------------------------
# rates

REGIMES = ("homogeneous", "intermediate", "frontier", "sparse")


def _frac(x):
    return Fraction(x).limit_denominator(10 ** 9)


def classify_regime(p, s, r):
    """Which of the four rate zones ``(p, s, r)`` falls in."""
    p, s, r = _frac(p), _frac(s), _frac(r)
    edge = p / (2 * s + 1)
    if r >= p:
        return "homogeneous"
    if r > edge:
        return "intermediate"
    if r == edge:
        return "frontier"
    return "sparse"


def rate_exponent(p, s, r):
    """Power of ``eps`` in the upper rate, log factors excluded."""
    if classify_regime(p, s, r) == "sparse":
        return 2 * p * (s - 1 / r + 1 / p) / (2 * s + 1 - 2 / r)
    return 2 * p * s / (2 * s + 1)


def log_exponent(p, s, r):
    """Power of ``|log eps|`` multiplying the upper rate."""
    regime = classify_regime(p, s, r)
    if regime == "homogeneous":
        return 0.0
    if regime == "intermediate":
        return s * max(p - 2, 0) / (2 * s + 1)
    if regime == "frontier":
        return p * s / (2 * s + 1) + 1
    return p * (s - 1 / r + 1 / p) / (2 * s + 1 - 2 / r)


def choose_N(R, epsilon, cap=1 << 16):
    """Smallest power of two ``>= (R/eps)^2``, capped."""
    target = (R / epsilon) ** 2
    N = 2
    while N < target and N < cap:
        N *= 2
    return N


def residual_scale(epsilon, p):
    """``eps^p (1 + [p > 2] |log eps|^(p/2 - 1))``."""
    extra = abs(math.log(epsilon)) ** (p / 2 - 1) if p > 2 else 0.0
    return epsilon ** p * (1 + extra)


@dataclass
class RateFit:
    epsilons: list
    risks: list
    slope: float
    theory: float
    regime: str
    Ns: list = field(default_factory=list)
    stderrs: list = field(default_factory=list)
    oracle_risks: list = field(default_factory=list)
    log_power: float = 0.0
    residuals: list = field(default_factory=list)

    def oracle_ratios(self, p):
        return [m / (o + residual_scale(e, p))
                for m, o, e in zip(self.risks, self.oracle_risks, self.epsilons)]

    def rows(self):
        for e, n, m, s, o in zip(self.epsilons, self.Ns, self.risks, self.stderrs,
                                 self.oracle_risks):
            yield {"epsilon": e, "N": n, "mc_risk": m, "stderr": s, "oracle_risk": o}


def _check_grid(epsilons):
    if len(epsilons) < 4:
        raise ValueError("need at least four noise levels")
    e = np.asarray(epsilons, dtype=float)
    if np.any(e <= 0) or np.any(e > 1):
        raise ValueError("noise levels must lie in (0, 1]")
    if np.any(np.diff(e) >= 0):
        raise ValueError("noise levels must be strictly decreasing")
    ratios = e[1:] / e[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-6):
        raise ValueError("noise levels must be geometrically spaced")


def fit_slope(epsilons, risks):
    slope, intercept = np.polyfit(np.log(epsilons), np.log(risks), 1)
    resid = np.log(risks) - (slope * np.log(epsilons) + intercept)
    return float(slope), resid.tolist()


def rate_fit(ball, p, epsilons, spec, w, generator, replicates, seed=0, noise="gaussian",
             N_cap=1 << 16, extra_levels=4, strategies=STRATEGY_ORDER, progress=None):
    """Monte Carlo risk over a geometric ``eps`` sweep and its log-log slope.

    For each ``eps`` the problem size is ``N = choose_N(R, eps)`` and the
    signal is drawn by ``generator(ball, J + extra_levels, seed)``, so the
    truncation bias beyond the observed levels is part of the risk.
    """
    _check_grid(epsilons)
    Ns, risks, ses, orcs = [], [], [], []
    for e in epsilons:
        N = choose_N(ball.R, e, N_cap)
        theta = generator(ball, top_level(N) + extra_levels, seed)
        rep = mc_risk(theta, e, spec.with_N(N), w, strategies, replicates, seed, noise, N)
        Ns.append(N)
        risks.append(rep.mc_risk)
        ses.append(rep.mc_stderr)
        orcs.append(rep.oracle_risk)
        if progress:
            progress(rep)
    slope, resid = fit_slope(epsilons, risks)
    return RateFit(list(map(float, epsilons)), risks, slope, rate_exponent(p, ball.s, ball.r),
                   classify_regime(p, ball.s, ball.r), Ns, ses, orcs,
                   log_exponent(p, ball.s, ball.r), resid)
