"""Equispaced regression through the sequence model.

Samples ``X_i = f(t_i) + sigma eta_i`` at ``t_i = i/n`` are mapped to
coefficients ``Y_jk = (1/n) sum_i X_i phi_jk(t_i)`` with noise level
``eps = sigma / sqrt(n)``. Haar functions are taken right-continuous on
cells ``(a, b]`` so that every grid point ``i/n`` falls in exactly one finest
cell; the sampled Haar system is then exactly orthonormal and the map above
is an orthogonal transform scaled by ``1/sqrt(n)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .penalty import PenaltySpec
from .selection import argmin_overall, pco_estimate
from .sequence import (GeometryError, NoiseSpec, ObservationSet, SignalSequence,
                       WeightScheme, is_power_of_two, level_size, level_slice,
                       sample_noise, top_level)
from .streams import make_rng


@dataclass(frozen=True)
class RegressionSample:
    x: np.ndarray
    sigma: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if not is_power_of_two(len(x)) or len(x) < 2:
            raise GeometryError(f"n={len(x)} is not a power of two >= 2")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def n(self):
        return len(self.x)

    @property
    def epsilon(self):
        return self.sigma / math.sqrt(self.n)


def grid(n):
    """``t_i = i/n`` for ``i = 1..n``."""
    return np.arange(1, n + 1) / n


def _log2(n):
    return n.bit_length() - 1


@dataclass(frozen=True)
class WaveletBasis:
    """``haar`` or ``db<order>`` (periodised, via PyWavelets)."""

    family: str = "haar"

    def __post_init__(self):
        fam = self.family.lower()
        if fam != "haar" and not (fam.startswith("db") and fam[2:].isdigit()):
            raise ValueError(f"unsupported wavelet family {self.family!r}")
        object.__setattr__(self, "family", fam)

    @property
    def is_haar(self):
        return self.family == "haar"

    def forward(self, x, N=None):
        """Coefficients ``(1/n) sum_i x_i phi_jk(t_i)`` on the first ``N`` positions.

        Works along the last axis, so a stack of samples is transformed at once.
        """
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        N = n if N is None else N
        if N > n:
            raise GeometryError(f"N={N} coefficients need at least N samples, got n={n}")
        if self.is_haar:
            return haar_forward(x, N)
        return _pywt_forward(self.family, x)[..., :N] / math.sqrt(n)

    def synthesize(self, theta, grid_size):
        """``sum theta_jk phi_jk`` evaluated at ``g / grid_size``, ``g = 1..grid_size``."""
        theta = np.asarray(theta, dtype=float)
        if grid_size < len(theta) or not is_power_of_two(grid_size):
            raise GeometryError("grid_size must be a power of two >= N")
        if self.is_haar:
            return haar_synthesize(theta, grid_size)
        full = np.zeros(theta.shape[:-1] + (grid_size,))
        full[..., :theta.shape[-1]] = theta
        return _pywt_inverse(self.family, full) * math.sqrt(grid_size)

    def sampled(self, n, N=None):
        """Matrix ``Phi[l, i] = phi_l(t_i)`` over the first ``N`` basis functions."""
        N = n if N is None else N
        eye = np.eye(N)
        return self.synthesize(eye, n)


# ---------------------------------------------------------------------------
# Haar


def _block_sums(x):
    """``sums[r]``: sums over ``2**r`` equal blocks, for ``r = 0..log2(n)``."""
    n = x.shape[-1]
    K = _log2(n)
    sums = {K: x}
    cur = x
    for r in range(K - 1, -1, -1):
        cur = cur.reshape(cur.shape[:-1] + (1 << r, 2)).sum(axis=-1)
        sums[r] = cur
    return sums


def haar_forward(x, N):
    """O(n) pyramid of block sums."""
    n = x.shape[-1]
    J = top_level(N)
    sums = _block_sums(x)
    out = np.empty(x.shape[:-1] + (N,))
    out[..., 0] = sums[0][..., 0] / n
    for j in range(0, J + 1):
        halves = sums[j + 1]
        out[..., level_slice(j)] = (2.0 ** (j / 2) / n) * (halves[..., 0::2] - halves[..., 1::2])
    return out


def haar_direct(x, N):
    """``(1/n) Phi x`` with an explicitly built sampled basis (test oracle)."""
    n = x.shape[-1]
    t = grid(n)
    rows = np.empty((N, n))
    for i in range(N):
        rows[i] = haar_function(i, t)
    return x @ rows.T / n


def haar_function(flat, t):
    """Value of the right-continuous Haar function at flat position ``flat``."""
    t = np.asarray(t, dtype=float)
    if flat == 0:
        return ((t > 0) & (t <= 1)).astype(float)
    j = flat.bit_length() - 1
    k = flat - (1 << j)
    u = t * 2.0 ** j - k
    return 2.0 ** (j / 2) * (((u > 0) & (u <= 0.5)).astype(float)
                             - ((u > 0.5) & (u <= 1)).astype(float))


def haar_synthesize(theta, grid_size):
    N = theta.shape[-1]
    J = top_level(N)
    vals = theta[..., 0:1] * np.ones(theta.shape[:-1] + (1,))
    for j in range(0, J + 1):
        d = 2.0 ** (j / 2) * theta[..., level_slice(j)]
        nxt = np.empty(vals.shape[:-1] + (2 * vals.shape[-1],))
        nxt[..., 0::2] = vals + d
        nxt[..., 1::2] = vals - d
        vals = nxt
    return np.repeat(vals, grid_size // vals.shape[-1], axis=-1)


# ---------------------------------------------------------------------------
# periodised Daubechies


def _pywt_forward(family, x):
    import pywt

    K = _log2(x.shape[-1])
    with warnings.catch_warnings():
        # full-depth periodised transforms are exact; boundary effects are expected
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec(x, family, mode="periodization", level=K, axis=-1)
    return np.concatenate(coeffs, axis=-1)


def _pywt_inverse(family, full):
    import pywt

    n = full.shape[-1]
    K = _log2(n)
    parts = [full[..., 0:1]] + [full[..., level_slice(j)] for j in range(0, K)]
    return pywt.waverec(parts, family, mode="periodization", axis=-1)


# ---------------------------------------------------------------------------
# estimation


def forward_coeffs(sample, basis, J=None):
    """Embed a regression sample into the sequence model."""
    N = sample.n if J is None else 1 << (J + 1)
    if N > sample.n:
        raise GeometryError(f"J={J} needs N={N} > n={sample.n}")
    return ObservationSet(basis.forward(sample.x, N), sample.epsilon)


def theta_of_f(f, basis, J, n):
    """Discrete coefficients ``(1/n) sum_i f(t_i) phi_jk(t_i)``."""
    N = 1 << (J + 1)
    if N > n:
        raise GeometryError(f"J={J} needs N={N} > n={n}")
    return SignalSequence(basis.forward(np.asarray(f(grid(n)), dtype=float), N))


def draw_sample(f, n, sigma, noise="gaussian", rng=None, seed=0):
    rng = make_rng(seed, "regression") if rng is None else rng
    eta = sample_noise(NoiseSpec(noise).distribution, n, rng)
    return RegressionSample(np.asarray(f(grid(n)), dtype=float) + sigma * eta, sigma)


def pco_regress(sample, basis, J, spec, strategies=("H", "I", "S")):
    """PCO on the embedded coefficients with dyadic ``l_p(w)`` weights.

    Strategy I uses the regression cardinalities ``(l+1)^(-3p/2)`` for
    ``p > 2``.
    """
    obs = forward_coeffs(sample, basis, J)
    w = WeightScheme.dyadic(spec.p)
    result = argmin_overall(obs, spec.with_N(obs.N), w, strategies, regression=True)
    return pco_estimate(obs, result), result


def reconstruct(theta_tilde, basis, grid_size):
    """``f_tilde = sum theta_tilde_jk phi_jk`` sampled on ``g / grid_size``."""
    values = theta_tilde.values if isinstance(theta_tilde, SignalSequence) else theta_tilde
    return basis.synthesize(values, grid_size)


def besov0_norm(coeffs, p):
    """``||g||_{B^0_{p, p^2}}`` from the coefficients of ``g``."""
    c = np.asarray(coeffs.values if isinstance(coeffs, SignalSequence) else coeffs, float)
    q = min(p, 2.0)
    total = []
    j = -1
    while level_slice(j).start < len(c):
        level = c[level_slice(j)]
        total.append(2.0 ** (j * q * (0.5 - 1.0 / p)) * np.sum(np.abs(level) ** p) ** (q / p))
        j += 1
    return math.fsum(total) ** (1.0 / q)


@dataclass
class FunctionRisk:
    lp_power: float
    besov_bridge: float

    def __float__(self):
        return self.lp_power


def lp_function_risk(f_hat, f, p, grid_size=None, basis=None):
    """Riemann sum of ``|f_hat - f|^p`` on ``(0, 1]``.

    ``f_hat`` is sampled on ``g / grid_size``; ``f`` is a callable or an array
    on the same grid. Also returns the ``B^0_{p, p^2}`` norm of the
    difference computed from its coefficients on that grid.
    """
    f_hat = np.asarray(f_hat, dtype=float)
    grid_size = len(f_hat) if grid_size is None else grid_size
    if len(f_hat) != grid_size:
        raise GeometryError("f_hat must be sampled on the risk grid")
    target = f(grid(grid_size)) if callable(f) else np.asarray(f, dtype=float)
    diff = f_hat - target
    lp = float(np.mean(np.abs(diff) ** p))
    basis = WaveletBasis() if basis is None else basis
    bridge = besov0_norm(basis.forward(diff), p)
    return FunctionRisk(lp, bridge)


# ---------------------------------------------------------------------------
# noise harness


def noise_coefficients(n, replicates, seed=0, basis=None, noise="gaussian", N=None):
    """``xi_jk = n^(-1/2) sum_i eta_i phi_jk(t_i)`` for a stack of replicates."""
    basis = WaveletBasis() if basis is None else basis
    rng = make_rng(seed, "harness", n)
    eta = sample_noise(NoiseSpec(noise).distribution, (replicates, n), rng)
    return math.sqrt(n) * basis.forward(eta, N)


def level_sums(xi, p, J):
    """``Z_j = sum_k |xi_jk|^p`` per replicate and level ``j = -1..J``."""
    return np.stack([np.sum(np.abs(xi[..., level_slice(j)]) ** p, axis=-1)
                     for j in range(-1, J + 1)], axis=-1)


def harness_exceedance(Z, moments, J, x):
    """Per level, frequency of ``Z_j`` at or above ``3/2 sigma^p D + kappa D^e x^(p/2)``."""
    p = moments.p
    e = max(1 - p / 2, 0.0)
    out = []
    for col, j in enumerate(range(-1, J + 1)):
        D = level_size(j)
        edge = 1.5 * moments.sigma_p ** p * D + moments.kappa_p * D ** e * x ** (p / 2)
        out.append(float(np.mean(Z[:, col] >= edge)))
    return out


def fit_c_phi(Z, moments, J, x_grid):
    """Smallest ``c`` with every per-level exceedance ``<= c exp(-x)``."""
    return max(max(harness_exceedance(Z, moments, J, x)) * math.exp(x) for x in x_grid)


def support_indices(basis, flat, n):
    """Sample indices where ``phi`` at flat position ``flat`` is non-zero."""
    if basis.is_haar:
        return set(np.flatnonzero(haar_function(flat, grid(n))))
    row = basis.sampled(n, flat + 1)[flat]
    return set(np.flatnonzero(np.abs(row) > 1e-12))


# ---------------------------------------------------------------------------
# named test functions


def _blocks(t):
    pos = np.array([.1, .13, .15, .23, .25, .40, .44, .65, .76, .78, .81])
    hgt = np.array([4, -5, 3, -4, 5, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2])
    return (hgt * (1 + np.sign(np.subtract.outer(t, pos))) / 2).sum(axis=-1)


def _bumps(t):
    pos = np.array([.1, .13, .15, .23, .25, .40, .44, .65, .76, .78, .81])
    hgt = np.array([4, 5, 3, 4, 5, 4.2, 2.1, 4.3, 3.1, 5.1, 4.2])
    wth = np.array([.005, .005, .006, .01, .01, .03, .01, .01, .005, .008, .005])
    return (hgt * (1 + np.abs(np.subtract.outer(t, pos) / wth)) ** -4).sum(axis=-1)


def _ramp(t):
    return np.asarray(t, dtype=float)


def _constant(t):
    return np.ones_like(np.asarray(t, dtype=float))


def haar_series(coeffs):
    """Callable ``t -> sum c_l phi_l(t)`` for a finite Haar coefficient vector."""
    coeffs = np.asarray(coeffs, dtype=float)
    cells = haar_synthesize(coeffs, len(coeffs))

    def f(t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.ceil(t * len(cells)).astype(int) - 1, 0, len(cells) - 1)
        return cells[idx]

    return f


def rough_function(s=0.5, depth=13, seed=0, R=1.0):
    """Random Haar series with ``|c_jk| = R 2^(-j(s+1/2))`` up to level ``depth``."""
    rng = make_rng(seed, "rough")
    n = 1 << (depth + 1)
    c = np.empty(n)
    for j in range(-1, depth + 1):
        c[level_slice(j)] = R * 2.0 ** (-j * (s + 0.5)) * (2.0 * rng.integers(0, 2, level_size(j)) - 1)
    return haar_series(c)


TEST_FUNCTIONS = {"blocks": _blocks, "bumps": _bumps, "ramp": _ramp, "constant": _constant}


def named_function(name, seed=0):
    if name == "rough":
        return rough_function(seed=seed)
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown test function {name!r}") from None


def regression_mc_risk(f, n, sigma, p, replicates, seed=0, basis=None, J=None,
                       spec=None, noise="gaussian", grid_factor=4):
    """Monte Carlo ``E ||f_tilde - f||_{L_p}^p`` with its standard error."""
    basis = WaveletBasis() if basis is None else basis
    J = top_level(n) if J is None else J
    N = 1 << (J + 1)
    spec = PenaltySpec.default(p, NoiseSpec(noise).distribution, N=N) if spec is None else spec
    grid_size = max(grid_factor * N, n)
    target = f(grid(grid_size))
    risks = []
    for i in range(replicates):
        sample = draw_sample(f, n, sigma, noise, rng=make_rng(seed, "regress", n, i))
        theta_tilde, _ = pco_regress(sample, basis, J, spec)
        f_hat = reconstruct(theta_tilde, basis, grid_size)
        risks.append(float(np.mean(np.abs(f_hat - target) ** p)))
    mean = math.fsum(risks) / len(risks)
    se = float(np.std(risks, ddof=1) / math.sqrt(len(risks))) if len(risks) > 1 else 0.0
    return mean, se
