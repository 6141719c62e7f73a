"""Besov bodies, the polynomial-tail class, and boundary test signals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sequence import SignalSequence, level_size, level_slice
from .streams import make_rng


@dataclass(frozen=True)
class BesovBall:
    s: float
    r: float
    R: float

    def __post_init__(self):
        if self.s <= 0 or self.r < 1 or self.R < 0:
            raise ValueError(f"invalid Besov ball {self}")

    @property
    def rate_admissible(self):
        return self.s > 1.0 / self.r

    def contains(self, theta, tol=1e-12):
        return besov_norm(theta, self.s, self.r) <= self.R + tol


@dataclass(frozen=True)
class PolyTailBall:
    s: float
    p: float
    R: float

    def contains(self, theta, tol=1e-12):
        return poly_tail_norm(theta, self.s, self.p) <= self.R + tol


def _values(theta):
    return theta.values if isinstance(theta, SignalSequence) else np.asarray(theta, float)


def _level_lr(level, r):
    if math.isinf(r):
        return float(np.max(np.abs(level))) if len(level) else 0.0
    return float(np.sum(np.abs(level) ** r) ** (1.0 / r))


def besov_norm(theta, s, r):
    """``sup_j 2**(j*(s + 1/2 - 1/r)) * ||theta_j.||_r`` over stored levels.

    ``r = inf`` gives the Hoelder-type body.
    """
    if r < 1:
        raise ValueError(f"r={r} < 1")
    x = _values(theta)
    inv_r = 0.0 if math.isinf(r) else 1.0 / r
    best = 0.0
    j = -1
    while level_slice(j).start < len(x):
        level = x[level_slice(j)]
        best = max(best, 2.0 ** (j * (s + 0.5 - inv_r)) * _level_lr(level, r))
        j += 1
    return best


def _random_signs(rng, n):
    return 2.0 * rng.integers(0, 2, size=n) - 1.0


def gen_dense(ball, J_max, seed=0):
    """Every coefficient at level ``j >= 0`` has modulus ``R * 2**(-j(s+1/2))``.

    The single coefficient at ``j = -1`` is set so that its level norm is
    also exactly ``R``.
    """
    rng = make_rng(seed, "dense")
    n = 1 << (J_max + 1)
    out = np.empty(n)
    inv_r = 0.0 if math.isinf(ball.r) else 1.0 / ball.r
    for j in range(-1, J_max + 1):
        if j == -1:
            mag = ball.R * 2.0 ** (ball.s + 0.5 - inv_r)
        else:
            mag = ball.R * 2.0 ** (-j * (ball.s + 0.5))
        out[level_slice(j)] = mag * _random_signs(rng, level_size(j))
    return SignalSequence(out, exact_tail=True)


def gen_sparse(ball, J_max, seed=0):
    """One coefficient per level, of modulus ``R * 2**(-j(s+1/2-1/r))``.

    The position ``k_j`` is uniform on the level and the sign is random.
    """
    rng = make_rng(seed, "sparse")
    n = 1 << (J_max + 1)
    out = np.zeros(n)
    for j in range(-1, J_max + 1):
        mag = ball.R * 2.0 ** (-j * (ball.s + 0.5 - 1.0 / ball.r))
        k = int(rng.integers(0, level_size(j)))
        out[level_slice(j).start + k] = mag * _random_signs(rng, 1)[0]
    return SignalSequence(out, exact_tail=True)


def gen_mixed(ball, J_max, seed=0, ratio=0.5):
    """Random per-level supports between the dense and sparse extremes.

    The support size at level ``j`` is geometric with mean ``2**(j*ratio)``,
    capped at ``2**j``; the mass is spread evenly over the support so that
    each level sits on the ball boundary.
    """
    rng = make_rng(seed, "mixed")
    n = 1 << (J_max + 1)
    out = np.zeros(n)
    for j in range(-1, J_max + 1):
        size = level_size(j)
        d = min(size, int(rng.geometric(min(1.0, 2.0 ** (-j * ratio)))))
        support = rng.choice(size, size=d, replace=False)
        # level l_r norm equal to R * 2**(-j(s+1/2-1/r))
        mag = ball.R * 2.0 ** (-j * (ball.s + 0.5 - 1.0 / ball.r)) * d ** (-1.0 / ball.r)
        out[level_slice(j).start + support] = mag * _random_signs(rng, d)
    return SignalSequence(out, exact_tail=True)


GENERATORS = {"dense": gen_dense, "sparse": gen_sparse, "mixed": gen_mixed}


def generate(kind, ball, J_max, seed=0):
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown signal kind {kind!r}") from None
    return gen(ball, J_max, seed)


def poly_tail_norm(theta, s, p):
    """``sup_k k**s * (sum_{l > k} |theta_l|**p)**(1/p)`` in flat order.

    Flat position ``i`` is the ``(i+1)``-th element, so the tail beyond ``k``
    is ``x[k:]``.
    """
    x = np.abs(_values(theta)) ** p
    # tails[k-1] = sum_{l > k} |x_l|^p for k = 1..len(x)
    tails = np.concatenate([np.cumsum(x[::-1])[::-1][1:], [0.0]])
    k = np.arange(1, len(x) + 1, dtype=float)
    if len(x) == 0:
        return 0.0
    return float(np.max(k ** s * np.maximum(tails, 0.0) ** (1.0 / p)))
