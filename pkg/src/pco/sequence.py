"""Dyadic index space, signal and observation containers, noise, bias/variance.

Coefficients are stored in level-major order: the scaling coefficient
``(-1, 0)`` sits at flat position 0 and ``(j, k)`` with ``j >= 0`` sits at
``2**j + k``. Levels ``-1..J`` therefore occupy exactly the first
``N = 2**(J + 1)`` positions, and the nested models ``{1..k}`` of the flat
(constant weight) setting are prefixes of the same array.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .streams import make_rng


class ConfigurationError(ValueError):
    """Unknown tag or parameter outside its documented domain."""


class GeometryError(ValueError):
    """Sizes that do not fit the dyadic index space."""


class InvalidModelError(ValueError):
    """A model referencing indices outside the observed set."""


# ---------------------------------------------------------------------------
# index space


def flat_index(j, k):
    if j == -1:
        return 0
    return (1 << j) + k


def level_of_flat(i):
    return -1 if i == 0 else int(i).bit_length() - 1


def level_slice(j):
    """Flat positions of level ``j``."""
    if j == -1:
        return slice(0, 1)
    return slice(1 << j, 1 << (j + 1))


def level_size(j):
    return 1 if j == -1 else 1 << j


def levels_array(n):
    """Level ``j`` of every flat position ``0..n-1``."""
    idx = np.arange(n)
    lev = np.zeros(n, dtype=np.int64)
    lev[0] = -1
    if n > 1:
        lev[1:] = np.floor(np.log2(idx[1:])).astype(np.int64)
    return lev


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def top_level(n):
    """``J`` such that ``n == 2**(J+1)``."""
    if not is_power_of_two(n) or n < 2:
        raise GeometryError(f"N={n} is not a power of two >= 2")
    return n.bit_length() - 2


@dataclass(frozen=True, order=True)
class DyadicIndex:
    j: int
    k: int

    def __post_init__(self):
        if self.j < -1:
            raise GeometryError(f"level {self.j} < -1")
        if not 0 <= self.k < level_size(self.j):
            raise GeometryError(f"k={self.k} outside K_{self.j}")

    @property
    def flat(self):
        return flat_index(self.j, self.k)

    @classmethod
    def from_flat(cls, i):
        j = level_of_flat(i)
        return cls(j, i - (0 if j == -1 else 1 << j))


@dataclass(frozen=True)
class WeightScheme:
    """``constant`` (all ones) or ``dyadic`` with ``w_jk = 2**(j*(p/2-1))``."""

    kind: str = "constant"
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("constant", "dyadic"):
            raise ConfigurationError(f"unknown weight scheme {self.kind!r}")

    @classmethod
    def dyadic(cls, p):
        return cls("dyadic", float(p))

    def level_weight(self, j):
        if self.kind == "constant":
            return 1.0
        return 2.0 ** (j * (self.p / 2.0 - 1.0))

    def weights(self, n):
        if self.kind == "constant":
            return np.ones(n)
        return 2.0 ** (levels_array(n) * (self.p / 2.0 - 1.0))


# ---------------------------------------------------------------------------
# containers


def _frozen(values):
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SignalSequence:
    """Target sequence stored over the first ``len(values)`` flat positions.

    ``exact_tail`` records whether every coefficient past the stored range is
    known to be zero. Generated signals set it; user data does not, in which
    case truncation biases are lower bounds.
    """

    values: np.ndarray
    exact_tail: bool = True

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def __len__(self):
        return len(self.values)

    @property
    def J_max(self):
        return top_level(len(self.values))

    def level(self, j):
        return self.values[level_slice(j)]

    def padded(self, n):
        """Values on the first ``n`` positions, zero-filled past the end."""
        out = np.zeros(n)
        m = min(n, len(self.values))
        out[:m] = self.values[:m]
        return out

    def scaled(self, c):
        return SignalSequence(c * self.values, self.exact_tail)


@dataclass(frozen=True)
class NoiseSpec:
    distribution: str = "gaussian"
    seed: int = 0

    DISTRIBUTIONS = ("gaussian", "rademacher", "uniform")

    def __post_init__(self):
        name = _DIST_ALIASES.get(self.distribution.lower(), self.distribution.lower())
        if name not in self.DISTRIBUTIONS:
            raise ConfigurationError(f"unknown noise distribution {self.distribution!r}")
        object.__setattr__(self, "distribution", name)


_DIST_ALIASES = {
    "standardgaussian": "gaussian",
    "normal": "gaussian",
    "uniformscaled": "uniform",
}

# uniform on [-sqrt(3), sqrt(3)] has unit variance and
# P(|xi| >= t) = (1 - t/sqrt(3))_+ <= 2 exp(-t^2/2) for every t >= 0
UNIFORM_HALF_WIDTH = math.sqrt(3.0)


def sample_noise(distribution, size, rng):
    if distribution == "gaussian":
        return rng.standard_normal(size)
    if distribution == "rademacher":
        return 2.0 * rng.integers(0, 2, size=size) - 1.0
    if distribution == "uniform":
        return rng.uniform(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, size=size)
    raise ConfigurationError(f"unknown noise distribution {distribution!r}")


def generate_noise(spec, count, rng=None):
    """``count`` i.i.d. centred sub-Gaussian draws.

    Without an explicit ``rng`` the draws come from the stream keyed by
    ``spec.seed`` alone, so two calls with the same spec agree.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if rng is None:
        rng = make_rng(spec.seed, "noise")
    return sample_noise(spec.distribution, count, rng)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed ``y`` on the first ``N`` flat positions, with noise level."""

    y: np.ndarray
    epsilon: float
    dyadic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(self.y))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.dyadic:
            top_level(len(self.y))

    @property
    def N(self):
        return len(self.y)

    @property
    def J(self):
        return top_level(self.N) if self.dyadic else None

    def level(self, j):
        return self.y[level_slice(j)]


def observe(theta, epsilon, spec, N, rng=None, dyadic=True):
    """Draw ``y = theta + epsilon * xi`` on the first ``N`` positions.

    ``epsilon == 0`` is accepted as a noiseless diagnostic.
    """
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon={epsilon} outside [0, 1]")
    if dyadic and (not is_power_of_two(N) or N < 2):
        raise GeometryError(f"N={N} is not a power of two >= 2")
    if rng is None:
        rng = make_rng(spec.seed, "observe")
    xi = sample_noise(spec.distribution, N, rng)
    return ObservationSet(theta.padded(N) + epsilon * xi, float(epsilon), dyadic)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class Model:
    """A subset of the observed positions, stored as a boolean mask."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    def __eq__(self, other):
        return isinstance(other, Model) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(self.mask.tobytes())

    def __len__(self):
        return int(self.mask.sum())

    def __repr__(self):
        return f"Model({self.indices()})"

    @property
    def N(self):
        return len(self.mask)

    @classmethod
    def empty(cls, N):
        return cls(np.zeros(N, dtype=bool))

    @classmethod
    def full(cls, N):
        return cls(np.ones(N, dtype=bool))

    @classmethod
    def from_indices(cls, N, indices):
        mask = np.zeros(N, dtype=bool)
        for idx in indices:
            i = idx.flat if isinstance(idx, DyadicIndex) else flat_index(*idx)
            if i >= N:
                raise InvalidModelError(f"{idx} outside the first {N} positions")
            mask[i] = True
        return cls(mask)

    @classmethod
    def prefix(cls, N, k):
        mask = np.zeros(N, dtype=bool)
        mask[:k] = True
        return cls(mask)

    def indices(self):
        return [DyadicIndex.from_flat(int(i)) for i in np.flatnonzero(self.mask)]

    def flat_indices(self):
        return np.flatnonzero(self.mask)

    def cardinalities(self):
        """``|m_j|`` for ``j = -1..J`` (index 0 holds level -1)."""
        J = top_level(self.N)
        return [int(self.mask[level_slice(j)].sum()) for j in range(-1, J + 1)]


def _check_model(m, N):
    if m.N != N:
        raise InvalidModelError(f"model over {m.N} positions, observations over {N}")


# ---------------------------------------------------------------------------
# norms, bias and variance


class BiasValue(float):
    """A bias value that remembers whether it only bounds the true bias."""

    lower_bound = False

    def __new__(cls, value, lower_bound=False):
        obj = super().__new__(cls, value)
        obj.lower_bound = lower_bound
        return obj


def _vector(v):
    if isinstance(v, SignalSequence):
        return v.values
    if isinstance(v, ObservationSet):
        return v.y
    return np.asarray(v, dtype=float)


def weighted_lp_power(v, w, p):
    """``sum_l w_l |v_l|**p``."""
    if p < 1:
        raise ValueError(f"p={p} < 1")
    x = _vector(v)
    return math.fsum(w.weights(len(x)) * np.abs(x) ** p)


def weighted_lp_norm(v, w, p):
    return weighted_lp_power(v, w, p) ** (1.0 / p)


def bias_term(theta, m, w, p):
    """``B_p(m)``: weighted p-th power mass of ``theta`` outside ``m``."""
    x = np.abs(theta.values) ** p * w.weights(len(theta))
    outside = np.ones(len(x), dtype=bool)
    k = min(m.N, len(x))
    outside[:k] = ~m.mask[:k]
    return BiasValue(math.fsum(x[outside]), lower_bound=not theta.exact_tail)


def variance_term(obs, theta, m, w, p):
    """Realised ``V_p(m)`` from the residuals ``y - theta`` on ``m``."""
    _check_model(m, obs.N)
    resid = obs.y - theta.padded(obs.N)
    return math.fsum(w.weights(obs.N)[m.mask] * np.abs(resid[m.mask]) ** p)


def projection(obs, m):
    """``theta_hat^(m)``: ``y`` on ``m`` and zero elsewhere."""
    _check_model(m, obs.N)
    return SignalSequence(np.where(m.mask, obs.y, 0.0))


def loss(estimate, theta, w, p):
    """``||estimate - theta||_p^p`` over the union of both supports."""
    n = max(len(estimate), len(theta))
    diff = estimate.padded(n) - theta.padded(n)
    return math.fsum(w.weights(n) * np.abs(diff) ** p)


# ---------------------------------------------------------------------------
# CSV


def _parse_meta(line):
    meta = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            key, val = token.split("=", 1)
            meta[key] = val
    return meta


def sequence_to_csv(values, meta=None, dyadic=True):
    """Render ``(j, k, value)`` rows; ``meta`` goes in a trailing comment."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["j", "k", "value"])
    for i, v in enumerate(values):
        if dyadic:
            idx = DyadicIndex.from_flat(i)
            writer.writerow([idx.j, idx.k, repr(float(v))])
        else:
            writer.writerow([1, i, repr(float(v))])
    if meta:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    return buf.getvalue()


def read_sequence_csv(path):
    """Return ``(values, meta)``; missing positions are filled with zeros."""
    rows, meta = [], {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("#"):
            meta.update(_parse_meta(ln))
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["j", "k", "value"]:
        raise ValueError(f"{path}: expected header j,k,value")
    dyadic = meta.get("indexing", "dyadic") == "dyadic"
    for lineno, row in enumerate(reader, start=2):
        try:
            j, k, v = int(row[0]), int(row[1]), float(row[2])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: bad row {row!r}") from exc
        rows.append((DyadicIndex(j, k).flat if dyadic else k, v))
    n = max(i for i, _ in rows) + 1 if rows else 0
    values = np.zeros(n)
    for i, v in rows:
        values[i] = v
    return values, meta


def write_signal(path, theta, meta=None):
    meta = {"exact_tail": int(theta.exact_tail), **(meta or {})}
    with open(path, "w") as fh:
        fh.write(sequence_to_csv(theta.values, meta))


def write_observations(path, obs, meta=None):
    meta = {"epsilon": repr(obs.epsilon), **(meta or {})}
    if not obs.dyadic:
        meta["indexing"] = "flat"
    with open(path, "w") as fh:
        fh.write(sequence_to_csv(obs.y, meta, dyadic=obs.dyadic))


def read_observations(path, epsilon=None):
    values, meta = read_sequence_csv(path)
    if epsilon is None:
        if "epsilon" not in meta:
            raise ValueError(f"{path}: no epsilon recorded and none given")
        epsilon = float(meta["epsilon"])
    dyadic = meta.get("indexing", "dyadic") == "dyadic"
    return ObservationSet(values, float(epsilon), dyadic)


def read_signal(path):
    values, meta = read_sequence_csv(path)
    return SignalSequence(values, exact_tail=meta.get("exact_tail", "0") == "1")
