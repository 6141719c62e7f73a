"""PCO criterion and exact minimisers over the model collections.

The criterion ``Crit(m) = -sum_{l in m} w_l |Y_l|^p + pen(m)`` is separable
across levels and every penalty here depends on a level only through its
cardinality, so the best level subset of a given size is the top-``d``
prefix of that level sorted by decreasing ``|Y|``. Each search below is
therefore a scan over cardinalities rather than over subsets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .penalty import StrategyPenalty, ThresholdPenalty, ZeroPenalty
from .sequence import (ConfigurationError, InvalidModelError, Model, level_size,
                       level_slice, projection, top_level)

STRATEGY_ORDER = ("H", "I", "S")


class CollectionTooLarge(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SelectionResult:
    model: Model
    strategy: str
    crit_value: float
    per_level_cardinalities: list = field(default_factory=list)
    L: int | None = None

    def __eq__(self, other):
        return (isinstance(other, SelectionResult) and self.model == other.model
                and self.strategy == other.strategy and self.crit_value == other.crit_value
                and self.L == other.L)


# ---------------------------------------------------------------------------
# helpers


def _penalty_for(obs, spec, w, strategy, penalty):
    if penalty is not None:
        return penalty
    return StrategyPenalty(spec.with_N(obs.N), obs.epsilon, w, strategy, N=obs.N)


class _Levels:
    """Per-level sorted gains of one observation vector."""

    def __init__(self, obs, w, p):
        self.J = obs.J
        self.order = {}
        self.cum = {}
        for j in range(-1, self.J + 1):
            y = np.abs(obs.level(j)) ** p
            # stable sort: equal |Y| keep increasing k
            order = np.argsort(-y, kind="stable")
            self.order[j] = order
            self.cum[j] = w.level_weight(j) * np.concatenate([[0.0], np.cumsum(y[order])])

    def top(self, j, d):
        return level_slice(j).start + np.sort(self.order[j][:d])


def _build_model(N, levels, cards):
    mask = np.zeros(N, dtype=bool)
    for j, d in zip(range(-1, levels.J + 1), cards):
        mask[levels.top(j, d)] = True
    return Model(mask)


def _lex_key(model):
    return tuple(model.flat_indices())


def strategy_i_cardinality(L, j, p, regression=False):
    """``floor(2^j 2^(-l p/2) (l+1)^(-e))`` with ``l = j - L``.

    ``e = 3`` in the sequence model; ``e = 3p/2`` for ``p > 2`` in the
    regression variant. Evaluated in exact rational arithmetic whenever the
    exponents allow it, so exact integers are never floored down.
    """
    l = j - L
    if l < 0:
        return level_size(j)
    e = 1.5 * p if (regression and p > 2) else 3
    two_exp = j - l * p / 2
    if float(two_exp).is_integer() and float(e).is_integer():
        val = Fraction(2) ** int(two_exp) / Fraction(l + 1) ** int(e)
        return min(level_size(j), math.floor(val))
    val = 2.0 ** two_exp * (l + 1) ** (-e)
    return min(level_size(j), math.floor(val * (1 + 1e-12)))


def strategy_i_cards(L, J, p, regression=False):
    return [strategy_i_cardinality(L, j, p, regression) for j in range(-1, J + 1)]


def admissible(model, strategy, p=None, regression=False):
    """Whether ``model`` belongs to the collection of ``strategy``."""
    cards = model.cardinalities()
    J = len(cards) - 2
    full = [level_size(j) for j in range(-1, J + 1)]
    if strategy == "S":
        return True
    if strategy == "H":
        return any(cards == [f if j <= L else 0 for j, f in zip(range(-1, J + 1), full)]
                   for L in range(0, J + 1))
    if strategy == "I":
        return any(cards == strategy_i_cards(L, J, p, regression) for L in range(0, J + 1))
    raise ConfigurationError(f"unknown strategy {strategy!r}")


def _l_of(model, strategy, p, regression):
    cards = model.cardinalities()
    J = len(cards) - 2
    for L in range(0, J + 1):
        if strategy == "H" and cards == [level_size(j) if j <= L else 0 for j in range(-1, J + 1)]:
            return L
        if strategy == "I" and cards == strategy_i_cards(L, J, p, regression):
            return L
    return None


# ---------------------------------------------------------------------------
# criterion


def fit_term(obs, m, w, p):
    return -math.fsum(w.weights(obs.N)[m.mask] * np.abs(obs.y[m.mask]) ** p)


def crit(obs, m, strategy, spec, w, penalty=None, regression=False):
    """``-sum_{l in m} w_l |Y_l|^p + pen^a(m)`` for an admissible ``m``."""
    if m.N != obs.N:
        raise InvalidModelError(f"model over {m.N} positions, observations over {obs.N}")
    p = spec.p if spec is not None else penalty.p
    if penalty is None and not admissible(m, strategy, p, regression):
        raise InvalidModelError(f"model not in collection {strategy}")
    pen = _penalty_for(obs, spec, w, strategy, penalty)
    return fit_term(obs, m, w, p) + pen.total(m)


# ---------------------------------------------------------------------------
# fast searches


def argmin_S(obs, spec, w, penalty=None, p=None):
    """Exact minimiser over all per-level subsets."""
    p = spec.p if p is None else p
    pen = _penalty_for(obs, spec, w, "S", penalty)
    levels = _Levels(obs, w, p)
    cards, total = [], []
    for j in range(-1, levels.J + 1):
        d = np.arange(level_size(j) + 1)
        cost = -levels.cum[j] + pen.level(j, d)
        best = int(np.argmin(cost))  # first minimum: smallest cardinality
        cards.append(best)
        total.append(cost[best])
    model = _build_model(obs.N, levels, cards)
    return SelectionResult(model, "S", math.fsum(total), cards)


def _scan_L(obs, spec, w, strategy, cards_of_L, penalty):
    p = spec.p
    pen = _penalty_for(obs, spec, w, strategy, penalty)
    levels = _Levels(obs, w, p)
    candidates = []
    for L in range(0, levels.J + 1):
        cards = cards_of_L(L, levels.J)
        value = math.fsum(-levels.cum[j][d] + float(pen.level(j, d))
                          for j, d in zip(range(-1, levels.J + 1), cards))
        candidates.append((value, sum(cards), L, cards))
    low = min(c[:2] for c in candidates)
    ties = [c for c in candidates if c[:2] == low]
    models = [(_lex_key(_build_model(obs.N, levels, c[3])), c) for c in ties]
    _, (value, _, L, cards) = min(models, key=lambda t: t[0])
    return SelectionResult(_build_model(obs.N, levels, cards), strategy, value, cards, L)


def argmin_H(obs, spec, w, penalty=None):
    """Best full-level cut ``L`` in ``0..J``."""
    def cards(L, J):
        return [level_size(j) if j <= L else 0 for j in range(-1, J + 1)]
    return _scan_L(obs, spec, w, "H", cards, penalty)


def argmin_I(obs, spec, w, penalty=None, regression=False):
    """Best ``L`` with full levels below ``L`` and shrinking top-``d`` slices above."""
    def cards(L, J):
        return strategy_i_cards(L, J, spec.p, regression)
    return _scan_L(obs, spec, w, "I", cards, penalty)


def argmin_flat(obs, spec, penalty=None):
    """Nested prefixes ``{1..k}``, ``k = 1..N``, constant weights.

    The penalty is the uncapped base term with ``x = a log k``.
    """
    from .penalty import level_term

    p = spec.p
    k = np.arange(1, obs.N + 1)
    fit = np.cumsum(np.abs(obs.y) ** p)
    if penalty is None:
        x = spec.x("flat", None, k)
        pen = 2 * obs.epsilon ** p * level_term(spec, k, x, capped=False)
    else:
        pen = penalty.level(None, k)
    cost = -fit + pen
    best = int(np.argmin(cost))
    return SelectionResult(Model.prefix(obs.N, best + 1), "flat", float(cost[best]),
                           [best + 1], best + 1)


_SEARCH = {"H": argmin_H, "I": argmin_I, "S": argmin_S}


def _rank(result, order):
    return (result.crit_value, order.index(result.strategy), len(result.model),
            _lex_key(result.model))


def argmin_overall(obs, spec, w, strategies=STRATEGY_ORDER, regression=False):
    """Minimise the criterion jointly over ``(m, a)``.

    Ties go to the earlier strategy in ``H, I, S`` order, then to the smaller
    model, then to the lexicographically first index list.
    """
    strategies = [s for s in STRATEGY_ORDER if s in set(strategies)]
    if not strategies:
        raise ConfigurationError("no strategy enabled")
    results = [argmin_I(obs, spec, w, regression=regression) if a == "I"
               else _SEARCH[a](obs, spec, w) for a in strategies]
    return min(results, key=lambda r: _rank(r, STRATEGY_ORDER))


def select_all(obs, spec, w, strategies=STRATEGY_ORDER, regression=False):
    """Per-strategy minimisers, keyed by strategy tag."""
    out = {}
    for a in strategies:
        out[a] = (argmin_I(obs, spec, w, regression=regression) if a == "I"
                  else _SEARCH[a](obs, spec, w))
    return out


def pco_estimate(obs, result):
    return projection(obs, result.model)


def threshold_estimate(obs, t, w, p):
    """Hard thresholding ``{|Y| > t}`` and the corresponding estimate."""
    if t <= 0:
        raise ValueError("threshold must be positive")
    model = Model(np.abs(obs.y) > t)
    return model, projection(obs, model)


def threshold_via_pco(obs, t, w, p):
    """The same model obtained from the full-collection criterion search."""
    return argmin_S(obs, None, w, penalty=ThresholdPenalty(t, w, p), p=p).model


# ---------------------------------------------------------------------------
# exhaustive oracle

MAX_CANDIDATES = 10 ** 6


def _masks_S(N):
    codes = np.arange(1 << N, dtype=np.int64)
    return ((codes[:, None] >> np.arange(N)) & 1).astype(bool)


def _level_subsets(j, d):
    start = level_slice(j).start
    return [tuple(start + k for k in c) for c in itertools.combinations(range(level_size(j)), d)]


def _masks_from_cards(N, J, cards):
    per_level = [_level_subsets(j, d) for j, d in zip(range(-1, J + 1), cards)]
    count = math.prod(len(x) for x in per_level)
    masks = np.zeros((count, N), dtype=bool)
    for row, combo in enumerate(itertools.product(*per_level)):
        for idx in combo:
            masks[row, list(idx)] = True
    return masks


def collection_size(N, strategy, p=None, regression=False):
    J = top_level(N)
    if strategy == "S":
        return 1 << N
    if strategy == "H":
        return J + 1
    if strategy == "I":
        return sum(math.prod(math.comb(level_size(j), d)
                             for j, d in zip(range(-1, J + 1), strategy_i_cards(L, J, p, regression)))
                   for L in range(J + 1))
    raise ConfigurationError(f"unknown strategy {strategy!r}")


def enumerate_collection(N, strategy, p=None, regression=False):
    """All masks of a strategy's collection, with the cut ``L`` of each row."""
    J = top_level(N)
    size = collection_size(N, strategy, p, regression)
    if size > MAX_CANDIDATES:
        raise CollectionTooLarge(f"{strategy} collection on N={N} has {size} models")
    if strategy == "S":
        return _masks_S(N), [None] * (1 << N)
    masks, Ls = [], []
    for L in range(J + 1):
        if strategy == "H":
            cards = [level_size(j) if j <= L else 0 for j in range(-1, J + 1)]
        else:
            cards = strategy_i_cards(L, J, p, regression)
        block = _masks_from_cards(N, J, cards)
        masks.append(block)
        Ls.extend([L] * len(block))
    return np.vstack(masks), Ls


def brute_force_argmin(obs, spec, w, strategy, penalty=None, regression=False, p=None):
    """Exhaustive minimisation of the criterion over a strategy's collection.

    ``strategy="all"`` searches the union over ``H, I, S``. Each candidate's
    criterion is evaluated from its mask; the penalty is looked up from the
    level cardinalities.
    """
    p = spec.p if p is None else p
    if strategy == "all":
        results = [brute_force_argmin(obs, spec, w, a, regression=regression)
                   for a in STRATEGY_ORDER]
        return min(results, key=lambda r: _rank(r, STRATEGY_ORDER))
    masks, Ls = enumerate_collection(obs.N, strategy, p, regression)
    J = obs.J
    pen = _penalty_for(obs, spec, w, strategy, penalty)
    gains = w.weights(obs.N) * np.abs(obs.y) ** p
    values = -(masks * gains).sum(axis=1)
    for j in range(-1, J + 1):
        counts = masks[:, level_slice(j)].sum(axis=1)
        table = np.asarray(pen.level(j, np.arange(level_size(j) + 1)), dtype=float)
        values = values + table[counts]
    sizes = masks.sum(axis=1)
    best = None
    for row in np.flatnonzero(values == values.min()):
        key = (sizes[row], tuple(np.flatnonzero(masks[row])))
        if best is None or key < best[0]:
            best = (key, row)
    row = best[1]
    model = Model(masks[row])
    return SelectionResult(model, strategy, float(values[row]),
                           model.cardinalities(), Ls[row])
