import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from pco.sequence import (ConfigurationError, DyadicIndex, GeometryError, InvalidModelError,
                          Model, NoiseSpec, ObservationSet, SignalSequence, WeightScheme,
                          bias_term, flat_index, generate_noise, level_of_flat, level_slice,
                          loss, observe, projection, read_observations, read_signal,
                          top_level, variance_term, weighted_lp_norm, weighted_lp_power,
                          write_observations, write_signal)
from pco.besov import BesovBall, gen_dense
from pco.streams import make_rng


def test_index_space_layout():
    assert flat_index(-1, 0) == 0
    assert [flat_index(2, k) for k in range(4)] == [4, 5, 6, 7]
    assert top_level(16) == 3
    for i in range(64):
        assert DyadicIndex.from_flat(i).flat == i
    with pytest.raises(GeometryError):
        DyadicIndex(-1, 1)
    with pytest.raises(GeometryError):
        DyadicIndex(2, 4)
    with pytest.raises(GeometryError):
        top_level(12)


@given(st.integers(0, 2 ** 20))
def test_flat_round_trip(i):
    idx = DyadicIndex.from_flat(i)
    assert level_of_flat(i) == idx.j
    assert idx.flat == i
    assert 0 <= idx.k < (1 if idx.j == -1 else 2 ** idx.j)


def test_weight_schemes():
    assert np.all(WeightScheme("constant").weights(32) == 1.0)
    assert np.all(WeightScheme.dyadic(2).weights(32) == 1.0)
    w = WeightScheme.dyadic(4)
    assert w.level_weight(3) == 8.0
    assert w.level_weight(-1) == 0.5
    with pytest.raises(ConfigurationError):
        WeightScheme("log")


def test_noise_rademacher_support():
    xi = generate_noise(NoiseSpec("rademacher", 3), 4)
    assert set(xi) <= {-1.0, 1.0}


def test_gaussian_noise_moments():
    xi = generate_noise(NoiseSpec("StandardGaussian", 7), 10 ** 6)
    assert abs(xi.mean()) < 4e-3
    tail = 2 * stats.norm.sf(2.0)
    assert abs(np.mean(np.abs(xi) >= 2) - tail) < 0.005
    assert abs(tail - 0.0455) < 1e-4


@pytest.mark.parametrize("dist", ["gaussian", "rademacher", "uniform"])
def test_noise_centred_and_subgaussian(dist):
    xi = generate_noise(NoiseSpec(dist, 1), 200000)
    assert abs(xi.mean()) < 5 / math.sqrt(len(xi))
    for t in (0.5, 1.0, 1.5, 2.0, 2.5):
        freq = np.mean(np.abs(xi) >= t)
        assert freq <= 2 * math.exp(-t * t / 2) + 4 * math.sqrt(freq / len(xi) + 1e-12)


def test_unknown_noise():
    with pytest.raises(ConfigurationError):
        NoiseSpec("cauchy")


def test_observe_degenerate_and_identity():
    theta = gen_dense(BesovBall(1, 2, 1), 3, seed=2)
    obs = observe(theta, 0.0, NoiseSpec(), 16)
    assert np.array_equal(obs.y, theta.values)
    zero = SignalSequence(np.zeros(16))
    spec = NoiseSpec("gaussian", 9)
    obs = observe(zero, 1.0, spec, 16, rng=make_rng(9, "k"))
    assert np.array_equal(obs.y, make_rng(9, "k").standard_normal(16))


def test_observe_replayable():
    theta = gen_dense(BesovBall(1, 2, 1), 3, seed=2)
    a = observe(theta, 0.1, NoiseSpec(seed=4), 16)
    b = observe(theta, 0.1, NoiseSpec(seed=4), 16)
    assert np.array_equal(a.y, b.y)
    with pytest.raises(GeometryError):
        observe(theta, 0.1, NoiseSpec(), 12)
    with pytest.raises(ValueError):
        observe(theta, 1.5, NoiseSpec(), 16)


def test_weighted_norm_examples():
    c = WeightScheme("constant")
    v = SignalSequence([1.0, 0.5])
    assert weighted_lp_norm(v, c, 2) == pytest.approx(math.sqrt(1.25), abs=1e-15)
    assert weighted_lp_norm(v, WeightScheme.dyadic(2), 2) == weighted_lp_norm(v, c, 2)
    assert weighted_lp_norm(SignalSequence([2.0]), c, 1) == 2.0
    with pytest.raises(ValueError):
        weighted_lp_norm(v, c, 0.5)


def test_bias_variance_examples():
    c = WeightScheme("constant")
    theta = SignalSequence([1.0, 0.5])
    obs = ObservationSet([1.2, 0.3], 0.1)
    m = Model.from_indices(2, [(-1, 0)])
    B = bias_term(theta, m, c, 2)
    V = variance_term(obs, theta, m, c, 2)
    assert B == pytest.approx(0.25, abs=1e-15)
    assert V == pytest.approx(0.04, abs=1e-15)
    assert loss(projection(obs, m), theta, c, 2) == pytest.approx(0.29, abs=1e-15)
    assert bias_term(theta, Model.full(2), c, 2) == 0
    assert bias_term(theta, Model.empty(2), c, 2) == pytest.approx(1.25)


def test_bias_lower_bound_flag():
    m = Model.full(2)
    assert not bias_term(SignalSequence([1.0, 1.0]), m, WeightScheme(), 2).lower_bound
    assert bias_term(SignalSequence([1.0, 1.0], exact_tail=False), m, WeightScheme(), 2).lower_bound


def test_zero_noise_variance():
    theta = SignalSequence(np.arange(8.0))
    obs = ObservationSet(theta.values, 0.0)
    for code in range(256):
        m = Model([(code >> i) & 1 for i in range(8)])
        assert variance_term(obs, theta, m, WeightScheme(), 3) == 0


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
@pytest.mark.parametrize("kind", ["constant", "dyadic"])
def test_bias_plus_variance_all_models(p, kind):
    rng = make_rng(3, "bv", int(p * 10))
    theta = SignalSequence(rng.standard_normal(8))
    obs = ObservationSet(theta.values + 0.3 * rng.standard_normal(8), 0.3)
    w = WeightScheme(kind, p)
    for code in range(256):
        m = Model([(code >> i) & 1 for i in range(8)])
        direct = loss(projection(obs, m), theta, w, p)
        split = bias_term(theta, m, w, p) + variance_term(obs, theta, m, w, p)
        assert split == pytest.approx(direct, rel=1e-12, abs=1e-15)


def test_model_constructors():
    m = Model.from_indices(8, [(1, 1), DyadicIndex(2, 0)])
    assert list(m.flat_indices()) == [3, 4]
    assert m.cardinalities() == [0, 0, 1, 1]
    assert Model.prefix(8, 3) == Model.from_indices(8, [(-1, 0), (0, 0), (1, 0)])
    with pytest.raises(InvalidModelError):
        Model.from_indices(4, [(2, 0)])
    with pytest.raises(InvalidModelError):
        variance_term(ObservationSet(np.zeros(8), 0.1), SignalSequence(np.zeros(8)),
                      Model.full(4), WeightScheme(), 2)


def test_signal_read_only():
    theta = SignalSequence([1.0, 2.0])
    with pytest.raises(ValueError):
        theta.values[0] = 3.0


def test_csv_round_trip(tmp_path):
    theta = gen_dense(BesovBall(1, 2, 1), 3, seed=5)
    write_signal(tmp_path / "s.csv", theta, {"seed": 5})
    back = read_signal(tmp_path / "s.csv")
    assert np.array_equal(back.values, theta.values) and back.exact_tail
    obs = ObservationSet(theta.values + 0.01, 0.125)
    write_observations(tmp_path / "o.csv", obs)
    again = read_observations(tmp_path / "o.csv")
    assert np.array_equal(again.y, obs.y) and again.epsilon == 0.125
    text = (tmp_path / "o.csv").read_text().splitlines()
    assert text[0] == "j,k,value" and text[-1].startswith("#")


def test_flat_observations_round_trip(tmp_path):
    obs = ObservationSet(np.arange(5.0), 0.5, dyadic=False)
    write_observations(tmp_path / "f.csv", obs)
    back = read_observations(tmp_path / "f.csv")
    assert not back.dyadic and np.array_equal(back.y, obs.y)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.floats(1, 4), st.integers(0, 10 ** 6))
def test_norm_homogeneity_and_triangle(J, p, seed):
    rng = make_rng(seed, "prop")
    n = 2 ** (J + 1)
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    w = WeightScheme.dyadic(p)
    nu = weighted_lp_norm(u, w, p)
    assert weighted_lp_norm(3 * u, w, p) == pytest.approx(3 * nu, rel=1e-12)
    assert weighted_lp_norm(u + v, w, p) <= nu + weighted_lp_norm(v, w, p) + 1e-12
    assert weighted_lp_power(u, w, p) >= 0
