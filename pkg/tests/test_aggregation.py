import numpy as np
import pytest
from conftest import scalar_mlp
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgan.aggregation import (ClientUpdate, FedCAR, ServerOptState, WeightVector, fedavg, fedcar_aggregate,
                                fedcar_weights, fedopt_round, make_aggregator, weights_from_fid_matrix)
from fedgan.codec import model_to_flat
from fedgan.errors import NoUpdates, ShapeError
from fedgan.tinygan import ModelPair, init_model


def scalar_pair(g, d=0.0):
    return ModelPair(scalar_mlp(g, 0.0), scalar_mlp(d, 0.0))


def upd(i, g, size=1, d=0.0):
    return ClientUpdate(i, scalar_pair(g, d), size)


def gval(model):
    return model.generator.weights[0][0, 0]


def test_fedavg_hand_cases():
    assert gval(fedavg([upd(0, 1.0, 5), upd(1, 3.0, 5)])) == 2.0
    out = fedavg([upd(0, 0.0, 1000, d=0.0), upd(1, 10.0, 9000, d=10.0)])
    assert gval(out) == 9.0
    assert out.discriminator.weights[0][0, 0] == 9.0


def test_fedavg_single_client_exact():
    m = init_model([4, 8, 2], [2, 8, 1], 0)
    out = fedavg([ClientUpdate(0, m, 17)])
    assert np.array_equal(model_to_flat(out), model_to_flat(m))


def test_fedavg_errors():
    with pytest.raises(NoUpdates):
        fedavg([])
    a = ClientUpdate(0, init_model([4, 8, 2], [2, 8, 1], 0), 1)
    b = ClientUpdate(1, init_model([4, 6, 2], [2, 8, 1], 0), 1)
    with pytest.raises(ShapeError):
        fedavg([a, b])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_property_fedavg_affine_equivariant(n, seed, c):
    rng = np.random.default_rng(seed)
    models = [init_model([3, 5, 2], [2, 4, 1], int(s)) for s in rng.integers(0, 10**6, size=n)]
    sizes = rng.integers(1, 100, size=n)
    base = model_to_flat(fedavg([ClientUpdate(i, m, int(s)) for i, (m, s) in enumerate(zip(models, sizes))]))
    shifted = []
    for m in models:
        m2 = m.copy()
        for t in m2.generator.tensors() + m2.discriminator.tensors():
            t += c
        shifted.append(m2)
    out = model_to_flat(fedavg([ClientUpdate(i, m, int(s)) for i, (m, s) in enumerate(zip(shifted, sizes))]))
    assert np.allclose(out, base + c, rtol=1e-12, atol=1e-12)


def fresh_state(lr, n=4):
    return ServerOptState.fresh(n, server_lr=lr, beta1=0.9, beta2=0.99, eps=1e-8)


def test_fedopt_first_step_hand_computed():
    lr = 0.05
    new, state = fedopt_round(scalar_pair(0.0), [upd(0, 2.0), upd(1, 4.0)], fresh_state(lr))
    # pseudo-gradient -3: m_hat = -3, sqrt(v_hat) = 3
    assert abs(gval(new) - lr * 3.0 / (3.0 + 1e-8)) <= 1e-10
    assert state.step_count == 1


def test_fedopt_fixed_point_and_zero_lr():
    g = scalar_pair(1.25, -0.5)
    new, state = fedopt_round(g, [ClientUpdate(0, g.copy(), 1), ClientUpdate(1, g.copy(), 3)], fresh_state(0.1))
    assert np.array_equal(model_to_flat(new), model_to_flat(g))
    assert state.step_count == 1
    new, _ = fedopt_round(g, [upd(0, 7.0), upd(1, -3.0)], fresh_state(0.0))
    assert np.array_equal(model_to_flat(new), model_to_flat(g))


def test_fedopt_sgd_and_shape_errors():
    st = ServerOptState.fresh(4, server_lr=1.0, kind="sgd")
    new, _ = fedopt_round(scalar_pair(0.0), [upd(0, 2.0), upd(1, 4.0)], st)
    assert gval(new) == 3.0  # server SGD with lr 1 is the unweighted mean
    with pytest.raises(ShapeError):
        fedopt_round(scalar_pair(0.0), [upd(0, 2.0)], fresh_state(0.1, n=5))


def test_fedcar_weights_equal_distances():
    m = np.full((3, 3), 2.5) - 2.5 * np.eye(3)
    w = weights_from_fid_matrix(m)
    assert np.allclose(w.alphas, 1 / 3, rtol=1e-15)


def test_fedcar_weights_hand_fixture():
    m = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    w = weights_from_fid_matrix(m)
    assert np.array_equal(w.raw_totals, [3, 4, 5])
    assert np.allclose(w.raw_alphas, [1 / 3, 1 / 4, 1 / 5], rtol=1e-15)
    assert np.abs(w.alphas - np.array([20, 15, 12]) / 47).max() <= 1e-12


def test_fedcar_weights_two_clients_always_half():
    rng = np.random.default_rng(0)
    for _ in range(5):
        sets = [rng.standard_normal((30, 2)) * rng.uniform(0.1, 3) + rng.normal(size=2) for _ in range(2)]
        w = fedcar_weights(sets)
        assert np.array_equal(w.alphas, [0.5, 0.5])


def test_fedcar_weights_floor_on_identical_generators():
    x = np.random.default_rng(0).standard_normal((20, 2))
    w = fedcar_weights([x, x, x])
    assert np.array_equal(w.alphas, np.full(3, 1 / 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_property_weight_invariants(n, seed, scale):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.uniform(0.01, 10, size=(n, n)), 1)
    m = upper + upper.T
    w = weights_from_fid_matrix(m)
    assert abs(w.alphas.sum() - 1) <= 1e-9
    assert np.all((w.alphas > 0) & (w.alphas < 1))
    order = np.argsort(w.raw_totals)
    assert np.all(np.diff(w.alphas[order]) <= 1e-15)  # larger total -> smaller weight
    assert np.allclose(weights_from_fid_matrix(scale * m).alphas, w.alphas, rtol=1e-12)
    perm = rng.permutation(n)
    assert np.allclose(weights_from_fid_matrix(m[np.ix_(perm, perm)]).alphas, w.alphas[perm], rtol=1e-12)


def wv(alphas):
    a = np.asarray(alphas, float)
    return WeightVector(a, np.zeros_like(a), np.zeros_like(a))


def test_fedcar_aggregate_cases():
    ups = [upd(0, 47.0, 10, d=1.0), upd(1, 0.0, 10, d=2.0), upd(2, 0.0, 20, d=4.0)]
    out = fedcar_aggregate(ups, wv(np.array([20, 15, 12]) / 47))
    assert gval(out) == pytest.approx(20.0, abs=1e-12)
    assert out.discriminator.weights[0][0, 0] == pytest.approx((10 + 20 + 80) / 40)  # size-weighted
    out = fedcar_aggregate(ups[:2], wv([1.0, 0.0]))
    assert gval(out) == 47.0
    out = fedcar_aggregate(ups, wv(np.array([20, 15, 12]) / 47), disc_policy="alpha")
    assert out.discriminator.weights[0][0, 0] == pytest.approx((20 + 30 + 48) / 47)
    with pytest.raises(ShapeError):
        fedcar_aggregate(ups, wv([0.5, 0.5]))


def test_fedcar_uniform_weights_equal_fedavg_equal_sizes():
    ms = [init_model([4, 8, 2], [2, 8, 1], s) for s in range(3)]
    ups = [ClientUpdate(i, m, 100) for i, m in enumerate(ms)]
    a = fedcar_aggregate(ups, wv(np.full(3, 1 / 3)))
    b = fedavg(ups)
    assert np.allclose(model_to_flat(a), model_to_flat(b), rtol=0, atol=1e-15)


def test_fedcar_two_clients_bitwise_equals_fedavg():
    rng = np.random.default_rng(9)
    ms = [init_model([4, 8, 2], [2, 8, 1], s) for s in (1, 2)]
    ups = [ClientUpdate(i, m, 64) for i, m in enumerate(ms)]
    sets = [rng.standard_normal((50, 2)), rng.standard_normal((50, 2)) * 2 + 1]
    car = fedcar_aggregate(ups, fedcar_weights(sets))
    avg = fedavg(ups)
    assert np.array_equal(model_to_flat(car), model_to_flat(avg))


def test_strategy_objects():
    ups = [upd(0, 1.0, 5), upd(1, 3.0, 5)]
    g = scalar_pair(0.0)
    out, info = make_aggregator("fedavg").aggregate(g, ups)
    assert gval(out) == 2.0 and info == {}
    agg = make_aggregator("fedadam", server_lr=0.05)
    out, _ = agg.aggregate(g, ups)
    assert abs(gval(out) - 0.05 * 2 / (2 + 1e-8)) <= 1e-10
    car = make_aggregator("fedcar")
    assert isinstance(car, FedCAR) and car.needs_fakes
    rng = np.random.default_rng(0)
    out, info = car.aggregate(g, ups, [rng.standard_normal((10, 2)), rng.standard_normal((10, 2))])
    assert np.array_equal(info["alphas"], [0.5, 0.5])
    with pytest.raises(ShapeError):
        car.aggregate(g, ups, None)
    with pytest.raises(ValueError):
        make_aggregator("fedprox")
