import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mhfl.pafl import (Algorithm, ClientData, DivergenceError, FederatedData, FLConfig,
                       metrics_csv, make_label_skew_data, pafl_aggregate, pafl_local_update,
                       softmax_loss_grad, train)


def test_local_update_examples():
    w = pafl_local_update(np.array([1.0, 0.0]), np.zeros(2), np.zeros(2), 0.1, 0.5)
    assert w.tolist() == pytest.approx([0.95, 0.0])
    g = np.array([0.3, -0.2])
    assert np.array_equal(pafl_local_update(np.ones(2), np.zeros(2), g, 0.1, 0.0), np.ones(2) - 0.1 * g)
    same = np.array([0.4, 2.0])
    assert np.array_equal(pafl_local_update(same, same, np.zeros(2), 0.3, 0.7), same)


def test_local_update_rejects_bad_input():
    with pytest.raises(FloatingPointError):
        pafl_local_update(np.zeros(2), np.zeros(2), np.array([np.nan, 0.0]), 0.1, 0.1)
    with pytest.raises(ValueError):
        pafl_local_update(np.zeros(2), np.zeros(3), np.zeros(2), 0.1, 0.1)
    with pytest.raises(ValueError):
        pafl_local_update(np.zeros(2), np.zeros(2), np.zeros(2), 0.0, 0.1)


def test_aggregate_examples():
    models = [np.array([0.0, 1.0]), np.array([4.0, 1.0])]
    assert pafl_aggregate(models, [1, 3])[0] == pytest.approx(3.0)
    assert pafl_aggregate(models, [1, 1]).tolist() == [2.0, 1.0]
    assert np.array_equal(pafl_aggregate(models[:1], [2.0]), models[0])
    with pytest.raises(ValueError):
        pafl_aggregate([], [])
    with pytest.raises(ValueError):
        pafl_aggregate(models, [0, 0])


@given(st.lists(st.floats(0.01, 100), min_size=3, max_size=3), st.floats(1e-3, 1e3))
def test_aggregate_scale_invariant(weights, c):
    rng = np.random.default_rng(0)
    models = [rng.normal(size=5) for _ in range(3)]
    a = pafl_aggregate(models, weights)
    b = pafl_aggregate(models, np.array(weights) * c)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(30, 4)), rng.integers(0, 3, 30)
    for _ in range(5):
        w = rng.normal(size=15)
        _, g = softmax_loss_grad(w, x, y, 3)
        h = 1e-6
        fd = np.array([(softmax_loss_grad(w + h * e, x, y, 3)[0] - softmax_loss_grad(w - h * e, x, y, 3)[0]) / (2 * h)
                       for e in np.eye(15)])
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_label_skew_partition():
    data = make_label_skew_data(1)
    assert len(data.clients) == 10 and data.dim == 20
    assert all(len(c.y) >= 1 for c in data.clients)
    assert data.proportions.sum(axis=0) == pytest.approx(np.ones(10))
    # a client's two dominant labels hold most of its samples
    counts = np.bincount(data.clients[0].y, minlength=10)
    assert counts[[0, 1]].sum() >= 0.8 * counts.sum()


def test_zero_lambda_uniform_matches_vanilla():
    data = make_label_skew_data(2, n_clients=4)
    a = train(FLConfig(rounds=4, local_steps=5, lam=0.0, weight_rule="uniform"), data, 2)
    b = train(FLConfig(rounds=4, local_steps=5, algorithm="vanilla"), data, 2)
    assert [r["loss"] for r in a] == [r["loss"] for r in b]
    assert [r["accuracy"] for r in a] == [r["accuracy"] for r in b]


def test_single_client_matches_centralized_descent():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(50, 3)), rng.integers(0, 2, 50)
    client = ClientData(x, y, x, y)
    data = FederatedData([client], x, y, np.ones((1, 2)), 2)
    rows = train(FLConfig(rounds=3, local_steps=4, lr=0.2, lam=0.0, algorithm="vanilla"), data, 0)
    w = np.zeros(8)
    for _ in range(12):
        w = w - 0.2 * softmax_loss_grad(w, x, y, 2)[1]
    assert rows[-1]["loss"] == pytest.approx(softmax_loss_grad(w, x, y, 2)[0], rel=1e-12)


def test_training_is_deterministic_and_reports_rows():
    data = make_label_skew_data(5, n_clients=3)
    cfg = FLConfig(rounds=3, local_steps=3)
    assert train(cfg, data, 5) == train(cfg, make_label_skew_data(5, n_clients=3), 5)
    rows = train(FLConfig(rounds=2, local_steps=3, algorithm=Algorithm.PERSONALIZED), data, 5)
    assert [r["round"] for r in rows] == [1, 2]
    assert metrics_csv(rows).splitlines()[0] == "round,algorithm,accuracy,loss,seed"


def test_divergence_names_round():
    data = make_label_skew_data(0, n_clients=2)
    with pytest.raises(DivergenceError) as err:
        train(FLConfig(rounds=30, local_steps=5, lr=1e308, algorithm="vanilla"), data, 0)
    assert err.value.round >= 1


def test_config_validation():
    with pytest.raises(ValueError):
        FLConfig(weight_rule="bogus").validate()
    with pytest.raises(ValueError):
        FLConfig(lam=-1.0).validate()
