import numpy as np
import pytest

from subgraph_infomax import autodiff as ad
from subgraph_infomax.autodiff import Tensor, backward
from subgraph_infomax.optim import AdamConfig, ParameterStore, adam_step


def make_store(values, trainable=True):
    store = ParameterStore()
    arr = np.asarray(values, dtype=np.float64)
    p = store.create("p", arr.shape, values=arr, trainable=trainable)
    return store, p


class TestAdamConfig:
    def test_defaults(self):
        cfg = AdamConfig()
        assert cfg.learning_rate == 1e-3
        assert cfg.beta1 == 0.9 and cfg.beta2 == 0.999
        assert cfg.epsilon == 1e-8

    @pytest.mark.parametrize("kwargs", [
        {"learning_rate": 0.0},
        {"beta1": 1.0},
        {"beta2": -0.1},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            AdamConfig(**kwargs)


class TestAdamStep:
    def test_first_step_moves_by_learning_rate(self):
        store, p = make_store(np.zeros((2, 3)))
        p.grad = np.ones((2, 3))
        adam_step(store, AdamConfig(learning_rate=1e-3))
        # Bias correction makes m_hat / sqrt(v_hat) = 1 on the first step.
        assert np.allclose(p.values, -1e-3, atol=1e-9)
        assert p.grad is None

    def test_zero_grad_leaves_parameter_unchanged(self):
        store, p = make_store([[1.0, 2.0]])
        p.grad = np.zeros((1, 2))
        adam_step(store, AdamConfig())
        assert np.array_equal(p.values, [[1.0, 2.0]])

    def test_missing_grad_is_noop(self):
        store, p = make_store([[1.0]])
        adam_step(store, AdamConfig())
        assert np.array_equal(p.values, [[1.0]])

    def test_quadratic_loss_decreases(self):
        store, p = make_store([[2.0, -3.0]])
        cfg = AdamConfig(learning_rate=0.05)

        def loss_value():
            return float((p.values**2).sum())

        first = loss_value()
        for _ in range(2):
            backward(ad.sum_all(ad.mul(p, p)))
            adam_step(store, cfg)
        assert loss_value() < first

    def test_weight_decay_shrinks_weights(self):
        store, p = make_store([[10.0]])
        p.grad = np.zeros((1, 1))
        adam_step(store, AdamConfig(weight_decay=0.1))
        assert p.values[0, 0] < 10.0

    def test_accumulation_defers_update(self):
        # Two backward passes before one step behave like a summed gradient.
        store, p = make_store([[1.0]])
        backward(ad.sum_all(ad.scale(p, 1.0)))
        backward(ad.sum_all(ad.scale(p, 1.0)))
        assert np.array_equal(p.grad, [[2.0]])
        adam_step(store, AdamConfig())
        assert p.grad is None


class TestParameterStore:
    def test_duplicate_name_rejected(self):
        store = ParameterStore()
        store.create("w", (1, 1), values=[[0.0]])
        with pytest.raises(ValueError):
            store.create("w", (1, 1), values=[[0.0]])

    def test_fan_in_bound(self):
        store = ParameterStore()
        rng = np.random.default_rng(0)
        w = store.create("w", (64, 8), rng)
        assert np.abs(w.values).max() <= 1.0 / np.sqrt(64)

    def test_non_trainable_excluded_from_trainable(self):
        store = ParameterStore()
        store.create("frozen", (1, 1), values=[[1.0]], trainable=False)
        store.create("free", (1, 1), values=[[1.0]])
        assert len(store.trainable()) == 1

    def test_snapshot_roundtrip(self):
        store, p = make_store([[1.0, 2.0]])
        snap = store.clone_values()
        p.values[:] = 99.0
        store.load_values(snap)
        assert np.array_equal(p.values, [[1.0, 2.0]])

    def test_checkpoint_roundtrip_is_exact(self, tmp_path):
        store = ParameterStore()
        rng = np.random.default_rng(3)
        store.create("a", (3, 4), rng)
        store.create("b", (1, 7), rng, trainable=False)
        path = tmp_path / "params.json"
        store.save(path)

        fresh = ParameterStore()
        fresh.load(path)
        for name in store.names():
            assert np.array_equal(fresh[name].values, store[name].values)
            assert fresh[name].requires_grad == store[name].requires_grad
