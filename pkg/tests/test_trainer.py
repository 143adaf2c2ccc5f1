import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polarcast.checkpoint import params_digest
from polarcast.dataio import Polarity, WindowSet
from polarcast.netcore import ArchConfig, init_params
from polarcast.trainer import (
    AdamState,
    SgdState,
    TrainConfig,
    TrainingError,
    adam_step,
    epoch_batches,
    evaluate,
    mean_accuracy,
    sgd_step,
    train,
)

ARCH = ArchConfig(
    window_len=32,
    conv_channels=(2, 2, 2, 2, 2),
    kernel_size=3,
    pool_every_block=False,
    dense_widths=(4, 1),
)


def scalar_params():
    """A params tree whose every tensor is set to a known constant, for
    hand-iterated optimizer traces; float64 so the traces match to 1e-12."""
    params = init_params(ARCH, 0).astype(np.float64)
    for t in params.tensors().values():
        t[...] = 1.0
    return params


def const_grads(params, value):
    return {n: np.full(t.shape, value, dtype=np.float64)
            for n, t in params.tensors().items()}


def make_ws(n, window_len=32, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = [Polarity.UP if i % 2 == 0 else Polarity.DOWN for i in range(n)]
    return WindowSet(
        values=rng.normal(size=(n, window_len)),
        ids=[f"w{i}" for i in range(n)],
        labels=labels,
    )


class TestSgdStep:
    def test_plain_sgd_arithmetic(self):
        params = scalar_params()
        state = SgdState.init(params)
        sgd_step(params, const_grads(params, 0.5), state, lr=0.01, momentum=0.0)
        for t in params.tensors().values():
            assert np.allclose(t, 0.995, rtol=0, atol=1e-12)

    def test_momentum_two_step_trace(self):
        # hand-iterated: v1 = 1, p1 = 0.99; v2 = 1.8, p2 = 0.972
        params = scalar_params()
        state = SgdState.init(params)
        g = const_grads(params, 1.0)
        sgd_step(params, g, state, lr=0.01, momentum=0.8)
        assert np.allclose(state.velocity["dense1.w"], 1.0, rtol=0, atol=1e-12)
        assert np.allclose(params.dense_w[0], 0.99, rtol=0, atol=1e-12)
        sgd_step(params, g, state, lr=0.01, momentum=0.8)
        assert np.allclose(state.velocity["dense1.w"], 1.8, rtol=0, atol=1e-12)
        assert np.allclose(params.dense_w[0], 0.972, rtol=0, atol=1e-12)

    def test_zero_grad_zero_velocity_fixed_point(self):
        params = scalar_params()
        before = params_digest(params)
        sgd_step(params, const_grads(params, 0.0), SgdState.init(params), 0.01, 0.8)
        assert params_digest(params) == before

    def test_momentum_zero_equals_vanilla_bitwise(self):
        rng = np.random.default_rng(4)
        a = init_params(ARCH, 1)
        b = a.copy()
        grads = {n: rng.normal(size=t.shape) for n, t in a.tensors().items()}
        sgd_step(a, grads, SgdState.init(a), lr=0.01, momentum=0.0)
        for name, t in b.tensors().items():
            np.subtract(t, 0.01 * grads[name], out=t, casting="same_kind")
        assert params_digest(a) == params_digest(b)

    def test_non_finite_gradient_aborts(self):
        params = scalar_params()
        grads = const_grads(params, 1.0)
        grads["conv3.w"][0] = np.nan
        with pytest.raises(TrainingError):
            sgd_step(params, grads, SgdState.init(params), 0.01, 0.8)


class TestAdamStep:
    def test_first_step_hand_derived(self):
        # m_hat = 1, v_hat = 1 -> delta = -0.01 / (1 + 0.01)
        params = scalar_params()
        state = AdamState.init(params)
        adam_step(params, const_grads(params, 1.0), state, lr=0.01,
                  beta1=0.9, beta2=0.999, eps=0.01)
        expected = 1.0 - 0.01 / 1.01
        for t in params.tensors().values():
            assert np.allclose(t, expected, rtol=0, atol=1e-12)
        assert state.t == 1

    def test_zero_grad_fixed_point(self):
        params = scalar_params()
        before = params_digest(params)
        adam_step(params, const_grads(params, 0.0), AdamState.init(params),
                  0.01, 0.9, 0.999, 0.01)
        assert params_digest(params) == before

    def test_scale_invariance_as_eps_vanishes(self):
        deltas = []
        for g in (0.001, 1.0):
            params = scalar_params()
            adam_step(params, const_grads(params, g), AdamState.init(params),
                      lr=0.01, beta1=0.9, beta2=0.999, eps=1e-12)
            deltas.append(1.0 - float(params.dense_w[0][0, 0]))
        ratio = deltas[0] / deltas[1]
        assert abs(ratio - 1.0) < 1e-6


class TestEpochBatches:
    @given(n=st.integers(1, 500), batch=st.integers(1, 600), seed=st.integers(0, 99))
    @settings(max_examples=60)
    def test_every_epoch_is_a_permutation(self, n, batch, seed):
        rng = np.random.default_rng(seed)
        batches = list(epoch_batches(rng, n, batch))
        flat = np.concatenate(batches)
        assert sorted(flat.tolist()) == list(range(n))
        # short tail batch kept, never dropped
        assert sum(len(b) for b in batches) == n


class TestEarlyStopping:
    def scripted(self, losses):
        seq = list(losses)

        def hook(_params, epoch):
            return seq[epoch - 1]

        return hook

    def small_sets(self):
        return make_ws(24), make_ws(8, seed=9)

    def test_patience_rule_stops_at_best_plus_patience(self):
        train_ws, val_ws = self.small_sets()
        losses = [0.5, 0.4] + [0.41 + 0.001 * i for i in range(12)]
        cfg = TrainConfig(batch_size=8, max_epochs=100, patience=10, seed=5)
        params, record = train(ARCH, train_ws, val_ws, cfg,
                               eval_hook=self.scripted(losses))
        assert record.epochs_run == 12
        assert record.best_epoch == 2
        assert record.stop_reason == "patience"

    def test_returns_best_snapshot_not_last(self):
        train_ws, val_ws = self.small_sets()
        losses = [0.5, 0.4] + [0.41 + 0.001 * i for i in range(12)]
        cfg = TrainConfig(batch_size=8, max_epochs=100, patience=10, seed=5)
        params, record = train(ARCH, train_ws, val_ws, cfg,
                               eval_hook=self.scripted(losses))
        # an identical run truncated at the best epoch yields the same weights
        cfg2 = TrainConfig(batch_size=8, max_epochs=2, patience=10, seed=5)
        params2, _ = train(ARCH, train_ws, val_ws, cfg2,
                           eval_hook=self.scripted(losses))
        assert params_digest(params) == params_digest(params2)

    def test_strictly_decreasing_runs_to_max_epochs(self):
        train_ws, val_ws = self.small_sets()
        cfg = TrainConfig(batch_size=8, max_epochs=20, patience=10, seed=1)
        params, record = train(ARCH, train_ws, val_ws, cfg,
                               eval_hook=lambda p, e: 1.0 / e)
        assert record.epochs_run == 20
        assert record.stop_reason == "max_epochs"
        assert record.best_epoch == 20

    def test_best_epoch_matches_min_val_loss(self):
        train_ws, val_ws = self.small_sets()
        losses = [0.5, 0.3, 0.6, 0.2] + [0.9] * 10
        cfg = TrainConfig(batch_size=8, max_epochs=100, patience=10, seed=2)
        _, record = train(ARCH, train_ws, val_ws, cfg, eval_hook=self.scripted(losses))
        assert record.val_losses[record.best_epoch - 1] == min(record.val_losses)

    def test_empty_split_fatal(self):
        train_ws, val_ws = self.small_sets()
        empty = WindowSet(values=np.zeros((0, 32)), ids=[], labels=[])
        cfg = TrainConfig(batch_size=8)
        with pytest.raises(ValueError):
            train(ARCH, empty, val_ws, cfg)
        with pytest.raises(ValueError):
            train(ARCH, train_ws, empty, cfg)

    def test_dropout_flag_mismatch_fatal(self):
        train_ws, val_ws = self.small_sets()
        cfg = TrainConfig(batch_size=8, dropout_enabled=True)
        with pytest.raises(ValueError):
            train(ARCH, train_ws, val_ws, cfg)


class TestTrainDeterminism:
    def test_bitwise_identical_best_params(self):
        train_ws, val_ws = make_ws(40, seed=3), make_ws(10, seed=4)
        cfg = TrainConfig(batch_size=16, max_epochs=4, patience=10, seed=11)
        a, ra = train(ARCH, train_ws, val_ws, cfg)
        b, rb = train(ARCH, train_ws, val_ws, cfg)
        assert params_digest(a) == params_digest(b)
        assert ra.val_losses == rb.val_losses

    def test_non_finite_data_aborts_training(self):
        train_ws, val_ws = make_ws(16, seed=3), make_ws(8, seed=4)
        train_ws.values[0, 0] = np.nan
        cfg = TrainConfig(batch_size=8, max_epochs=3)
        with pytest.raises(TrainingError):
            train(ARCH, train_ws, val_ws, cfg)


class TestEvaluate:
    def test_all_correct(self):
        params = init_params(ARCH, 0)
        ws = make_ws(12, seed=6)
        r = evaluate(params, ws)
        forced = [Polarity.UP if p >= 0.5 else Polarity.DOWN for p in r.predictions]
        ws_correct = WindowSet(values=ws.values, ids=ws.ids, labels=forced)
        r2 = evaluate(params, ws_correct)
        assert r2.accuracy == 1.0
        assert r2.confusion[0, 1] == 0 and r2.confusion[1, 0] == 0

    def test_tie_rule_classifies_up(self):
        params = init_params(ARCH, 0)
        for t in params.tensors().values():
            t[...] = 0.0  # p is exactly 0.5 everywhere
        ws = make_ws(4, seed=7, labels=[Polarity.UP] * 4)
        r = evaluate(params, ws)
        assert np.all(r.predictions == 0.5)
        assert r.accuracy == 1.0  # 0.5 -> Up

    def test_confusion_counts_sum_to_n(self):
        params = init_params(ARCH, 1)
        ws = make_ws(17, seed=8)
        r = evaluate(params, ws)
        assert r.confusion.sum() == 17

    def test_empty_set_fatal(self):
        params = init_params(ARCH, 0)
        with pytest.raises(ValueError):
            evaluate(params, WindowSet(values=np.zeros((0, 32)), ids=[], labels=[]))

    def test_undecidable_rejected(self):
        params = init_params(ARCH, 0)
        ws = make_ws(3, labels=[Polarity.UP, Polarity.DOWN, Polarity.UNDECIDABLE])
        with pytest.raises(ValueError):
            evaluate(params, ws)


class TestMeanAccuracy:
    def test_constant(self):
        assert mean_accuracy([0.9, 0.9, 0.9]) == (0.9, 0.0)

    def test_two_values_sample_std(self):
        mean, std = mean_accuracy([0.8, 1.0])
        assert mean == pytest.approx(0.9)
        assert std == pytest.approx(np.sqrt(0.02), abs=1e-12)

    def test_single_value_fatal(self):
        with pytest.raises(ValueError):
            mean_accuracy([0.9])


class TestTrainConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValueError):
            TrainConfig(patience=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(dataset_variant="raw")
