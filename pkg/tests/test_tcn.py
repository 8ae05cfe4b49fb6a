import numpy as np
import pytest

from jumppipe import dataio, nncore, tcn
from jumppipe.nncore import DimensionError


def small_config(num_stages=2, num_layers=2, num_filters=4, in_channels=3,
                 num_classes=3, **kw):
    return tcn.MsTcnConfig(
        num_stages=num_stages,
        stage=tcn.SsTcnConfig(num_layers=num_layers, num_filters=num_filters,
                              in_channels=in_channels, num_classes=num_classes),
        **kw,
    )


@pytest.fixture(scope="module")
def overfit_session():
    cfg = dataio.SyntheticConfig(
        num_subjects=1, jumps_per_class={"CMJ": 1, "Smash": 1, "Block": 1},
        session_duration_s=10.0, seed=3,
    )
    sessions, _ = dataio.synth_generate(cfg)
    return sessions[0]


@pytest.fixture(scope="module")
def overfit_run(overfit_session):
    config = small_config(num_stages=2, num_layers=4, num_filters=16,
                          in_channels=6, num_classes=8, epochs=350, lr=1e-3,
                          seed=0)
    weights, history = tcn.train(config, [overfit_session])
    return weights, history


class TestBuild:
    def test_same_seed_identical(self):
        cfg = small_config()
        a = tcn.build_mstcn(cfg, seed=5)
        b = tcn.build_mstcn(cfg, seed=5)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            assert pa.tobytes() == pb.tobytes()

    def test_single_stage(self):
        w = tcn.build_mstcn(small_config(num_stages=1), seed=0)
        assert len(w.stages) == 1

    def test_param_count_matches_formula(self):
        cfg = tcn.MsTcnConfig()  # defaults: 4 stages, 10 layers, 64 filters
        w = tcn.build_mstcn(cfg, seed=0)
        F, J, C, L, k = 64, 8, 6, 10, 3
        per_stage_blocks = L * ((k * F * F + F) + (F * F + F))
        expected = 0
        for s in range(cfg.num_stages):
            din = C if s == 0 else J
            expected += (din * F + F) + per_stage_blocks + (F * J + J)
        assert sum(p.size for p in w.params()) == expected


class TestForward:
    def test_zero_weights_zero_logits(self):
        w = tcn.build_mstcn(small_config(num_stages=1), seed=0)
        for p in w.params():
            p[...] = 0.0
        logits, _ = tcn.sstcn_forward(w.stages[0], np.ones((6, 3)))
        np.testing.assert_allclose(logits, 0.0)

    @pytest.mark.parametrize("T", [1, 2, 17])
    def test_output_shape(self, T):
        w = tcn.build_mstcn(small_config(), seed=1)
        logits, _ = tcn.sstcn_forward(w.stages[0], np.ones((T, 3)))
        assert logits.shape == (T, 3)

    def test_receptive_field_formula(self):
        assert tcn.SsTcnConfig(num_layers=10).receptive_field() == 2047
        assert tcn.SsTcnConfig(num_layers=2).receptive_field() == 7

    def test_stage_chaining_single(self):
        w = tcn.build_mstcn(small_config(num_stages=1), seed=2)
        x = np.random.default_rng(0).normal(size=(12, 3))
        probs = tcn.mstcn_forward(w, x)
        assert len(probs) == 1
        logits, _ = tcn.sstcn_forward(w.stages[0], x)
        np.testing.assert_allclose(probs[0], nncore.softmax_rows(logits))

    def test_all_stage_rows_sum_to_one(self):
        w = tcn.build_mstcn(small_config(num_stages=3), seed=2)
        x = np.random.default_rng(1).normal(size=(20, 3))
        for probs in tcn.mstcn_forward(w, x):
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_channel_mismatch(self):
        w = tcn.build_mstcn(small_config(), seed=0)
        with pytest.raises(DimensionError):
            tcn.mstcn_forward(w, np.zeros((5, 4)))

    @pytest.mark.parametrize("num_layers,T,t", [(2, 40, 20), (10, 3000, 1500)])
    def test_temporal_locality(self, num_layers, T, t):
        cfg = small_config(num_stages=1, num_layers=num_layers,
                           num_filters=8 if num_layers == 2 else 64,
                           in_channels=3, num_classes=3)
        w = tcn.build_mstcn(cfg, seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(T, 3))
        base, _ = tcn.sstcn_forward(w.stages[0], x)
        x2 = x.copy()
        x2[t] += 1.0
        bumped, _ = tcn.sstcn_forward(w.stages[0], x2)
        radius = (cfg.stage.receptive_field() - 1) // 2
        changed = np.any(base != bumped, axis=1)
        assert not changed[: max(0, t - radius)].any()
        assert not changed[t + radius + 1 :].any()


class TestTrain:
    def test_zero_epochs_returns_init(self, overfit_session):
        config = small_config(in_channels=6, num_classes=8, epochs=0, seed=9)
        weights, history = tcn.train(config, [overfit_session])
        init = tcn.build_mstcn(config)
        assert history == []
        for (_, a), (_, b) in zip(weights.named_params(), init.named_params()):
            assert a.tobytes() == b.tobytes()

    def test_requires_labels(self, overfit_session):
        bare = dataio.ImuSession("x", overfit_session.samples.copy())
        with pytest.raises(ValueError):
            tcn.train(small_config(in_channels=6, num_classes=8, epochs=1), [bare])

    def test_requires_sessions(self):
        with pytest.raises(ValueError):
            tcn.train(small_config(epochs=1), [])

    def test_loss_finite_and_decreasing_early(self, overfit_run):
        _, history = overfit_run
        assert all(np.isfinite(history))
        non_improving = sum(1 for a, b in zip(history[:9], history[1:10])
                            if b >= a)
        assert non_improving <= 2

    def test_overfit_reaches_99_percent(self, overfit_run, overfit_session):
        weights, _ = overfit_run
        _, labels = tcn.predict(weights, overfit_session)
        assert (labels == overfit_session.labels).mean() >= 0.99

    def test_final_stage_refines_first(self, overfit_run, overfit_session):
        weights, _ = overfit_run
        probs = tcn.mstcn_forward(weights, overfit_session.samples)
        first = np.argmax(probs[0], axis=1)
        last = np.argmax(probs[-1], axis=1)
        truth = overfit_session.labels
        assert (last == truth).mean() >= (first == truth).mean()


class TestPredict:
    def test_single_sample(self):
        w = tcn.build_mstcn(small_config(in_channels=6, num_classes=8), seed=0)
        sess = dataio.ImuSession("a", np.zeros((1, 6)))
        probs, labels = tcn.predict(w, sess)
        assert probs.shape == (1, 8)
        assert labels.shape == (1,)

    def test_deterministic(self):
        w = tcn.build_mstcn(small_config(in_channels=6, num_classes=8), seed=0)
        sess = dataio.ImuSession("a", np.random.default_rng(2).normal(size=(30, 6)))
        _, l1 = tcn.predict(w, sess)
        _, l2 = tcn.predict(w, sess)
        assert np.array_equal(l1, l2)

    def test_argmax_shift_invariance(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(10, 4))
        shifted = logits + 3.7
        assert np.array_equal(
            np.argmax(nncore.softmax_rows(logits), axis=1),
            np.argmax(nncore.softmax_rows(shifted), axis=1),
        )

    def test_label_length_equals_input_length(self):
        w = tcn.build_mstcn(small_config(in_channels=6, num_classes=8), seed=0)
        for n in (1, 5, 33):
            sess = dataio.ImuSession("a", np.zeros((n, 6)))
            _, labels = tcn.predict(w, sess)
            assert labels.shape == (n,)
