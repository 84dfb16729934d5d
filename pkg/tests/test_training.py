"""Optimizer algebra, schedule, losses, loop mechanics, trainer behavior."""

import numpy as np
import pytest

from seizgraph import autodiff as ad
from seizgraph.autodiff import Tensor
from seizgraph.electrodes import CHANNELS, ElectrodeLayout
from seizgraph.metrics import f1 as f1_metric
from seizgraph.model import ModelConfig
from seizgraph.preprocess import EegClip
from seizgraph.seeding import stream
from seizgraph.training import (
    AdamState,
    GraphSource,
    TrainConfig,
    TrainingError,
    TrainReport,
    _fit_loop,
    adam_step,
    bce_with_logits,
    cosine_lr,
    cross_entropy,
    mae,
    pretrain_self_supervised,
    split_by_recording,
    threshold_search,
    train_auxiliary,
    train_classification,
    train_detection,
    undersample_to_parity,
)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        params = {"p": p}
        state = AdamState.for_params(params)
        adam_step(params, state, lr=0.1)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_hand_formula(self):
        g = np.array([0.5, -1.5])
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = g.copy()
        params = {"p": p}
        state = AdamState.for_params(params)
        adam_step(params, state, lr=0.01)
        expected = np.array([1.0, 2.0]) - 0.01 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p.data, expected, atol=1e-12)

    def test_loss_scaling_scales_first_moment_not_signs(self):
        g = np.array([0.3, -0.7, 1.1])

        def run(scale):
            p = Tensor(np.zeros(3), requires_grad=True)
            p.grad = scale * g
            params = {"p": p}
            state = AdamState.for_params(params)
            adam_step(params, state, lr=0.05)
            return state.m["p"].copy(), p.data.copy()

        m1, p1 = run(1.0)
        m5, p5 = run(5.0)
        assert np.allclose(m5, 5.0 * m1)
        assert np.array_equal(np.sign(p1), np.sign(p5))

    def test_non_finite_gradient_aborts(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([1.0, np.nan])
        params = {"p": p}
        with pytest.raises(TrainingError, match="non-finite gradient"):
            adam_step(params, AdamState.for_params(params), lr=0.1)

    def test_identical_runs_identical_trajectories(self):
        def run():
            p = Tensor(np.array([0.4, -0.2]), requires_grad=True)
            params = {"p": p}
            state = AdamState.for_params(params)
            for step in range(5):
                p.grad = np.array([0.1, 0.2]) * (step + 1)
                adam_step(params, state, lr=0.01)
            return p.data.copy()

        assert run().tobytes() == run().tobytes()


class TestCosine:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 3e-4) == pytest.approx(3e-4, abs=1e-15)
        assert cosine_lr(100, 100, 3e-4, 1e-5) == pytest.approx(1e-5, abs=1e-15)
        assert cosine_lr(50, 100, 3e-4, 1e-5) == pytest.approx((3e-4 + 1e-5) / 2, abs=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(TrainingError):
            cosine_lr(101, 100, 1e-3)


class TestLosses:
    def test_bce_at_zero_logit(self):
        loss = bce_with_logits(Tensor(np.array([0.0])), np.array([1.0]))
        assert float(loss.data) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_cross_entropy_uniform(self):
        logits = Tensor(np.zeros((3, 4)))
        loss = cross_entropy(logits, np.array([0, 1, 3]))
        assert float(loss.data) == pytest.approx(np.log(4.0), abs=1e-12)

    def test_cross_entropy_out_of_range(self):
        with pytest.raises(TrainingError, match="out of range"):
            cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_mae_of_self_is_zero(self, rng):
        x = rng.standard_normal((2, 3))
        assert float(mae(Tensor(x), x).data) == 0.0

    def test_mae_respects_mask(self, rng):
        pred = Tensor(np.ones((2, 4)))
        target = np.zeros((2, 4))
        mask = np.array([[1.0], [0.0]])
        loss = mae(pred, target, mask=mask)
        assert float(loss.data) == pytest.approx(1.0)

    def test_bce_extreme_logits_stable(self):
        loss = bce_with_logits(Tensor(np.array([500.0, -500.0])), np.array([1.0, 0.0]))
        assert 0.0 <= float(loss.data) < 1e-200  # no overflow, no NaN
        loss = bce_with_logits(Tensor(np.array([-500.0])), np.array([1.0]))
        assert np.isfinite(loss.data) and float(loss.data) == pytest.approx(500.0)


class TestUndersample:
    def test_exact_parity(self):
        labels = np.array([1] * 10 + [0] * 50)
        idx = undersample_to_parity(labels, stream(0, "u"))
        kept = labels[idx]
        assert (kept == 1).sum() == 10
        assert (kept == 0).sum() == 10

    def test_without_replacement(self):
        labels = np.array([1] * 5 + [0] * 30)
        idx = undersample_to_parity(labels, stream(1, "u"))
        assert len(set(idx.tolist())) == len(idx)

    def test_no_positives_rejected(self):
        with pytest.raises(TrainingError, match="no positive"):
            undersample_to_parity(np.zeros(10, dtype=int), stream(0, "u"))


class TestThresholdSearch:
    def test_separated_case_returns_lowest_distinct_maximizer(self):
        probs = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([0, 0, 1, 1])
        t = threshold_search(probs, labels)
        assert t == pytest.approx(0.8)
        assert f1_metric((probs >= t).astype(int), labels) == 1.0

    def test_all_equal_scores(self):
        probs = np.full(5, 0.42)
        labels = np.array([1, 0, 1, 1, 0])
        assert threshold_search(probs, labels) == pytest.approx(0.42)

    def test_single_class_rejected(self):
        with pytest.raises(TrainingError, match="both classes"):
            threshold_search(np.array([0.3, 0.4]), np.array([1, 1]))

    @pytest.mark.parametrize("seed", range(5))
    def test_grid_oracle_never_beats_returned_threshold(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.random(60)
        labels = rng.integers(0, 2, size=60)
        if labels.sum() in (0, 60):
            labels[0] = 1 - labels[0]
        t = threshold_search(probs, labels)
        best = f1_metric((probs >= t).astype(int), labels)
        for g in np.arange(0.0, 1.0001, 1e-3):
            assert f1_metric((probs >= g).astype(int), labels) <= best + 1e-12


class TestFitLoop:
    def test_patience_trace_stops_after_window(self):
        scripted = iter([1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97])
        p = Tensor(np.array([1.0]), requires_grad=True)
        params = {"p": p}
        cfg = TrainConfig(task="detect", lr_init=1e-3, epochs_max=50, batch_size=4, patience=5)
        report = TrainReport(task="detect")

        def batch_loss(idx, epoch):
            return ad.reduce_sum(ad.mul(p, p))

        _fit_loop(params, batch_loss, lambda: next(scripted), 4, cfg, report)
        assert report.stopped_epoch == 7
        assert report.best_epoch == 2

    def test_best_weights_restored(self):
        vals = iter([0.5, 2.0, 2.0, 2.0, 2.0, 2.0])
        p = Tensor(np.array([1.0]), requires_grad=True)
        params = {"p": p}
        cfg = TrainConfig(task="detect", lr_init=0.5, epochs_max=10, batch_size=4, patience=5)
        report = TrainReport(task="detect")
        snapshots = []

        def batch_loss(idx, epoch):
            snapshots.append(p.data.copy())
            return ad.reduce_sum(ad.mul(p, p))

        _fit_loop(params, batch_loss, lambda: next(vals), 4, cfg, report)
        # best epoch was the first; the weights after that epoch are restored
        assert report.best_epoch == 1
        assert np.array_equal(p.data, snapshots[1])


def separable_detection_clips(rng, n, t=4, m=6, shift=3.0):
    clips = []
    for i in range(n):
        label = int(i % 2)
        feats = rng.standard_normal((t, 19, m))
        if label:
            feats[:, :, 2] += shift
        clips.append(
            EegClip(
                features=feats,
                valid_len=t,
                label=label,
                source_ref={"recording": f"r{i % 8}", "start_sec": float(i)},
            )
        )
    return clips


def small_model(m=6, **overrides):
    payload = dict(layers=1, hidden=4, k_hops=2, n_nodes=19, n_features=m, dropout_head=0.0)
    payload.update(overrides)
    return ModelConfig(**payload)


def small_train(**overrides):
    payload = dict(
        task="detect", lr_init=5e-3, epochs_max=3, batch_size=16, patience=5, seed=11,
    )
    payload.update(overrides)
    return TrainConfig(**payload)


class TestTrainDetection:
    def test_separable_features_reach_high_auroc(self, rng):
        clips = separable_detection_clips(rng, 96)
        train_clips, val_clips = split_by_recording(clips, 0.25, seed=0)
        weights, report = train_detection(
            train_clips, val_clips, GraphSource(mode="distance"),
            small_model(), small_train(epochs_max=20),
        )
        assert report.metrics["val_auroc"] > 0.99
        assert report.stopped_epoch <= 20

    def test_undersampled_parity_recorded(self, rng):
        clips = separable_detection_clips(rng, 60)
        # skew the labels: relabel most positives to negative
        for i, c in enumerate(clips):
            if i % 3:
                c.label = 0
        train_clips, val_clips = clips[:48], clips[48:]
        if not any(c.label == 1 for c in val_clips):
            val_clips[0].label = 1
        weights, report = train_detection(
            train_clips, val_clips, GraphSource(mode="distance"),
            small_model(), small_train(epochs_max=1),
        )
        n_pos = sum(c.label == 1 for c in train_clips)
        assert report.n_train == 2 * n_pos

    def test_bit_reproducible(self, rng):
        clips = separable_detection_clips(rng, 48)
        train_clips, val_clips = clips[:36], clips[36:]
        args = (
            GraphSource(mode="distance"), small_model(), small_train(epochs_max=2),
        )
        w1, r1 = train_detection(train_clips, val_clips, *args)
        w2, r2 = train_detection(train_clips, val_clips, *args)
        for name, p in w1.named_parameters().items():
            assert p.data.tobytes() == w2.named_parameters()[name].data.tobytes()
        assert r1.to_dict() == r2.to_dict()

    def test_threshold_and_stats_stored(self, rng):
        clips = separable_detection_clips(rng, 48)
        weights, report = train_detection(
            clips[:36], clips[36:], GraphSource(mode="distance"),
            small_model(), small_train(epochs_max=1),
        )
        assert weights.meta["threshold"] == report.threshold
        assert len(weights.meta["norm_mean"]) == 6
        assert weights.meta["graph"]["mode"] == "distance"

    def test_correlation_graph_mode_runs(self, rng):
        clips = separable_detection_clips(rng, 32)
        weights, report = train_detection(
            clips[:24], clips[24:], GraphSource(mode="correlation", tau=3),
            small_model(), small_train(epochs_max=1),
        )
        assert weights.config.conv_kind == "diffusion"


class TestTrainClassification:
    def test_four_band_classes_reach_high_weighted_f1(self, rng):
        clips = []
        for i in range(120):
            label = i % 4
            feats = rng.standard_normal((4, 19, 8))
            feats[:, :, label * 2] += 3.0
            clips.append(
                EegClip(
                    features=feats, valid_len=4, label=label,
                    source_ref={"recording": f"r{i % 10}", "start_sec": float(i)},
                )
            )
        train_clips, val_clips = split_by_recording(clips, 0.3, seed=1)
        weights, report = train_classification(
            train_clips, val_clips, GraphSource(mode="distance"),
            small_model(m=8), small_train(task="classify", epochs_max=25, lr_init=1e-2),
        )
        assert report.metrics["val_weighted_f1"] > 0.9

    def test_class_counts_sum_to_clip_count(self, rng):
        clips = separable_detection_clips(rng, 40)
        for i, c in enumerate(clips):
            c.label = i % 3
        weights, report = train_classification(
            clips[:32], clips[32:], GraphSource(mode="distance"),
            small_model(), small_train(task="classify", epochs_max=1),
        )
        assert sum(report.class_counts.values()) == report.n_train

    def test_single_class_rejected(self, rng):
        clips = separable_detection_clips(rng, 20)
        for c in clips:
            c.label = 0
        with pytest.raises(TrainingError, match="fewer than 2"):
            train_classification(
                clips[:16], clips[16:], GraphSource(mode="distance"),
                small_model(), small_train(task="classify", epochs_max=1),
            )

    def test_variable_valid_len_batches(self, rng):
        clips = separable_detection_clips(rng, 40)
        for i, c in enumerate(clips):
            c.label = i % 2
            if i % 3 == 0:
                c.valid_len = 2
                c.features[2:] = 0.0
        weights, report = train_classification(
            clips[:32], clips[32:], GraphSource(mode="distance"),
            small_model(), small_train(task="classify", epochs_max=1),
        )
        assert report.stopped_epoch == 1


class TestPretrain:
    def test_constant_targets_drive_mae_to_zero(self, rng):
        names = tuple(f"e{i}" for i in range(4))
        coords = np.array([[np.cos(a), np.sin(a), 0.1 * i] for i, a in enumerate(np.linspace(0, 3, 4))])
        layout = ElectrodeLayout(names=names, coords=coords)
        clips = []
        for i in range(32):
            feats = rng.standard_normal((3, 4, 5))
            target = np.tile(np.arange(5.0), (2, 4, 1))  # constant, predictable
            clips.append(
                EegClip(
                    features=feats, valid_len=3, target=target,
                    source_ref={"recording": f"r{i % 6}", "start_sec": float(i)},
                )
            )
        weights, report = pretrain_self_supervised(
            clips[:24], clips[24:], GraphSource(mode="distance", kappa=5.0),
            small_model(m=5, n_nodes=4, hidden=3),
            small_train(
                task="pretrain", epochs_max=300, lr_init=4e-2, batch_size=8,
                patience=300, augment=False,
            ),
            layout=layout,
        )
        assert report.metrics["val_mae"] < 1e-3

    def test_teacher_forced_initial_loss_with_zero_weights(self, rng):
        # with all-zero weights every prediction is zero, so the MAE equals
        # the mean absolute normalized target
        clips = separable_detection_clips(rng, 16)
        for c in clips:
            c.target = rng.standard_normal((2, 19, 6))
            c.label = None
        from seizgraph.model import init_weights
        from seizgraph.preprocess import fit_norm_stats

        stats = fit_norm_stats(clips)
        cfg = small_model(task="pretrain", conv_kind="chebyshev", horizon=2)
        weights = init_weights(cfg, seed=0)
        for t in weights.named_parameters().values():
            t.data[:] = 0.0
        from seizgraph.model import decode, encode
        from seizgraph.training import _ClipSet, _OperatorProvider

        data = _ClipSet(clips, stats)
        provider = _OperatorProvider(GraphSource(mode="distance"), ElectrodeLayout.standard_10_20())
        idx = np.arange(len(clips))
        states, _ = encode(data.normalized, data.valid, weights, provider.shared)
        pred = decode(states, weights, provider.shared, 2, teacher=data.norm_targets)
        loss = mae(pred, data.norm_targets)
        assert float(loss.data) == pytest.approx(np.abs(data.norm_targets).mean(), abs=1e-12)

    def test_exported_encoder_loads_into_both_tasks(self, rng):
        clips = separable_detection_clips(rng, 24)
        for c in clips:
            c.target = rng.standard_normal((2, 19, 6))
        weights, _ = pretrain_self_supervised(
            clips[:16], clips[16:], GraphSource(mode="distance"),
            small_model(), small_train(task="pretrain", epochs_max=1, augment=False),
        )
        from seizgraph.model import init_weights, transfer_encoder

        det = init_weights(small_model(task="detect", conv_kind="chebyshev"), seed=4)
        cls = init_weights(
            small_model(task="classify", conv_kind="chebyshev", n_classes=4), seed=4
        )
        assert transfer_encoder(det, weights) == 1
        assert transfer_encoder(cls, weights) == 1
        assert det.encoder[0].theta_r.data.tobytes() == weights.encoder[0].theta_r.data.tobytes()


class TestAuxiliary:
    def test_lambda_zero_reproduces_detection_bitwise(self, rng):
        clips = separable_detection_clips(rng, 48)
        train_clips, val_clips = clips[:36], clips[36:]
        source = GraphSource(mode="distance")
        cfg = small_train(epochs_max=2, lambda_aux=0.0)
        w_det, r_det = train_detection(train_clips, val_clips, source, small_model(), cfg)
        w_aux, r_aux = train_auxiliary(train_clips, val_clips, source, small_model(), cfg)
        det_params = w_det.named_parameters()
        for name, p in w_aux.named_parameters().items():
            assert p.data.tobytes() == det_params[name].data.tobytes(), name
        assert r_aux.train_losses == r_det.train_losses

    def test_joint_loss_is_sum_of_terms(self, rng):
        clips = separable_detection_clips(rng, 32)
        source = GraphSource(mode="distance")
        lam = 2.5
        w, report = train_auxiliary(
            clips[:24], clips[24:], source, small_model(),
            small_train(epochs_max=1, lambda_aux=lam, aux_horizon=2, augment=False),
        )
        assert report.task == "detect-aux"
        assert np.isfinite(report.train_losses[0])

    def test_large_lambda_still_trains_detection(self, rng):
        clips = separable_detection_clips(rng, 64)
        for c in clips:  # constant-predictable tail: second half equals zeros
            c.features[2:] = c.features[1]
        source = GraphSource(mode="distance")
        w, report = train_auxiliary(
            clips[:48], clips[48:], source, small_model(),
            small_train(epochs_max=8, lambda_aux=20.0, aux_horizon=2, lr_init=1e-2, augment=False),
        )
        assert report.metrics["val_auroc"] > 0.8


class TestSplit:
    def test_split_groups_by_recording(self, rng):
        clips = separable_detection_clips(rng, 40)
        train, val = split_by_recording(clips, 0.25, seed=3)
        train_ids = {c.source_ref["recording"] for c in train}
        val_ids = {c.source_ref["recording"] for c in val}
        assert not train_ids & val_ids
        assert len(train) + len(val) == 40
