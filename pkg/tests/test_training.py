"""Loss, Adam, schedule, and the fit loop."""

import math

import numpy as np
import pytest

from arcflux.data import GenConfig, generate, split, windows_to_arrays
from arcflux.errors import ConfigError, NumericalError
from arcflux.fas import amplify_batch
from arcflux.model import ModelConfig, init_params, load_checkpoint
from arcflux.training import (
    TrainConfig,
    adam_step,
    backward,
    clip_grads_,
    clone_params,
    cross_entropy,
    evaluate,
    fit,
    grad_global_norm,
    history_table,
    init_state,
    lr_at,
)

TINY = ModelConfig(d_model=4, n_blocks=1, n_state=2, expand=2, conv_width=4, k_fas=4)


def tiny_batch(seed=0, n=6):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, TINY.seq_len))
    y = rng.integers(0, 2, size=n)
    return x, y


def task_arrays(k=16, n_per_class=64, window_len=256, seed=0, **gen_kwargs):
    windows = generate(GenConfig(n_per_class=n_per_class, window_len=window_len,
                                 seed=seed, **gen_kwargs))
    ds = split(windows, ratio_train=0.7, seed=seed)
    out = []
    for part in (ds.train, ds.val, ds.test):
        xw, y = windows_to_arrays(part)
        out.append((amplify_batch(xw, k), y))
    return out


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 100
        assert cfg.batch_size == 128
        assert cfg.lr == 1e-4
        assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)
        assert cfg.lr_schedule == "cosine-decay"
        assert cfg.grad_clip == 1.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(lr=-1e-4)
        with pytest.raises(ConfigError):
            TrainConfig(lr_schedule="linear")
        with pytest.raises(ConfigError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ConfigError):
            TrainConfig(grad_clip=0.0)


class TestCrossEntropy:
    def test_equal_logits_give_ln2(self):
        for z in (0.0, 3.5, -200.0):
            assert cross_entropy((z, z), 0) == pytest.approx(math.log(2.0), rel=1e-15)
            assert cross_entropy((z, z), 1) == pytest.approx(math.log(2.0), rel=1e-15)

    def test_wide_margin_correct_label(self):
        # exact value of log(1 + exp(-20)); a naive softmax would round to 0
        assert cross_entropy((10.0, -10.0), 0) == pytest.approx(2.061153622438558e-09, rel=1e-12)

    def test_wide_margin_wrong_label(self):
        assert cross_entropy((10.0, -10.0), 1) == pytest.approx(20.0, rel=1e-9)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            cross_entropy((1.0, 2.0, 3.0), 0)
        with pytest.raises(ValueError):
            cross_entropy((1.0, 2.0), 2)


class TestBackward:
    def test_grads_congruent_with_named_tensors(self):
        params = init_params(TINY, seed=0)
        x, y = tiny_batch()
        loss, grads = backward(params, x, y)
        names = [name for name, _ in params.named_tensors()]
        assert sorted(grads) == sorted(names)
        for name, t in params.named_tensors():
            assert grads[name].shape == t.data.shape
        assert math.isfinite(loss)

    def test_loss_matches_scalar_cross_entropy(self):
        from arcflux.model import model_forward

        params = init_params(TINY, seed=1)
        x, y = tiny_batch(seed=1)
        loss, _ = backward(params, x, y)
        per_sample = [cross_entropy(model_forward(params, xi), yi) for xi, yi in zip(x, y)]
        assert loss == pytest.approx(np.mean(per_sample), rel=1e-12)

    def test_duplicated_batch_same_mean(self):
        params = init_params(TINY, seed=2)
        x, y = tiny_batch(seed=2, n=3)
        loss1, grads1 = backward(params, x, y)
        grads1 = {k: v.copy() for k, v in grads1.items()}
        loss2, grads2 = backward(params, np.concatenate([x, x]), np.concatenate([y, y]))
        assert loss2 == pytest.approx(loss1, rel=1e-12)
        for k in grads1:
            np.testing.assert_allclose(grads2[k], grads1[k], rtol=1e-9, atol=1e-15)

    @pytest.mark.parametrize(
        "name", ["lift_w", "blocks.0.w_delta", "blocks.0.a_log", "blocks.0.conv_kernel", "head.w"]
    )
    def test_finite_difference(self, name):
        params = init_params(TINY, seed=3)
        x, y = tiny_batch(seed=3, n=4)
        _, grads = backward(params, x, y)
        tensor = dict(params.named_tensors())[name]
        flat = tensor.data.reshape(-1)
        idx = flat.size // 2
        analytic = grads[name].reshape(-1)[idx]
        h = 1e-5
        keep = flat[idx]
        flat[idx] = keep + h
        up = backward(params, x, y)[0]
        flat[idx] = keep - h
        down = backward(params, x, y)[0]
        flat[idx] = keep
        fd = (up - down) / (2 * h)
        assert analytic == pytest.approx(fd, rel=2e-4, abs=1e-9)

    def test_label_shape_checked(self):
        params = init_params(TINY, seed=0)
        x, _ = tiny_batch()
        with pytest.raises(ConfigError):
            backward(params, x, [0, 1])


class TestClip:
    def test_large_norm_rescaled_to_unit(self):
        grads = {"a": np.full(4, 3.0), "b": np.full(8, 2.0)}
        norm = clip_grads_(grads, 1.0)
        assert norm == pytest.approx(math.sqrt(36 + 32))
        assert grad_global_norm(grads) == pytest.approx(1.0, rel=1e-12)
        # direction preserved
        assert grads["a"][0] / grads["b"][0] == pytest.approx(1.5, rel=1e-12)

    def test_small_norm_untouched(self):
        grads = {"a": np.array([0.3, 0.4])}
        norm = clip_grads_(grads, 1.0)
        assert norm == pytest.approx(0.5)
        np.testing.assert_array_equal(grads["a"], [0.3, 0.4])


class TestAdam:
    def test_unit_gradient_first_step_moves_by_lr(self):
        params = init_params(TINY, seed=0)
        before = {name: t.data.copy() for name, t in params.named_tensors()}
        cfg = TrainConfig()
        state = init_state(params, cfg)
        grads = {name: np.ones_like(t.data) for name, t in params.named_tensors()}
        adam_step(state, grads, lr=1e-4, cfg=cfg)
        assert state.step == 1
        for name, t in params.named_tensors():
            np.testing.assert_allclose(before[name] - t.data, 1e-4, rtol=1e-6)

    def test_matches_reference_over_steps(self):
        # independent scalar reference: the textbook update sequence
        cfg = TrainConfig(beta1=0.9, beta2=0.999, eps=1e-8)
        g_seq = [0.5, -1.25, 2.0, 0.0, 3.5]
        m = v = 0.0
        theta_ref = 1.0
        for t, g in enumerate(g_seq, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9**t)
            vh = v / (1 - 0.999**t)
            theta_ref -= 0.01 * mh / (math.sqrt(vh) + 1e-8)

        params = init_params(TINY, seed=0)
        tensor = dict(params.named_tensors())["lift_b"]
        tensor.data[:] = 1.0
        state = init_state(params, cfg)
        for g in g_seq:
            grads = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
            grads["lift_b"][:] = g
            adam_step(state, grads, lr=0.01, cfg=cfg)
        np.testing.assert_allclose(tensor.data, theta_ref, rtol=1e-12)

    def test_missing_grad_rejected(self):
        params = init_params(TINY, seed=0)
        cfg = TrainConfig()
        state = init_state(params, cfg)
        with pytest.raises(ConfigError):
            adam_step(state, {}, lr=1e-4, cfg=cfg)


class TestSchedule:
    def test_cosine_endpoints_and_midpoint(self):
        cfg = TrainConfig(lr=1e-4, lr_min=1e-6)
        assert lr_at(cfg, 0, 101) == pytest.approx(1e-4, rel=1e-12)
        assert lr_at(cfg, 100, 101) == pytest.approx(1e-6, rel=1e-12)
        assert lr_at(cfg, 50, 101) == pytest.approx((1e-4 + 1e-6) / 2, rel=1e-12)

    def test_cosine_monotone_decay(self):
        cfg = TrainConfig()
        values = [lr_at(cfg, s, 50) for s in range(50)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_constant(self):
        cfg = TrainConfig(lr_schedule="constant", lr=3e-3)
        assert {lr_at(cfg, s, 100) for s in range(100)} == {3e-3}

    def test_out_of_range_steps_clamped(self):
        cfg = TrainConfig()
        assert lr_at(cfg, 500, 100) == pytest.approx(cfg.lr_min, rel=1e-9)
        assert lr_at(cfg, -3, 100) == pytest.approx(cfg.lr, rel=1e-12)


class TestFit:
    def small_fit(self, cfg, seed=0, checkpoint_path=None):
        (xt, yt), (xv, yv), _ = task_arrays(k=8, n_per_class=24, window_len=64, seed=seed)
        model_cfg = ModelConfig(d_model=8, n_blocks=1, n_state=4, expand=2, k_fas=8)
        params = init_params(model_cfg, seed=seed)
        state = fit(params, xt, yt, xv, yv, cfg, checkpoint_path=checkpoint_path)
        return params, state

    def test_zero_lr_leaves_params_unchanged(self):
        (xt, yt), (xv, yv), _ = task_arrays(k=8, n_per_class=24, window_len=64)
        model_cfg = ModelConfig(d_model=8, n_blocks=1, n_state=4, expand=2, k_fas=8)
        params = init_params(model_cfg, seed=0)
        before = {name: t.data.copy() for name, t in params.named_tensors()}
        fit(params, xt, yt, xv, yv, TrainConfig(epochs=2, batch_size=16, lr=0.0, lr_min=0.0))
        for name, t in params.named_tensors():
            np.testing.assert_array_equal(t.data, before[name])

    def test_deterministic_replay(self):
        cfg = TrainConfig(epochs=3, batch_size=16, lr=1e-3)
        p1, s1 = self.small_fit(cfg)
        p2, s2 = self.small_fit(cfg)
        for r1, r2 in zip(s1.history, s2.history):
            assert (r1.train_loss, r1.val_loss, r1.val_acc, r1.lr) == (
                r2.train_loss,
                r2.val_loss,
                r2.val_acc,
                r2.lr,
            )
        for (n1, t1), (n2, t2) in zip(p1.named_tensors(), p2.named_tensors()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_history_shape_and_fields(self):
        cfg = TrainConfig(epochs=3, batch_size=16, lr=1e-3)
        _, state = self.small_fit(cfg)
        assert [r.epoch for r in state.history] == [1, 2, 3]
        for r in state.history:
            assert math.isfinite(r.train_loss) and math.isfinite(r.val_loss)
            assert 0.0 <= r.val_acc <= 1.0
            assert r.wall_ms > 0
        # cosine schedule: recorded epoch lr decreases
        lrs = [r.lr for r in state.history]
        assert lrs[0] > lrs[-1]

    def test_best_snapshot_tracks_val_accuracy(self):
        cfg = TrainConfig(epochs=4, batch_size=16, lr=1e-3)
        _, state = self.small_fit(cfg)
        best_acc = max(r.val_acc for r in state.history)
        assert state.best_val_acc == best_acc
        contenders = [r for r in state.history if r.val_acc == best_acc]
        assert state.best_val_loss == min(r.val_loss for r in contenders)
        assert state.best_params is not None

    def test_checkpoint_written_and_loadable(self, tmp_path):
        path = tmp_path / "best.ckpt"
        cfg = TrainConfig(epochs=2, batch_size=16, lr=1e-3)
        _, state = self.small_fit(cfg, checkpoint_path=path)
        reloaded = load_checkpoint(path)
        for (n1, t1), (n2, t2) in zip(
            state.best_params.named_tensors(), reloaded.named_tensors()
        ):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_non_finite_loss_raises_with_step(self):
        # a diverged parameter poisons the logits; fit must stop and name the step
        model_cfg = ModelConfig(d_model=4, n_blocks=1, n_state=2, expand=2, k_fas=4)
        params = init_params(model_cfg, seed=0)
        params.lift_w.data[:] = np.nan
        x = np.zeros((4, model_cfg.seq_len))
        y = np.array([0, 1, 0, 1])
        with pytest.raises(NumericalError, match="step 0"):
            fit(params, x, y, x, y, TrainConfig(epochs=1, batch_size=4, lr=1e-3))

    def test_empty_training_set_rejected(self):
        model_cfg = ModelConfig(d_model=4, n_blocks=1, n_state=2, expand=2, k_fas=4)
        params = init_params(model_cfg, seed=0)
        empty = np.zeros((0, model_cfg.seq_len))
        with pytest.raises(ConfigError):
            fit(params, empty, [], empty, [], TrainConfig(epochs=1))

    def test_val_loss_improves_by_epoch_10(self):
        (xt, yt), (xv, yv), _ = task_arrays(k=16, n_per_class=64, window_len=256)
        model_cfg = ModelConfig(d_model=8, n_blocks=2, n_state=4, expand=2, k_fas=16)
        params = init_params(model_cfg, seed=0)
        cfg = TrainConfig(epochs=10, batch_size=32, lr=3e-3, seed=0)
        state = fit(params, xt, yt, xv, yv, cfg)
        assert state.history[9].val_loss < state.history[0].val_loss

    def test_converges_on_separable_task(self):
        # long enough to cross the early common-mode plateau at this scale;
        # generous burst physics keep the task easy for a miniature model
        (xt, yt), (xv, yv), (xs, ys) = task_arrays(
            k=16, n_per_class=64, window_len=256,
            gain_jitter=0.0, burst_rate=0.06, burst_scale=0.5,
        )
        model_cfg = ModelConfig(d_model=8, n_blocks=2, n_state=4, expand=2, k_fas=16)
        params = init_params(model_cfg, seed=0)
        cfg = TrainConfig(epochs=45, batch_size=32, lr=3e-3, lr_schedule="constant", seed=0)
        state = fit(params, xt, yt, xv, yv, cfg)
        assert state.best_val_acc >= 0.9
        _, test_acc = evaluate(state.best_params, xs, ys)
        assert test_acc >= 0.9


class TestEvaluate:
    def test_matches_manual_computation(self):
        from arcflux.model import model_forward

        params = init_params(TINY, seed=5)
        x, y = tiny_batch(seed=5, n=5)
        loss, acc = evaluate(params, x, y, batch_size=2)
        losses = [cross_entropy(model_forward(params, xi), yi) for xi, yi in zip(x, y)]
        preds = [int(np.argmax(model_forward(params, xi))) for xi in x]
        assert loss == pytest.approx(np.mean(losses), rel=1e-12)
        assert acc == pytest.approx(np.mean(np.array(preds) == y))

    def test_empty_rejected(self):
        params = init_params(TINY, seed=0)
        with pytest.raises(ConfigError):
            evaluate(params, np.zeros((0, TINY.seq_len)), [])


class TestHistoryTable:
    def test_format(self):
        from arcflux.training import EpochRecord

        table = history_table(
            [EpochRecord(1, 0.5, 0.6, 0.75, 1e-4, 12.5)]
        )
        lines = table.strip().split("\n")
        assert lines[0].split("\t") == ["epoch", "train_loss", "val_loss", "val_acc", "lr", "wall_ms"]
        cells = lines[1].split("\t")
        assert cells[0] == "1"
        assert float(cells[3]) == 0.75
