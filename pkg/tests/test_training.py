"""Training-loop pieces: L1 loss, Adam against a scalar oracle, the decay
schedule, dihedral augmentation group, degradation, and a short training
run on synthetic data."""

import numpy as np
import pytest

from mlcraist import MlCraist, ModelConfig, Param, Tensor, l1_loss
from mlcraist.data import (augment_array, degrade, inverse_code, sample_pair,
                           synth_image)
from mlcraist.engine import InvalidArgumentError
from mlcraist.training import (ConfigError, TrainConfig, TrainingDivergedError,
                               adam_step, lr_at, psnr_y_against_bicubic, train)
from oracles import adam_scalar


def rand(shape, seed=0):
    return np.random.default_rng(seed).random(shape, dtype=np.float32)


class TestL1Loss:
    def test_identical_is_zero(self):
        x = Tensor(rand((2, 3, 4, 4), 1))
        assert l1_loss(x, Tensor(x.data.copy())).item() == 0.0

    def test_constant_offset(self):
        a = rand((1, 3, 5, 5), 2)
        loss = l1_loss(Tensor(a + 0.5), Tensor(a))
        assert loss.item() == pytest.approx(0.5, abs=1e-6)

    def test_matches_scalar_loop(self):
        a = rand((2, 2, 3, 3), 3)
        b = rand((2, 2, 3, 3), 4)
        expected = float(np.mean([abs(float(x) - float(y))
                                  for x, y in zip(a.ravel(), b.ravel())]))
        assert l1_loss(Tensor(a), Tensor(b)).item() == pytest.approx(expected,
                                                                     abs=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            l1_loss(Tensor(rand((1, 3, 4, 4))), Tensor(rand((1, 3, 5, 5))))


class TestAdam:
    def test_zero_grad_fresh_moments_no_change(self):
        p = Param(rand((3, 3), 1), name="w")
        p.value.grad = np.zeros((3, 3), dtype=np.float32)
        before = p.value.data.copy()
        adam_step([p], lr=1e-2)
        np.testing.assert_array_equal(p.value.data, before)

    def test_missing_grad_skipped(self):
        p = Param(rand((2, 2), 2), name="w")
        before = p.value.data.copy()
        adam_step([p], lr=1e-2)
        np.testing.assert_array_equal(p.value.data, before)
        assert p.step == 0

    def test_first_step_magnitude(self):
        p = Param(np.array([1.0], dtype=np.float32), name="w")
        p.value.grad = np.array([1.0], dtype=np.float32)
        adam_step([p], lr=1e-4)
        assert p.value.data[0] == pytest.approx(1.0 - 1e-4, abs=1e-8)

    def test_two_steps_match_scalar_oracle(self):
        grads = [0.7, -0.3]
        p = Param(np.array([0.5], dtype=np.float32), name="w")
        for g in grads:
            p.value.grad = np.array([g], dtype=np.float32)
            adam_step([p], lr=1e-3)
        expected = adam_scalar(0.5, grads, lr=1e-3)[-1]
        assert abs(float(p.value.data[0]) - expected) < 1e-7

    def test_moment_state_tracks_steps(self):
        p = Param(rand((4,), 3), name="w")
        for _ in range(3):
            p.value.grad = rand((4,), 4)
            adam_step([p], lr=1e-3)
        assert p.step == 3
        assert p.m.shape == p.v.shape == p.value.data.shape


class TestLrSchedule:
    def test_paper_scale_values(self):
        cfg = TrainConfig()  # 1M iterations, period 200k
        assert lr_at(0, cfg) == pytest.approx(1e-4)
        assert lr_at(200_000, cfg) == pytest.approx(5e-5)
        assert lr_at(999_999, cfg) == pytest.approx(1e-4 * 0.5 ** 4)

    def test_desk_scale_keeps_five_phases(self):
        cfg = TrainConfig(total_iters=2000)
        assert cfg.halving_period == 400
        assert lr_at(399, cfg) == pytest.approx(1e-4)
        assert lr_at(400, cfg) == pytest.approx(5e-5)
        assert lr_at(1999, cfg) == pytest.approx(1e-4 * 0.5 ** 4)

    def test_explicit_period_wins(self):
        cfg = TrainConfig(total_iters=2000, lr_halving_period=1000)
        assert lr_at(999, cfg) == pytest.approx(1e-4)
        assert lr_at(1000, cfg) == pytest.approx(5e-5)


class TestAugmentation:
    def test_code_zero_is_identity(self):
        x = rand((3, 6, 6), 1)
        np.testing.assert_array_equal(augment_array(x, 0), x)

    def test_double_180_is_identity(self):
        x = rand((3, 6, 6), 2)
        np.testing.assert_array_equal(augment_array(augment_array(x, 2), 2), x)

    def test_rotation_index_rule(self):
        # (i, j) -> (j, h - 1 - i) on a marked 2x2 patch
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[None]
        r = augment_array(x, 1)
        assert r[0, 0, 1] == 1.0  # (0,0) -> (0,1)
        assert r[0, 1, 1] == 2.0  # (0,1) -> (1,1)
        assert r[0, 0, 0] == 3.0  # (1,0) -> (0,0)
        assert r[0, 1, 0] == 4.0  # (1,1) -> (1,0)

    def test_inverse_restores_original(self):
        x = rand((3, 4, 4), 3)
        for code in range(8):
            y = augment_array(augment_array(x, code), inverse_code(code))
            np.testing.assert_array_equal(y, x)

    def test_group_closure(self):
        # composing any two dihedral codes equals some single code
        x = rand((1, 4, 4), 4)
        table = {code: augment_array(x, code) for code in range(8)}
        for c1 in range(8):
            for c2 in range(8):
                composed = augment_array(augment_array(x, c1), c2)
                matches = [code for code, img in table.items()
                           if np.array_equal(img, composed)]
                assert len(matches) == 1

    def test_bad_code_rejected(self):
        with pytest.raises(InvalidArgumentError):
            augment_array(rand((3, 4, 4)), 8)


class TestDegrade:
    def test_constant_stays_constant(self):
        out = degrade(np.full((3, 12, 12), 0.6, dtype=np.float32), 2)
        np.testing.assert_allclose(out, 0.6, atol=1e-5)

    def test_output_dims(self):
        out = degrade(rand((3, 13, 17), 5), 3)
        assert out.shape == (3, 4, 5)

    def test_round_trip_on_smooth_image(self):
        from mlcraist.ops import resize_array
        yy, xx = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32),
                             indexing="ij")
        img = np.stack([0.3 + 0.4 * xx, 0.5 + 0.2 * yy,
                        0.4 + 0.2 * np.sin(2 * np.pi * xx)]).astype(np.float32)
        up = resize_array(img, 64, 64, kind="cubic")
        back = degrade(np.clip(up, 0, 1).astype(np.float32), 2)
        assert np.abs(back - img).max() < 3e-2

    def test_values_clamped(self):
        out = degrade(rand((3, 16, 16), 7), 2)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestSamplePair:
    def test_pair_geometry_and_range(self):
        img = synth_image(48, np.random.default_rng(8))
        pair = sample_pair(img, patch=8, scale=2, rng=np.random.default_rng(9))
        assert pair.lr.shape == (3, 8, 8)
        assert pair.hr.shape == (3, 16, 16)
        assert 0.0 <= pair.lr.min() and pair.lr.max() <= 1.0

    def test_too_small_image_rejected(self):
        with pytest.raises(InvalidArgumentError):
            sample_pair(rand((3, 10, 10), 1), patch=8, scale=2,
                        rng=np.random.default_rng(0))


@pytest.fixture(scope="module")
def toy_images():
    gen = np.random.default_rng(123)
    return [synth_image(80, gen) for _ in range(8)]


class TestTrainLoop:
    def test_loss_decreases_over_200_iterations(self, toy_images):
        cfg = TrainConfig(batch_size=4, total_iters=200, patch_size=32, seed=0)
        model = MlCraist(ModelConfig(scale=2, width=16, n_scatb=2), seed=0)
        history = train(model, toy_images, cfg)
        losses = [h[1] for h in history]
        assert np.mean(losses[-20:]) < np.mean(losses[:20])

    def test_identical_seeds_identical_logs(self, toy_images, tmp_path):
        cfg = TrainConfig(batch_size=2, total_iters=20, patch_size=16, seed=7)
        logs = []
        for run in range(2):
            model = MlCraist(ModelConfig(scale=2, width=8, n_scatb=1), seed=7)
            path = tmp_path / f"run{run}.log"
            train(model, toy_images, cfg, log_path=path)
            logs.append(path.read_bytes())
        assert logs[0] == logs[1]

    def test_logged_lr_follows_schedule(self, toy_images):
        cfg = TrainConfig(batch_size=2, total_iters=10, patch_size=16,
                          lr_halving_period=4, seed=1)
        model = MlCraist(ModelConfig(scale=2, width=8, n_scatb=1), seed=1)
        history = train(model, toy_images, cfg)
        for it, _, lr in history:
            assert lr == pytest.approx(lr_at(it, cfg))

    def test_empty_dataset_is_config_error(self, tmp_path):
        cfg = TrainConfig(batch_size=2, total_iters=5, patch_size=16)
        model = MlCraist(ModelConfig(scale=2, width=8, n_scatb=1), seed=0)
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(ConfigError):
            train(model, empty, cfg)

    def test_undersized_images_are_config_error(self, toy_images):
        cfg = TrainConfig(batch_size=2, total_iters=5, patch_size=64)
        model = MlCraist(ModelConfig(scale=2, width=8, n_scatb=1), seed=0)
        with pytest.raises(ConfigError):
            train(model, toy_images, cfg)  # images are 80px, patches need 128

    def test_nonfinite_loss_names_offender(self, toy_images):
        cfg = TrainConfig(batch_size=2, total_iters=3, patch_size=16, seed=2)
        model = MlCraist(ModelConfig(scale=2, width=8, n_scatb=1), seed=2)
        model.head.weight.value.data[0, 0, 0, 0] = np.nan
        with pytest.raises(TrainingDivergedError) as exc:
            train(model, toy_images, cfg)
        assert "head.weight" in str(exc.value)

    def test_psnr_helper_reports_both_sides(self, toy_images):
        model = MlCraist(ModelConfig(scale=2, width=8, n_scatb=1), seed=3)
        ours, bicubic = psnr_y_against_bicubic(model, toy_images[:2])
        # fresh model IS bicubic, so the two scores coincide
        assert ours == pytest.approx(bicubic, abs=1e-9)
