"""Whole-network tests: resampling/pixel-shuffle laws, shape contracts,
identity at initialization, wiring against a straight-line reference,
parameter accounting, and ablation structure."""

import numpy as np
import pytest

from mlcraist import InvalidArgumentError, MlCraist, ModelConfig, Tape, Tensor, \
    grad_check, param_count, tail_param_delta
from mlcraist import ops
from mlcraist.model import param_breakdown
from mlcraist.ops import pixel_unshuffle_array, resize_array
from mlcraist.training import l1_loss
from mlcraist.wavelet import dwt2_haar


def rand(shape, seed=0):
    return np.random.default_rng(seed).random(shape, dtype=np.float32)


def small_config(**kw):
    base = dict(scale=2, width=8, n_scatb=1, heads=4, window=8)
    base.update(kw)
    return ModelConfig(**base)


class TestBicubicResize:
    def test_constant_preserved(self):
        for out_h, out_w in [(7, 11), (64, 64), (3, 20)]:
            y = ops.bicubic_resize(Tensor(np.full((1, 3, 10, 12), 0.43,
                                                  dtype=np.float32)),
                                   out_h, out_w)
            np.testing.assert_allclose(y.data, 0.43, atol=1e-5)

    def test_identity_size_is_exact(self):
        x = rand((1, 2, 4, 4), 1)
        y = ops.bicubic_resize(Tensor(x), 4, 4)
        np.testing.assert_array_equal(y.data, x)

    def test_smooth_ramp_round_trip(self):
        ramp = np.linspace(0, 1, 16, dtype=np.float32)
        img = np.broadcast_to(ramp, (16, 16)).copy()[None, None]
        up = ops.bicubic_resize(Tensor(img), 32, 32)
        down = ops.bicubic_resize(up, 16, 16)
        assert np.abs(down.data - img).max() < 2e-2

    def test_plain_array_variant_agrees(self):
        x = rand((2, 3, 9, 9), 2)
        a = ops.bicubic_resize(Tensor(x), 18, 13).data
        b = resize_array(x, 18, 13, kind="cubic")
        np.testing.assert_array_equal(a, b)


class TestPixelShuffle:
    def test_shape_law(self):
        y = ops.pixel_shuffle(Tensor(np.zeros((1, 12, 2, 2), np.float32)), 2)
        assert y.shape == (1, 3, 4, 4)

    def test_unshuffle_inverts(self):
        x = rand((2, 12, 3, 5), 3)
        y = ops.pixel_shuffle(Tensor(x), 2)
        np.testing.assert_array_equal(pixel_unshuffle_array(y.data, 2), x)

    def test_index_formula_on_arange(self):
        x = np.arange(12 * 4, dtype=np.float32).reshape(1, 12, 2, 2)
        y = ops.pixel_shuffle(Tensor(x), 2).data
        # out(b, k, s*i+di, s*j+dj) = in(b, k*s^2 + di*s + dj, i, j)
        assert y[0, 0, 0, 1] == x[0, 1, 0, 0]
        for k in range(3):
            for i in range(2):
                for j in range(2):
                    for di in range(2):
                        for dj in range(2):
                            assert y[0, k, 2 * i + di, 2 * j + dj] == \
                                x[0, 4 * k + 2 * di + dj, i, j]

    def test_divisibility_enforced(self):
        with pytest.raises(InvalidArgumentError):
            ops.pixel_shuffle(Tensor(np.zeros((1, 10, 2, 2), np.float32)), 2)


class TestForwardShape:
    @pytest.mark.parametrize("scale", [2, 3, 4])
    @pytest.mark.parametrize("hw", [16, 33, 64])
    def test_output_shape(self, scale, hw):
        net = MlCraist(small_config(scale=scale), seed=0)
        y = net(Tensor(rand((1, 3, hw, hw), hw)))
        assert y.shape == (1, 3, scale * hw, scale * hw)

    def test_non_square_input(self):
        net = MlCraist(small_config(scale=3), seed=0)
        y = net(Tensor(rand((2, 3, 16, 33), 5)))
        assert y.shape == (2, 3, 48, 99)

    def test_too_small_rejected(self):
        net = MlCraist(small_config(), seed=0)
        with pytest.raises(InvalidArgumentError):
            net(Tensor(rand((1, 3, 4, 16), 6)))

    def test_wrong_channel_count_rejected(self):
        net = MlCraist(small_config(), seed=0)
        with pytest.raises(InvalidArgumentError):
            net(Tensor(rand((1, 1, 16, 16), 7)))


class TestIdentityAtInit:
    @pytest.mark.parametrize("hw", [16, 33])
    def test_fresh_model_equals_bicubic(self, hw):
        net = MlCraist(small_config(scale=2, width=16, n_scatb=2), seed=3)
        x = rand((1, 3, hw, hw), hw + 1)
        y = net(Tensor(x))
        ref = ops.bicubic_resize(Tensor(x), 2 * hw, 2 * hw)
        np.testing.assert_array_equal(y.data, ref.data)

    def test_tail_is_the_only_zero_requirement(self):
        # perturb everything except the tail; output must still be bicubic
        net = MlCraist(small_config(), seed=0)
        gen = np.random.default_rng(9)
        for name, p in net.named_params():
            if not name.startswith("tail"):
                p.value.data += gen.normal(0, 0.05, p.shape).astype(np.float32)
        x = rand((1, 3, 16, 16), 10)
        y = net(Tensor(x))
        ref = ops.bicubic_resize(Tensor(x), 32, 32)
        np.testing.assert_array_equal(y.data, ref.data)


def straight_line_forward(net, x_np):
    """The network dataflow written flat, as an independent wiring oracle."""
    cfg = net.config
    x = Tensor(x_np)
    h, w = x_np.shape[2:]
    s = cfg.scale

    f = net.head(x)
    for blk in net.backbone:
        f = blk(f)
    f_d = f

    # first wavelet level on the input image
    bands1 = dwt2_haar(x)
    l1 = net.lhfib1
    high1 = l1.afb(l1.lift_lh(bands1.LH), l1.lift_hl(bands1.HL),
                   l1.lift_hh(bands1.HH))
    low1 = l1.lift_ll(bands1.LL)
    for blk in l1.scatbs:
        low1 = blk(low1)
    f1 = l1.cab(low1, high1)

    # second level on the raw LL band
    bands2 = dwt2_haar(bands1.LL)
    l2 = net.lhfib2
    high2 = l2.afb(l2.lift_lh(bands2.LH), l2.lift_hl(bands2.HL),
                   l2.lift_hh(bands2.HH))
    low2 = l2.lift_ll(bands2.LL)
    for blk in l2.scatbs:
        low2 = blk(low2)
    f2 = l2.cab(low2, high2)

    f1p = net.cab_mid(f1, ops.bicubic_resize(f2, h // 2, w // 2))
    f0 = net.cab_top(f_d, ops.bicubic_resize(f1p, h, w))
    out = ops.pixel_shuffle(net.tail(f0), s)
    return ops.add(out, ops.bicubic_resize(x, s * h, s * w)).data


class TestForwardWiring:
    def test_matches_straight_line_reference(self):
        cfg = ModelConfig(scale=2, width=8, n_scatb=1, heads=4, window=4)
        net = MlCraist(cfg, seed=1)
        # give every zero-initialized projection real weights so the whole
        # graph participates
        gen = np.random.default_rng(2)
        for name, p in net.named_params():
            if not np.any(p.value.data):
                p.value.data = gen.normal(0, 0.1, p.shape).astype(np.float32)
        x = rand((1, 3, 16, 16), 3)
        ref = straight_line_forward(net, x)
        out = net(Tensor(x))
        assert np.abs(out.data - ref).max() < 1e-4

    def test_forward_deterministic(self):
        net = MlCraist(small_config(width=16, n_scatb=2), seed=4)
        x = Tensor(rand((1, 3, 32, 32), 11))
        a = net(x).data
        b = net(x).data
        assert np.array_equal(a, b)

    def test_same_seed_same_weights(self):
        cfg = small_config()
        a = MlCraist(cfg, seed=7)
        b = MlCraist(cfg, seed=7)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            np.testing.assert_array_equal(pa.value.data, pb.value.data)


class TestParamAccounting:
    def test_tail_delta_formulas(self):
        assert tail_param_delta(2, 3, 64) == 8655
        assert tail_param_delta(3, 4, 64) == 12117
        assert tail_param_delta(3, 4, 48) == 9093

    @pytest.mark.parametrize("width,scales", [(64, (2, 3)), (64, (3, 4)),
                                              (48, (3, 4))])
    def test_constructed_models_match_delta(self, width, scales):
        s_a, s_b = scales
        cfg_a = ModelConfig(scale=s_a, width=width, n_scatb=1)
        cfg_b = ModelConfig(scale=s_b, width=width, n_scatb=1)
        delta = param_count(MlCraist(cfg_b, 0)) - param_count(MlCraist(cfg_a, 0))
        assert delta == tail_param_delta(s_a, s_b, width)

    def test_count_is_deterministic(self):
        cfg = small_config()
        assert param_count(MlCraist(cfg, 0)) == param_count(MlCraist(cfg, 1))

    def test_every_param_enumerated_exactly_once(self):
        net = MlCraist(small_config(), seed=0)
        names = [name for name, _ in net.named_params()]
        assert len(names) == len(set(names))
        ids = [id(p) for _, p in net.named_params()]
        assert len(ids) == len(set(ids))

    def test_stacked_blocks_are_enumerated(self):
        net = MlCraist(small_config(n_scatb=2), seed=0)
        names = [name for name, _ in net.named_params()]
        assert any(n.startswith("backbone.0.") for n in names)
        assert any(n.startswith("backbone.1.") for n in names)
        assert any(n.startswith("lhfib1.scatbs.0.") for n in names)
        assert any(n.startswith("lhfib2.scatbs.1.") for n in names)
        # a SCATB carries LCB + attention + ESA weights
        assert any("backbone.0.lcb.pw1.weight" == n for n in names)
        assert any("backbone.0.attn.qkv_pw.weight" == n for n in names)
        assert any("backbone.0.esa.conv1.weight" == n for n in names)


class TestAblations:
    def test_each_removal_strictly_decreases_params(self):
        full = param_count(MlCraist(small_config(), 0))
        variants = {
            "afb_add": small_config(afb_mode="add"),
            "afb_concat": small_config(afb_mode="concat"),
            "dwt_level1": small_config(dwt_levels=1),
            "no_cab": small_config(use_cab=False),
            "no_lhfib": small_config(use_lhfib=False),
        }
        counts = {k: param_count(MlCraist(v, 0)) for k, v in variants.items()}
        for key, count in counts.items():
            assert count < full, key
        assert counts["afb_add"] < counts["afb_concat"] < full

    def test_no_lhfib_leaves_backbone_and_tail_only(self):
        net = MlCraist(small_config(use_lhfib=False), 0)
        tops = set(param_breakdown(net))
        assert tops == {"head", "backbone", "tail"}

    def test_dwt_level1_drops_second_block_and_mid_cab(self):
        net = MlCraist(small_config(dwt_levels=1), 0)
        tops = set(param_breakdown(net))
        assert "lhfib2" not in tops and "cab_mid" not in tops
        assert "lhfib1" in tops and "cab_top" in tops

    def test_no_cab_removes_all_cab_params(self):
        net = MlCraist(small_config(use_cab=False), 0)
        names = [name for name, _ in net.named_params()]
        assert not any(".cab." in n or n.startswith("cab_") for n in names)

    def test_afb_add_removes_fusion_params(self):
        net = MlCraist(small_config(afb_mode="add"), 0)
        names = [name for name, _ in net.named_params()]
        assert not any(".afb." in n or ".fuse_conv." in n for n in names)

    @pytest.mark.parametrize("kw", [dict(afb_mode="add"),
                                    dict(afb_mode="concat"),
                                    dict(dwt_levels=1),
                                    dict(use_cab=False),
                                    dict(use_lhfib=False)])
    def test_ablated_models_still_run(self, kw):
        net = MlCraist(small_config(**kw), 0)
        y = net(Tensor(rand((1, 3, 16, 16), 12)))
        assert y.shape == (1, 3, 32, 32)


class TestModelGradients:
    def test_sampled_params_pass_grad_check(self):
        cfg = ModelConfig(scale=2, width=8, n_scatb=1)
        net = MlCraist(cfg, seed=5)
        gen = np.random.default_rng(6)
        for name, p in net.named_params():
            if not np.any(p.value.data):
                p.value.data = gen.normal(0, 0.05, p.shape).astype(np.float32)
        x = Tensor(rand((1, 3, 16, 16), 13))
        target = Tensor(rand((1, 3, 32, 32), 14))

        def loss_fn(_):
            return l1_loss(net(x), target)

        checked = 0
        for name, p in net.named_params():
            if gen.random() < 0.06:
                err = grad_check(loss_fn, p.value, max_probes=3, rng=gen)
                assert err < 2e-2, f"{name}: {err}"
                checked += 1
        assert checked >= 3

    def test_every_param_receives_gradient(self):
        net = MlCraist(small_config(), seed=0)
        x = Tensor(rand((1, 3, 16, 16), 15))
        target = Tensor(rand((1, 3, 32, 32), 16))
        net.zero_grad()
        with Tape() as tape:
            loss = l1_loss(net(x), target)
        tape.backward(loss)
        for name, p in net.named_params():
            assert p.grad is not None, f"no gradient reached {name}"

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            ModelConfig(scale=5).validate()
        with pytest.raises(InvalidArgumentError):
            ModelConfig(width=10, heads=4).validate()
        with pytest.raises(InvalidArgumentError):
            ModelConfig(afb_mode="bogus").validate()
        with pytest.raises(InvalidArgumentError):
            ModelConfig(dwt_levels=3).validate()
