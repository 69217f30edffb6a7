"""Residual/encoder/decoder blocks and the parameter-count oracle."""

import numpy as np
import pytest

from angiosynth.blocks import (
    DecoderBlock,
    EncoderBlock,
    ResidualBlock,
    ResidualBlockConfig,
    count_parameters,
)
from angiosynth.errors import ConfigError, InputError
from conftest import numerical_gradient, rel_error


class TestParameterCounts:
    def test_published_totals_exact(self):
        proposed = count_parameters(ResidualBlockConfig(32, 3, "proposed"))
        original = count_parameters(ResidualBlockConfig(32, 3, "original"))
        assert proposed.total == 10_784
        assert original.total == 18_688

    def test_component_breakdown(self):
        c = count_parameters(ResidualBlockConfig(32, 3, "proposed"))
        # plain conv 9216, separable 288 + 1024, two norms at 4/channel
        assert c.convolution_weights == 9216 + 1312
        assert c.normalization_params == 256

    def test_single_channel_hand_count(self):
        c = count_parameters(ResidualBlockConfig(1, 3, "proposed"))
        assert c.total == 9 + (9 + 1) + 8 == 27

    @pytest.mark.parametrize("variant", ["proposed", "original"])
    @pytest.mark.parametrize("channels,kernel", [(1, 3), (4, 3), (32, 3),
                                                 (8, 5), (3, 1)])
    def test_oracle_matches_instantiated_block(self, variant, channels, kernel):
        cfg = ResidualBlockConfig(channels, kernel, variant)
        block = ResidualBlock("b", cfg)
        assert count_parameters(cfg).total == block.parameter_total()

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            ResidualBlockConfig(0, 3)
        with pytest.raises(ConfigError):
            ResidualBlockConfig(4, 4)   # even kernel
        with pytest.raises(ConfigError):
            ResidualBlockConfig(4, 3, "fancy")
        with pytest.raises(ConfigError):
            ResidualBlockConfig(4, 3, padding_mode="wrap")


class TestResidualForward:
    @pytest.mark.parametrize("variant", ["proposed", "original"])
    def test_zero_weights_identity(self, rng, variant):
        cfg = ResidualBlockConfig(4, 3, variant)
        block = ResidualBlock("b", cfg, rng, np.float64)
        for p in block.parameters():
            if not p.name.endswith((".gamma", ".beta")):
                p.data[...] = 0.0
        x = rng.normal(0, 1, (2, 8, 8, 4))
        for training in (True, False):
            assert np.array_equal(block.forward(x, training), x)

    @pytest.mark.parametrize("channels", [1, 4, 32])
    @pytest.mark.parametrize("spatial", [8, 16, 64])
    def test_shape_preserved(self, rng, channels, spatial):
        block = ResidualBlock("b", ResidualBlockConfig(channels, 3), rng)
        x = rng.normal(0, 1, (1, spatial, spatial, channels)).astype(np.float32)
        assert block.forward(x).shape == x.shape

    def test_deterministic(self, rng):
        block = ResidualBlock("b", ResidualBlockConfig(4, 3), rng, np.float64)
        x = rng.normal(0, 1, (1, 8, 8, 4))
        assert np.array_equal(block.forward(x), block.forward(x))

    def test_channel_mismatch(self, rng):
        block = ResidualBlock("b", ResidualBlockConfig(4, 3), rng)
        with pytest.raises(ConfigError):
            block.forward(rng.normal(0, 1, (1, 8, 8, 3)).astype(np.float32))

    def test_spatial_smaller_than_kernel(self, rng):
        block = ResidualBlock("b", ResidualBlockConfig(4, 5), rng)
        with pytest.raises(InputError):
            block.forward(rng.normal(0, 1, (1, 4, 4, 4)).astype(np.float32))

    def test_scalar_hand_trace(self):
        """C=1, K=1, inference mode, single pixel: trace the block as plain
        scalar arithmetic."""
        cfg = ResidualBlockConfig(1, 1, "proposed", activation_slope=0.2)
        block = ResidualBlock("b", cfg, dtype=np.float64)
        conv_w, bn1, _, _, sep, bn2, _ = (
            block.body.layers[1], block.body.layers[2], block.body.layers[3],
            block.body.layers[4], block.body.layers[5], block.body.layers[6],
            block.body.layers[7],
        )
        conv_w.w.data[...] = -0.7
        bn1.gamma.data[...] = 1.3
        bn1.beta.data[...] = 0.2
        bn1.running_mean.data[...] = 0.1
        bn1.running_var.data[...] = 0.9
        sep.dw.data[...] = 0.5
        sep.pw.data[...] = -2.0
        bn2.gamma.data[...] = 0.8
        bn2.beta.data[...] = -0.05
        bn2.running_mean.data[...] = -0.2
        bn2.running_var.data[...] = 1.5
        x = 0.6

        def lrelu(v):
            return v if v > 0 else 0.2 * v

        t = -0.7 * x
        t = 1.3 * (t - 0.1) / np.sqrt(0.9 + 1e-5) + 0.2
        t = lrelu(t)
        t = -2.0 * (0.5 * t)
        t = 0.8 * (t - (-0.2)) / np.sqrt(1.5 + 1e-5) + (-0.05)
        t = lrelu(t)
        expected = t + x

        out = block.forward(np.full((1, 1, 1, 1), x), training=False)
        assert out[0, 0, 0, 0] == pytest.approx(expected, rel=1e-12)

    def test_gradients_every_weight(self, rng):
        """Analytic vs central finite differences, C=4, 8x8, float64."""
        block = ResidualBlock("b", ResidualBlockConfig(4, 3), rng, np.float64)
        x = rng.normal(0, 1, (1, 8, 8, 4))
        proj = rng.normal(0, 1, x.shape)

        def loss():
            return float(np.sum(block.forward(x, training=True) * proj))

        for p in block.parameters():
            p.zero_grad()
        block.forward(x, training=True)
        block.backward(proj.copy(), accum=True)
        worst = 0.0
        for p in block.parameters():
            num = numerical_gradient(loss, p.data)
            worst = max(worst, rel_error(p.grad, num))
        assert worst <= 1e-4


class TestEncoderDecoder:
    @pytest.mark.parametrize("in_hw,cin,cout,k,stride,out_hw", [
        (256, 3, 64, 7, 1, 256),
        (256, 64, 128, 3, 2, 128),
        (512, 32, 64, 3, 2, 256),
    ])
    def test_encoder_shapes(self, rng, in_hw, cin, cout, k, stride, out_hw):
        block = EncoderBlock("e", cin, cout, k, stride, rng=rng)
        x = rng.normal(0, 0.5, (1, in_hw, in_hw, cin)).astype(np.float32)
        assert block.forward(x).shape == (1, out_hw, out_hw, cout)

    def test_encoder_odd_dim_stride2(self, rng):
        block = EncoderBlock("e", 2, 4, 3, 2, rng=rng)
        with pytest.raises(InputError):
            block.forward(rng.normal(0, 1, (1, 9, 9, 2)).astype(np.float32))

    def test_encoder_invalid_stride(self, rng):
        with pytest.raises(ConfigError):
            EncoderBlock("e", 2, 4, 3, 3, rng=rng)

    @pytest.mark.parametrize("in_hw,cin,cout,out_hw", [
        (64, 512, 256, 128),
        (128, 256, 128, 256),
    ])
    def test_decoder_shapes(self, rng, in_hw, cin, cout, out_hw):
        block = DecoderBlock("d", cin, cout, rng=rng)
        x = rng.normal(0, 0.5, (1, in_hw, in_hw, cin)).astype(np.float32)
        assert block.forward(x).shape == (1, out_hw, out_hw, cout)

    def test_decoder_then_encoder_roundtrip_dims(self, rng):
        dec = DecoderBlock("d", 8, 4, rng=rng)
        enc = EncoderBlock("e", 4, 8, 3, 2, rng=rng)
        x = rng.normal(0, 1, (1, 16, 16, 8)).astype(np.float32)
        assert enc.forward(dec.forward(x)).shape[1:3] == (16, 16)
