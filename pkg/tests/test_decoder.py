import pytest
import torch

from hybridseg.config import ModelConfig
from hybridseg.decoder import (Decoder, DecoderBlock, HybridSegModel,
                               SegmentationHead, restore_resolution)
from hybridseg.encoder import FeatureMap, FeaturePyramid
from hybridseg.exceptions import DimensionError

from helpers import tiny_model_config


def fake_pyramid(batch: int, c: int, h: int, w: int) -> FeaturePyramid:
    """Pyramid with the contract shapes, filled with random values."""
    maps = []
    for i in range(4):
        maps.append(FeatureMap(
            torch.randn(batch, c * 2 ** i, h // (4 * 2 ** i), w // (4 * 2 ** i)),
            stage=i + 1))
    return FeaturePyramid(*maps)


class TestDecoderBlock:
    def test_coarsest_level_shape(self):
        block = DecoderBlock(768, 512)
        assert block(torch.randn(1, 768, 11, 11)).shape == (1, 512, 22, 22)

    def test_constant_map_zero_kernel_gives_bias(self):
        block = DecoderBlock(4, 3)
        block.eval()  # fresh BN stats are identity
        with torch.no_grad():
            block.conv.weight.zero_()
            block.conv.bias.fill_(0.7)
            out = block(torch.full((1, 4, 5, 5), 2.5))
        assert torch.allclose(out, torch.full_like(out, 0.7), atol=1e-6)

    def test_negative_bias_clamps_to_zero(self):
        block = DecoderBlock(4, 3)
        block.eval()
        with torch.no_grad():
            block.conv.weight.zero_()
            block.conv.bias.fill_(-0.7)
            out = block(torch.randn(1, 4, 5, 5))
        assert torch.equal(out, torch.zeros_like(out))

    def test_output_non_negative(self):
        block = DecoderBlock(6, 6)
        block.eval()
        with torch.no_grad():
            out = block(torch.randn(2, 6, 7, 7) * 10)
        assert out.min() >= 0


class TestDecodePyramid:
    def test_default_widths_full_scale(self):
        cfg = ModelConfig()
        dec = Decoder(cfg)
        dec.eval()
        with torch.no_grad():
            state = dec(fake_pyramid(1, 96, 352, 352))
        assert state.d1.data.shape == (1, 64, 176, 176)
        assert state.d2.data.shape == (1, 128, 88, 88)
        assert state.d3.data.shape == (1, 256, 44, 44)
        assert state.d4.data.shape == (1, 512, 22, 22)

    def test_toy_shapes(self):
        dec = Decoder(tiny_model_config())
        dec.eval()
        with torch.no_grad():
            state = dec(fake_pyramid(1, 8, 32, 32))
        assert state.d1.data.shape == (1, 8, 16, 16)

    def test_concat_channel_arithmetic(self):
        # hand-traced from widths (64,128,256,512) and encoder (96,192,384,768)
        dec = Decoder(ModelConfig())
        assert dec.block4.conv.in_channels == 768
        assert dec.block3.conv.in_channels == 512 + 384  # 896
        assert dec.block2.conv.in_channels == 256 + 192  # 448
        assert dec.block1.conv.in_channels == 128 + 96   # 224

    def test_broken_chain_raises(self):
        dec = Decoder(tiny_model_config())
        dec.eval()
        p = fake_pyramid(1, 8, 32, 32)
        bad = FeaturePyramid(p.f1, p.f2,
                             FeatureMap(torch.randn(1, 32, 3, 3), stage=3), p.f4)
        with pytest.raises(DimensionError, match="level 3"):
            dec(bad)


class TestSegmentationHead:
    def test_single_class(self):
        head = SegmentationHead(64, 1)
        assert head(torch.randn(1, 64, 176, 176)).shape == (1, 1, 176, 176)

    def test_zero_weights_zero_logits(self):
        head = SegmentationHead(8, 1)
        with torch.no_grad():
            head.conv.weight.zero_()
            head.conv.bias.zero_()
            out = head(torch.randn(2, 8, 4, 4))
        assert torch.equal(out, torch.zeros_like(out))

    def test_multiclass(self):
        head = SegmentationHead(64, 3)
        assert head(torch.randn(1, 64, 176, 176)).shape == (1, 3, 176, 176)


class TestRestoreResolution:
    def test_doubles_to_full(self):
        out = restore_resolution(torch.randn(1, 1, 176, 176), (352, 352))
        assert out.shape == (1, 1, 352, 352)

    def test_constant_preserved(self):
        out = restore_resolution(torch.full((1, 1, 6, 6), 3.25), (12, 12))
        assert torch.allclose(out, torch.full_like(out, 3.25))

    def test_toy(self):
        assert restore_resolution(torch.randn(1, 1, 16, 16), (32, 32)).shape \
            == (1, 1, 32, 32)

    def test_extrema_bounded(self):
        y = torch.randn(2, 1, 9, 9)
        out = restore_resolution(y, (36, 36))
        assert out.max() <= y.max() + 1e-6
        assert out.min() >= y.min() - 1e-6


class TestModelForward:
    def test_toy_batch_shape(self):
        model = HybridSegModel(tiny_model_config(input_size=(64, 64)))
        model.eval()
        with torch.no_grad():
            out = model(torch.randn(4, 3, 64, 64))
        assert out.shape == (4, 1, 64, 64)

    def test_multiclass_output(self):
        model = HybridSegModel(tiny_model_config(num_classes=3))
        model.eval()
        with torch.no_grad():
            out = model(torch.randn(1, 3, 32, 32))
        assert out.shape == (1, 3, 32, 32)

    def test_eval_determinism_bit_identical(self):
        model = HybridSegModel(tiny_model_config())
        model.eval()
        x = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(model(x), model(x))

    def test_propagates_dimension_errors(self):
        model = HybridSegModel(tiny_model_config())
        with pytest.raises(DimensionError):
            model(torch.randn(1, 3, 31, 32))
