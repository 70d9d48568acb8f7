import pytest

from watermamba.census import (
    ABLATIONS, REFERENCE_MACS_256, REFERENCE_PARAMS, count_breakdown, count_flops, count_params
)
from watermamba.config import ModelConfig
from watermamba.network import WaterMamba


def _numel(config: ModelConfig) -> int:
    return sum(param.numel() for param in WaterMamba(config).parameters())


@pytest.mark.parametrize("overrides", [
    {},
    { "BASE_WIDTH": 4, "STATE_SIZE": 4, "BOTTLENECK_BLOCKS": 1 },
    { "USE_SOSS": False },
    { "USE_CCOSS": False },
    { "USE_MSFFN": False },
    { "MSFFN_FUSE": "concat_proj", "SKIP_FUSION": "add" },
    { "BLOCK_TYPE": "resblock" },
    { "USE_SOSS": False, "SOSS_REPLACEMENT": "conv" },
    { "USE_CCOSS": False, "CCOSS_REPLACEMENT": "pool_attention" },
    { "USE_MSFFN": False, "MSFFN_REPLACEMENT": "gated" },
    { "USE_MSFFN": False, "MSFFN_REPLACEMENT": "single_scale", "MSFFN_FUSE": "concat_proj" },
    { "EXPANSION": 1, "STATE_SIZE": 8, "ENCODER_BLOCKS": "2,1,0" },
])
def test_param_census_matches_model(overrides):
    config = ModelConfig(overrides)
    assert count_params(config) == _numel(config)


def test_default_model_is_near_reference_size():
    config = ModelConfig.default()

    # When
    params = count_params(config)
    macs = count_flops(config, 256, 256)

    # Then
    assert abs(params / REFERENCE_PARAMS - 1) <= 0.15
    assert abs(macs / REFERENCE_MACS_256 - 1) <= 0.20


def test_one_scoss_block_at_width_eight():
    report = count_breakdown(ModelConfig.default(), 256, 256)

    # Then
    assert report.matching("encoder1.0.soss.").params == 3944
    assert report.matching("encoder1.0.ccoss.").params == 312
    assert report.matching("encoder1.0.msffn.").params == 5152
    assert report.matching("encoder1.0.").params == 9408


@pytest.mark.parametrize("switch, fragment", [
    ("USE_SOSS", ".soss."),
    ("USE_CCOSS", ".ccoss."),
    ("USE_MSFFN", ".msffn."),
])
def test_ablations_drop_exactly_their_module(switch, fragment):
    full = count_breakdown(ModelConfig.default(), 256, 256)
    ablated = count_breakdown(ModelConfig({ switch: False }), 256, 256)

    # Then
    removed = full.matching(fragment)
    assert full.total_params - ablated.total_params == removed.params
    assert full.total_macs - ablated.total_macs == removed.macs
    assert ablated.matching(fragment).params == 0


def test_macs_grow_with_pixel_count():
    config = ModelConfig.default()
    ratio = count_flops(config, 512, 512) / count_flops(config, 256, 256)
    # channel scans grow with H + W rather than H * W
    assert 3.9 < ratio <= 4.0


def test_stride_two_halves_the_next_level():
    report = count_breakdown(ModelConfig.default(), 256, 256)
    # 3x3 conv 8 -> 16 channels on a 128 x 128 output
    assert report.matching("down1").macs == 9 * 8 * 16 * 128 * 128
    assert report.matching("shallow").macs == 9 * 3 * 8 * 256 * 256


def test_modules_are_listed_in_network_order():
    modules = list(count_breakdown(ModelConfig.default(), 64, 64).by_module())
    assert modules == [
        "shallow",
        "encoder1", "down1", "encoder2", "down2", "encoder3", "down3",
        "bottleneck",
        "up1", "fuse1", "decoder1",
        "up2", "fuse2", "decoder2",
        "up3", "fuse3", "decoder3",
        "refinement", "output",
    ]


def test_params_do_not_depend_on_input_size():
    config = ModelConfig.default()
    assert count_breakdown(config, 64, 128).total_params == count_params(config)


@pytest.mark.parametrize("overrides, fragment, params", [
    ({ "USE_SOSS": False, "SOSS_REPLACEMENT": "conv" }, ".soss.", 1168),
    ({ "USE_CCOSS": False, "CCOSS_REPLACEMENT": "pool_attention" }, ".ccoss.", 42),
    ({ "USE_MSFFN": False, "MSFFN_REPLACEMENT": "gated" }, ".msffn.", 392),
    ({ "USE_MSFFN": False, "MSFFN_REPLACEMENT": "single_scale" }, ".msffn.", 1344),
])
def test_replacements_swap_only_their_module(overrides, fragment, params):
    full = count_breakdown(ModelConfig.default(), 256, 256)
    replaced = count_breakdown(ModelConfig(overrides), 256, 256)

    # Then
    assert replaced.matching(f"encoder1.0{ fragment }").params == params
    kept = [layer for layer in full.layers if fragment not in layer.name]
    assert [layer for layer in replaced.layers if fragment not in layer.name] == kept


def test_ablation_variants_override_the_base_config():
    base = ModelConfig({ "BASE_WIDTH": 4, "USE_CCOSS": False, "BLOCK_TYPE": "resblock" })
    variants = { ablation.name: ablation.apply(base) for ablation in ABLATIONS }

    # Then
    full = variants["full"]
    assert full.BASE_WIDTH == 4 and full.BLOCK_TYPE == "scoss" and full.USE_CCOSS
    conv = variants["w/o SOSS (conv)"]
    assert not conv.USE_SOSS and conv.SOSS_REPLACEMENT == "conv" and conv.USE_CCOSS
    assert variants["resblock baseline"].BLOCK_TYPE == "resblock"
    assert count_params(variants["w/o SOSS (conv)"]) < count_params(full)
