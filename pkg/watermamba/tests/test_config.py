import pytest

from watermamba.config import DEFAULT_CONFIG_PATH, ModelConfig, RuntimeConfig


def test_default_file_matches_field_defaults():
    # When
    config = ModelConfig.default()

    # Then
    assert config == ModelConfig({})
    assert config.widths == (8, 16, 32, 64)
    assert config.ENCODER_BLOCKS == (1, 1, 1)
    assert config.USE_MSFFN is True


def test_canonical_text_is_stable():
    # When
    text = ModelConfig.default().to_text()

    # Then
    assert text == DEFAULT_CONFIG_PATH.read_text(encoding="utf-8")
    assert text.startswith("BASE_WIDTH=8\nSTATE_SIZE=16\n")
    assert "USE_SOSS=true\n" in text
    assert ModelConfig.from_text(text) == ModelConfig.default()


def test_from_text_skips_comments_and_blank_lines():
    # When
    config = ModelConfig.from_text("# ablation\n\nUSE_CCOSS = false\nBBAR_MODE=Euler\n")

    # Then
    assert config.USE_CCOSS is False
    assert config.BBAR_MODE == "euler"
    assert config.BASE_WIDTH == 8


def test_from_text_rejects_unknown_fields():
    with pytest.raises(ValueError, match="Unknown config field 'WIDTH'"):
        ModelConfig.from_text("WIDTH=8\n")


def test_from_text_rejects_malformed_lines():
    with pytest.raises(ValueError, match="Malformed config line 2"):
        ModelConfig.from_text("BASE_WIDTH=8\nSTATE_SIZE\n")


def test_uncastable_value():
    with pytest.raises(ValueError, match='Unable to cast value of "eight"'):
        ModelConfig({ "BASE_WIDTH": "eight" })


@pytest.mark.parametrize("field, value", [
    ("BBAR_MODE", "rk4"),
    ("SKIP_FUSION", "multiply"),
    ("MSFFN_FUSE", "max"),
    ("BLOCK_TYPE", "transformer"),
    ("ENCODER_BLOCKS", "1,1"),
    ("DECODER_BLOCKS", "1,-1,1"),
    ("BASE_WIDTH", "0"),
    ("SCAN_CHUNK", "100"),
    ("BOTTLENECK_BLOCKS", "-2"),
    ("SOSS_REPLACEMENT", "pool_attention"),
    ("CCOSS_REPLACEMENT", "conv"),
    ("MSFFN_REPLACEMENT", "identity"),
])
def test_validators_reject_bad_values(field, value):
    with pytest.raises(ValueError, match="Config misconfiguration"):
        ModelConfig({ field: value })


def test_tuple_fields_accept_text_and_sequences():
    # When
    from_text = ModelConfig({ "ENCODER_BLOCKS": "2, 0, 1" })
    from_list = ModelConfig({ "ENCODER_BLOCKS": [2, 0, 1] })

    # Then
    assert from_text.ENCODER_BLOCKS == (2, 0, 1)
    assert from_text == from_list


def test_from_file(tmp_path):
    path = tmp_path / "model.conf"
    path.write_text("BASE_WIDTH=4\nSTATE_SIZE=4\n", encoding="utf-8")

    # When
    config = ModelConfig.from_file(path)

    # Then
    assert config.widths == (4, 8, 16, 32)
    assert config.STATE_SIZE == 4


def test_runtime_defaults():
    # When
    runtime = RuntimeConfig(env={})

    # Then
    assert runtime.WATERMAMBA_THREADS == 0
    assert runtime.WATERMAMBA_LOG_LEVEL == "INFO"
    assert runtime.WATERMAMBA_SIZE_POLICY == "pad8"


def test_runtime_overrides_beat_environment():
    env = { "WATERMAMBA_THREADS": "4", "WATERMAMBA_LOG_LEVEL": "debug" }

    # When
    runtime = RuntimeConfig({ "threads": 2, "size_policy": None }, env=env)

    # Then
    assert runtime.WATERMAMBA_THREADS == 2
    assert runtime.WATERMAMBA_LOG_LEVEL == "DEBUG"
    assert runtime.WATERMAMBA_SIZE_POLICY == "pad8"


@pytest.mark.parametrize("overrides", [{ "threads": -1 }, { "size_policy": "crop" }])
def test_runtime_validators(overrides):
    with pytest.raises(ValueError, match="Config misconfiguration"):
        RuntimeConfig(overrides, env={})
