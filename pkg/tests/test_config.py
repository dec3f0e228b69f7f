import pytest

from relopts.config import (
    PRESETS, PipelineConfig, config_hash, format_config, load_config,
    parse_config_text, preset_default_7x7,
)
from relopts.errors import ConfigError


def test_defaults_validate():
    cfg = PipelineConfig()
    cfg.validate()


def test_all_presets_validate():
    for name, make in PRESETS.items():
        make().validate()


def test_parse_simple_keys():
    cfg = parse_config_text("env.width = 9\nenv.height = 9\nmetric.steps = 123\nseeds = 1,2,3\n")
    assert cfg.env.width == 9
    assert cfg.metric.steps == 123
    assert cfg.seeds == [1, 2, 3]


def test_parse_comments_and_blanks():
    cfg = parse_config_text("# comment\n\nenv.n_agents = 4  # inline\n")
    assert cfg.env.n_agents == 4


def test_parse_nested_lists():
    cfg = parse_config_text("env.apples = 1,1;5,5\n")
    assert cfg.env.apples == [[1, 1], [5, 5]]


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("env.wdith = 9\n")


def test_bad_line_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("env.width 9\n")


def test_format_parse_roundtrip():
    cfg = preset_default_7x7()
    text = format_config(cfg)
    back = parse_config_text(text)
    assert config_hash(back) == config_hash(cfg)


def test_hash_changes_with_config():
    a = PipelineConfig()
    b = PipelineConfig()
    b.metric.steps += 1
    assert config_hash(a) != config_hash(b)


def test_load_preset():
    cfg = load_config("preset:hetero-2ag")
    assert cfg.env.agent_types == [1, 0]
    with pytest.raises(ConfigError):
        load_config("preset:nope")


def test_load_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/path.cfg")
