"""Tests for the key = value configuration layer."""

from pathlib import Path

import pytest

from config.experiment.parser import (
    apply_overrides,
    documented_keys,
    load_config,
    parse_config,
    render_config,
)
from config.experiment.settings import ExperimentSettings, schema
from src.errors import ConfigError, ConfigParseError

PROFILES = Path(__file__).resolve().parents[2] / "config" / "experiment"


def test_empty_document_gives_defaults():
    assert parse_config("") == ExperimentSettings()
    assert parse_config("# only a comment\n\n") == ExperimentSettings()


def test_defaults_are_valid():
    ExperimentSettings().validate()


def test_floats_parse():
    settings = parse_config("train.momentum=0.9\ntrain.weight_decay=0.0005")
    assert settings.train.momentum == 0.9
    assert settings.train.weight_decay == 0.0005


def test_typed_values():
    settings = parse_config(
        "backbone.stages = 1x4, 2x8  # two stages\n"
        "backbone.taps = conv1_1, conv2_2\n"
        "backbone.head_channels = 0\n"
        "head.hidden =\n"
        "head.feature_norm = yes\n"
        "task.eval_scales = 0.5, 1.0\n"
    )
    assert settings.backbone.stages == [(1, 4), (2, 8)]
    assert settings.backbone.taps == ["conv1_1", "conv2_2"]
    assert settings.head.hidden == []
    assert settings.head.feature_norm is True
    assert settings.task.eval_scales == [0.5, 1.0]


def test_constraint_violation_has_location():
    with pytest.raises(ConfigParseError) as info:
        parse_config("sample.strategy=biased\nsample.rho=1.5")
    assert (info.value.line, info.value.column) == (2, 12)
    assert info.value.kind == "parse"


def test_unknown_key():
    with pytest.raises(ConfigParseError) as info:
        parse_config("train.lr0 = 0.1\n  train.learning_rate = 0.1")
    assert (info.value.line, info.value.column) == (2, 3)


def test_type_mismatch():
    with pytest.raises(ConfigParseError):
        parse_config("train.iterations = many")
    with pytest.raises(ConfigParseError):
        parse_config("train.lr0 = nan")


def test_duplicate_key():
    with pytest.raises(ConfigParseError):
        parse_config("train.seed = 1\ntrain.seed = 2")


def test_missing_equals():
    with pytest.raises(ConfigParseError):
        parse_config("train.seed 1")


def test_choice_constraint():
    with pytest.raises(ConfigParseError):
        parse_config("task.kind = depth")


def test_render_roundtrip():
    settings = parse_config(
        "backbone.stages = 1x4, 2x8\nbackbone.taps = conv1_1, conv2_2\nhead.hidden = 32, 16\n"
        "train.lr0 = 0.1\ntrain.schedule = 10:0.5\ntask.eval_scales = 0.5, 1.0, 2.0\n"
        "bench.ablation = taps\n"
    )
    assert parse_config(render_config(settings)) == settings
    assert parse_config(render_config(ExperimentSettings())) == ExperimentSettings()


def test_hash_inside_a_string_survives_a_roundtrip():
    settings = ExperimentSettings()
    settings.set("task.data_dir", "runs/#3/data")
    settings.set("backbone.checkpoint", '"quoted"')
    text = render_config(settings)
    assert 'task.data_dir = "runs/#3/data"' in text
    assert parse_config(text) == settings
    parsed = parse_config('task.data_dir = "a # b"  # trailing comment\n')
    assert parsed.task.data_dir == "a # b"


def test_strings_mixing_hash_and_quotes_are_refused():
    settings = ExperimentSettings()
    settings.set("task.data_dir", 'a"#b')
    with pytest.raises(ConfigError):
        render_config(settings)


def test_override_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.seed = 3\ntrain.lr0 = 0.5\n")
    settings = load_config(path, ["train.seed=7"])
    assert settings.train.seed == 7
    assert settings.train.lr0 == 0.5
    assert settings.train.momentum == 0.9


def test_override_errors_point_at_the_flag():
    with pytest.raises(ConfigParseError) as info:
        apply_overrides(ExperimentSettings(), ["train.seed=1", "train.bogus=2"])
    assert info.value.line == 2


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")


def test_cross_key_validation():
    with pytest.raises(ConfigError):
        load_config(None, ["task.size=36"])
    with pytest.raises(ConfigError):
        load_config(None, ["sample.strategy=biased"])
    with pytest.raises(ConfigError):
        load_config(None, ["sample.pixels_per_image=2000"])


def test_digest_tracks_content():
    a = ExperimentSettings()
    b = a.copy()
    assert a.digest() == b.digest()
    b.set("train.seed", 1)
    assert a.digest() != b.digest()
    assert a.train.seed == 0


def test_every_key_is_documented():
    docs = documented_keys()
    assert len(docs) == len(schema())
    assert all(doc for _, _, doc in docs)


def test_unknown_key_on_set():
    with pytest.raises(ConfigError):
        ExperimentSettings().set("train.nope", 1)


def test_reference_profile_matches_the_acceptance_setup():
    settings = load_config(PROFILES / "reference.cfg")
    assert settings.train.iterations == 2000
    assert (settings.sample.images_per_batch, settings.sample.pixels_per_image) == (5, 256)
    assert settings.head.hidden == [128, 128, 128]
    assert settings.head.init_sigma == 1e-3
    assert settings.bench.ablation_iterations == 0


def test_quick_profile_is_a_cheaper_reference():
    quick = load_config(PROFILES / "quick.cfg")
    reference = load_config(PROFILES / "reference.cfg")
    assert quick.backbone.stages == reference.backbone.stages
    assert quick.train.iterations < reference.train.iterations
    assert quick.sample.pixels_per_image < reference.sample.pixels_per_image
