import pytest

from hybridmo.config import (
    ConfigError,
    RunConfig,
    config_hash,
    dump_config,
    load_config,
    parse_config,
    save_config,
    with_train,
)


def test_empty_document_gives_defaults(tmp_path):
    (tmp_path / "empty.yaml").write_text("")
    cfg = load_config(tmp_path / "empty.yaml")
    assert cfg == RunConfig()
    assert cfg.train.N == 5 and cfg.train.evo.delta == 0.7 and cfg.train.T == 100


def test_values_are_read():
    cfg = parse_config({"train": {"N": 7, "T": 22}, "evo": {"delta": 0.5}, "adam": {"lr": 3e-4},
                        "fusion": {"M": 10}})
    assert (cfg.train.N, cfg.train.T, cfg.train.evo.delta, cfg.train.adam.lr, cfg.fusion.M) == (7, 22, 0.5, 3e-4, 10)


@pytest.mark.parametrize("doc, path", [
    ({"adamm": {"lr": 1e-3}}, "adamm.lr"),
    ({"adam": {"learning_rate": 1e-3}}, "adam.learning_rate"),
    ({"train": {"evo": {"delta": 0.5}}}, "train.evo"),
])
def test_unknown_keys_are_named(doc, path):
    with pytest.raises(ConfigError, match=f"unknown key '{path}'"):
        parse_config(doc)


def test_range_and_type_errors_name_the_field():
    with pytest.raises(ConfigError, match=r"evo\.delta"):
        parse_config({"evo": {"delta": 1.5}})
    with pytest.raises(ConfigError, match=r"train\.N: expected an integer"):
        parse_config({"train": {"N": "five"}})
    with pytest.raises(ConfigError, match=r"train\.N: expected an integer"):
        parse_config({"train": {"N": True}})
    with pytest.raises(ConfigError, match="top level"):
        parse_config([1, 2])


def test_malformed_yaml_and_missing_file(tmp_path):
    (tmp_path / "bad.yaml").write_text("train: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed YAML"):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


def test_serialisation_is_idempotent(tmp_path):
    cfg = parse_config({"train": {"N": 6, "problem": "concave-front", "dimension": 8}, "evo": {"eta": 15.0}})
    first = save_config(cfg, tmp_path / "a.yaml").read_text()
    again = load_config(tmp_path / "a.yaml")
    assert again == cfg
    assert dump_config(again) == first
    assert config_hash(again) == config_hash(cfg)


def test_hash_tracks_changes():
    base = RunConfig()
    assert len(config_hash(base)) == 16
    assert config_hash(with_train(base, T=50)) != config_hash(base)
