import pytest
import yaml

from driftline.config import dump_config, load_config, load_config_file
from driftline.errors import ConfigError


def test_seed_required():
    with pytest.raises(ConfigError) as info:
        load_config({})
    assert info.value.path == "seed"


def test_defaults_documented():
    cfg = load_config({"seed": 3})
    assert cfg.joiner.timeout == 5000
    assert cfg.windows.reference_size == 2000 and cfg.windows.step == 250
    assert cfg.policy.cost.retrain_cost == 1000
    assert [r.id for r in cfg.policy.compiled_rules()] == ["emergency-changepoint", "shift-retrain",
                                                          "health-degradation"]


@pytest.mark.parametrize("doc,path", [
    ({"seed": 1, "windows": {"stepp": 3}}, "windows.stepp"),
    ({"seed": 1, "windows": {"step": "big"}}, "windows.step"),
    ({"seed": 1, "windows": {"step": 5000}}, "windows.step"),
    ({"seed": 1, "joiner": {"timeout": 1, "watermark_lag": 5}}, "joiner.timeout"),
    ({"seed": 1, "injections": [{"kind": "covariate_mean_shift", "start": 10**9}]}, "injections[0].start"),
    ({"seed": 1, "injections": [{"kind": "warp", "start": 1}]}, "injections[0].kind"),
    ({"seed": 1, "policy": {"rules": [{"id": "x", "action": "retrain",
                                       "when": {"field": "bogus", "op": "<", "value": 1}}]}},
     "policy.rules[0].when.field"),
    ({"seed": 1, "model": {"family": "forest"}}, "model.family"),
    ({"seed": True}, "seed"),
])
def test_errors_carry_paths(doc, path):
    with pytest.raises(ConfigError) as info:
        load_config(doc)
    assert info.value.path == path


def test_round_trip_through_yaml(tmp_path):
    cfg = load_config_file("scenarios/covariate_shift.yaml")
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    assert load_config_file(p) == cfg


def test_relative_stream_file(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"seed": 1, "stream": {"file": "events.jsonl"}}))
    cfg = load_config_file(tmp_path / "c.yaml")
    assert cfg.stream.file == str(tmp_path / "events.jsonl")


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "nope.yaml")
    (tmp_path / "bad.yaml").write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "bad.yaml")


def test_with_seed():
    cfg = load_config({"seed": 1})
    assert cfg.with_seed(9).seed == 9 and cfg.seed == 1
