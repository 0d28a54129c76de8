import pytest

from config import load_run_config, parse_config_text, parse_seeds, parse_shapes, resolve
from tools.errors import ConfigError


def test_parse_config_text_with_comments():
    values = parse_config_text("# run\ntask = pca   # inline\n\nshapes = 20x4,classifier:32x8\n")
    assert values == {"task": "pca", "shapes": "20x4,classifier:32x8"}


@pytest.mark.parametrize("text", ["task pca", " = 3", "seed = 1\nseed = 2"])
def test_parse_config_text_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_parse_shapes_default_and_tagged():
    shapes = parse_shapes("20x4, classifier:32x8", "pca")
    assert [s.param_id for s in shapes] == ["pca-20x4", "classifier-32x8"]
    with pytest.raises(ConfigError):
        parse_shapes("20by4", "pca")
    with pytest.raises(ConfigError):
        parse_shapes("", "pca")


def test_parse_seeds():
    assert parse_seeds("101..103") == [101, 102, 103]
    assert parse_seeds("5,7") == [5, 7]
    with pytest.raises(ConfigError):
        parse_seeds("a,b")


def test_flags_override_file_values():
    run = resolve("train", {"inner_steps": "4", "outer_lr": "0.01", "shapes": "8x2"}, {"inner_steps": 6, "seed": None})
    assert run.meta.inner_steps == 6
    assert run.meta.outer_lr == 0.01
    assert run.meta.seed == 0
    assert run.meta.shapes[0].param_id == "pca-8x2"


def test_untagged_shapes_follow_task():
    run = resolve("train", {"task": "classifier", "shapes": "10x3"}, {})
    assert run.meta.shapes[0].param_id == "classifier-10x3"


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown key 'learning_rate'"):
        resolve("train", {"learning_rate": "0.1"}, {})


def test_invalid_value():
    with pytest.raises(ConfigError):
        resolve("train", {"inner_steps": "0"}, {})


def test_objective_data_choices():
    assert resolve("train", {}, {}).meta.objective_data == "batch"
    assert resolve("train", {"objective_data": "full"}, {}).meta.objective_data == "full"
    with pytest.raises(ConfigError, match="objective_data"):
        resolve("train", {"objective_data": "next"}, {})


def test_run_keys_and_out_dir_from_env(monkeypatch):
    monkeypatch.setenv("SUBMETA_OUT", "elsewhere")
    run = resolve("evaluate", {"seeds": "1..3", "optimizer": "rsgd"}, {})
    assert run.seeds == [1, 2, 3]
    assert run.optimizer == "rsgd"
    assert run.out_dir == "elsewhere"


def test_echo_is_flat_and_stable():
    echo = resolve("train", {"shapes": "8x2,classifier:6x3", "persist_theta": "true"}, {}).echo()
    assert echo["shapes"] == "pca:8x2,classifier:6x3"
    assert echo["persist_theta"] == "true"
    assert echo["outer_lr"] == "0.001"
    assert echo["checkpoint"] == ""


def test_load_run_config_reads_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("outer_steps = 3\nshapes = 6x3\n")
    assert load_run_config("train", str(path), {}).meta.outer_steps == 3
    with pytest.raises(ConfigError):
        load_run_config("train", str(tmp_path / "missing.cfg"), {})
