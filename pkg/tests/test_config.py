import pytest

from syncpretrain.config import (ConfigError, desk_config, dump_config, load_config,
                                 paper_config, parse_text, resolve)


def test_parse_text_values_and_comments():
    parsed = parse_text("# header\nmodel.arch = [4, 3]  # inline\n\noutput.dir = runs\n"
                        "cd.sample_hidden = false\nsync.stipulated_epochs = null\n")
    assert parsed == {"model.arch": ([4, 3], 2), "output.dir": ("runs", 4),
                      "cd.sample_hidden": (False, 5), "sync.stipulated_epochs": (None, 6)}


@pytest.mark.parametrize("text, line", [("no equals sign", 1), ("a = 1\na = 2", 2),
                                        ("\n = 3", 2)])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_text(text)
    assert info.value.line == line and f"line {line}" in str(info.value)


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("train.seed = 3\ntrain.sed = 4\n")
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert (info.value.key, info.value.line) == ("train.sed", 2)


def test_invalid_value_reports_key_and_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("\n\ntrain.batch_size = 0\n")
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert (info.value.key, info.value.line) == ("train.batch_size", 3)
    with pytest.raises(ConfigError) as info:
        resolve({"sync.mode": "SOMETIMES"})
    assert info.value.key == "sync.mode"
    with pytest.raises(ConfigError):
        resolve({"train.seed": "seven"})
    with pytest.raises(ConfigError):
        resolve({"model.arch": [784], "sync.extra_epochs": None})


def test_paper_preset():
    cfg = paper_config()
    assert cfg.arch == (784, 1000, 500, 250, 30)
    assert cfg.cd.learning_rate == 0.1 and cfg.finetune_learning_rate == 0.001
    assert cfg.epochs_per_layer == 20 and cfg.finetune_epochs == 10
    assert cfg.cd.momentum_schedule == ((0, 0.5), (5, 0.9))
    assert cfg.batch_size == 100
    assert cfg.schedule.stipulated_epochs == (20, 20, 20, 20)
    assert cfg.schedule.extra_epochs == (0, 5, 20, 40)
    assert cfg.schedule.termination == "FIRST_LAYER_DONE"


def test_desk_preset():
    cfg = desk_config()
    m = cfg.mapping()
    assert cfg.arch == (784, 256, 128, 64, 16)
    assert cfg.epochs_per_layer == 10 and cfg.finetune_epochs == 5
    assert (m["data.per_class_valid"], m["data.per_class_test"]) == (100, 100)
    assert m["data.train_limit"] == 5000
    assert cfg.cd == paper_config().cd


def test_per_layer_values_expand():
    cfg = resolve({"model.arch": [6, 4, 2], "sync.stipulated_epochs": 3,
                   "sync.wake_epochs": [1, 2], "sync.extra_epochs": None})
    assert cfg.schedule.stipulated_epochs == (3, 3)
    assert cfg.schedule.wake_epochs == (1, 2)
    assert cfg.schedule.budget(1) is None


def test_file_overrides_and_preset_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("preset = desk\ntrain.seed = 5\n")
    cfg = load_config(p, overrides={"train.seed": 6})
    assert cfg.seed == 6 and cfg.arch == (784, 256, 128, 64, 16)


def test_dump_load_round_trip(tmp_path):
    cfg = desk_config({"train.seed": 11, "sync.mode": "DETERMINISTIC_ROUNDS"})
    p = tmp_path / "echo.cfg"
    p.write_text(dump_config(cfg))
    back = load_config(p)
    assert back == cfg and back.config_hash() == cfg.config_hash()


def test_hash_ignores_output_location_only():
    base = paper_config()
    assert base.config_hash() == paper_config({"output.dir": "elsewhere"}).config_hash()
    assert base.config_hash() != paper_config({"train.seed": 1}).config_hash()
    assert base.config_hash() != desk_config().config_hash()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/c.cfg")
