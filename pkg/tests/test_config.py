import pytest

from kspacenet.config import config_from_dict, load_config
from kspacenet.errors import MissingFile, SchemaError


def test_defaults():
    cfg = load_config(environ={})
    assert cfg.phantom.nx == 64 and cfg.schedule.num_interleaves == 5
    assert (cfg.schedule.rx, cfg.schedule.ry) == (3, 2)
    assert cfg.schedule.acs_size == (16, 16)
    assert cfg.train.vs_input == 2 and cfg.train.vs_label == 5
    assert cfg.eval.vs == [2, 3, 5]


def test_toml_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('out = "x"\n[recon]\nengine = "aloha"\nvs = 3\n[aloha]\nmax_outer = 7\n')
    cfg = load_config(p, environ={})
    assert cfg.out == "x" and cfg.recon.engine == "aloha" and cfg.aloha.max_outer == 7


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"phantom": {"nxx": 64}},
    {"recon": {"engine": "magic"}},
    {"train": {"epochs": "many"}},
    {"eval": {"reference": "moon"}},
])
def test_unknown_or_invalid_keys_rejected(data):
    with pytest.raises(SchemaError):
        config_from_dict(data, environ={})


def test_env_overrides():
    env = {"KSDL_TRAIN__EPOCHS": "5", "KSDL_RECON__ENGINE": "zero", "KSDL_OUT": "o",
           "KSDL_SCHEDULE__ACS_SIZE": "[12, 12]", "OTHER": "1"}
    cfg = config_from_dict({"train": {"epochs": 9}}, environ=env)
    assert cfg.train.epochs == 5 and cfg.recon.engine == "zero" and cfg.out == "o"
    assert cfg.schedule.acs_size == (12, 12)
    with pytest.raises(SchemaError):
        config_from_dict({}, environ={"KSDL_TRAIN__NOPE": "1"})


def test_file_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_config(tmp_path / "none.toml")
    p = tmp_path / "bad.toml"
    p.write_text("this is = = not toml")
    with pytest.raises(SchemaError):
        load_config(p)
