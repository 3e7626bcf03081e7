import pytest

from quietgait.config import ConfigError, RunConfig, load_run_config


def test_layering_file_then_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseed = 3\n[train]\nnum_envs = 32\ncommand_max = 0.5, 1, 1, 1, 1\n[gains]\nwood = 1.5\n")
    cfg = load_run_config(path, ["train.num_envs=16", "sim.kp=25"])
    assert cfg.seed == 3
    t = cfg.build("train")
    assert t.num_envs == 16 and t.command_max == (0.5, 1.0, 1.0, 1.0, 1.0)
    assert cfg.build("sim").kp == 25.0
    assert cfg.build("acoustic").gains["wood"] == 1.5


def test_effective_config_reloads_identically(tmp_path):
    cfg = load_run_config(None, ["reward.k=0.3", "acoustic.floor_level=50", "gains.tiles=2.0"])
    path = cfg.write(tmp_path)
    again = load_run_config(path)
    assert again.to_text() == cfg.to_text()
    assert again.build("reward").k == 0.3


@pytest.mark.parametrize("text", ["[nope]\na = 1\n", "[train]\nbogus = 1\n", "[train]\nnum_envs = many\n",
                                  "[train]\nnum_envs = 0\n", "[sim]\nkp = -1\n", "not an ini file"])
def test_bad_config_rejected(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_run_config(path).build("train")
        load_run_config(path).build("sim")


def test_bad_assignment_rejected():
    with pytest.raises(ConfigError):
        RunConfig().apply_assignments(["seed=3"])
    with pytest.raises(ConfigError):
        RunConfig().apply_assignments(["gains.wood=loud"])
