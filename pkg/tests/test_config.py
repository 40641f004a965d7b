import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsinflation.config import ConfigError, ExperimentConfig, env_overrides, load_config, save_config


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return path


def test_minimal_file_gives_documented_defaults(tmp_path):
    cfg = load_config(write(tmp_path, {}), environ={})
    assert (cfg.delta, cfg.M, cfg.p) == (0.1, 10.0, 2.0)
    assert cfg.N_list == (3, 4, 5)


@pytest.mark.parametrize(
    "data,key",
    [
        ({"N_list": [2, 3]}, "N_list"),
        ({"N_list": []}, "N_list"),
        ({"N_list": [3, 3]}, "N_list"),
        ({"delta": 0}, "delta"),
        ({"p": 3}, "p"),
        ({"M": 5}, "M"),
        ({"foo": 1}, "foo"),
        ({"grid_policy": {"bar": 1}}, "grid_policy.bar"),
        ({"time_grid": {"rho": 0.95}}, "time_grid.rho"),
        ({"samples": 10}, "samples"),
    ],
)
def test_validation_errors_name_the_key(tmp_path, data, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(write(tmp_path, data), environ={})


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(ConfigError, match="line 1 column"):
        load_config(write(tmp_path, '{"delta": }'), environ={})
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json", environ={})
    with pytest.raises(ConfigError, match="object"):
        load_config(write(tmp_path, "[1, 2]"), environ={})


@settings(max_examples=30, deadline=None)
@given(
    p=st.sampled_from([1.0, 1.25, 2.0]),
    q=st.sampled_from([1.0, 2.0, math.inf]),
    delta=st.floats(1e-4, 10),
    N_list=st.lists(st.integers(3, 10), min_size=1, max_size=4, unique=True),
    seed=st.integers(0, 2**31),
)
def test_round_trip(tmp_path_factory, p, q, delta, N_list, seed):
    cfg = ExperimentConfig(p=p, q=q, delta=delta, N_list=tuple(N_list), seed=seed)
    path = tmp_path_factory.mktemp("rt") / "cfg.json"
    save_config(cfg, path)
    assert load_config(path, environ={}) == cfg


def test_env_overrides(tmp_path):
    env = {
        "NSINFL_DELTA": "0.05",
        "NSINFL_GRID_POLICY__MAX_POINTS": "512",
        "NSINFL_N_LIST": "[4, 5]",
        "NSINFL_Q": "inf",
        "OTHER": "x",
    }
    assert env_overrides(env)["grid_policy"] == {"max_points": 512}
    cfg = load_config(write(tmp_path, {"delta": 0.2}), environ=env)
    assert cfg.delta == 0.05 and cfg.grid_policy.max_points == 512
    assert cfg.N_list == (4, 5) and cfg.q == math.inf
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, {}), environ={"NSINFL_UNKNOWN": "1"})


def test_grid_policy_build():
    cfg = ExperimentConfig(grid_policy={"points": 64, "L": 8 * math.pi})
    policy = cfg.grid_policy.build()
    grid, reduced = policy.grid_for(3, 10.0)
    assert grid.points_per_dim == 64 and not reduced
    assert cfg.time_grid.build().rho == 0.5
