import pytest
from hypothesis import given, strategies as st

from depthlayers import config
from depthlayers.config import ConfigError, RunConfig


def test_defaults_round_trip():
    cfg = RunConfig()
    assert config.loads(config.dumps(cfg)) == cfg


@given(st.integers(0, 10**6), st.floats(1e-6, 1.0), st.sampled_from(config.BACKENDS),
       st.lists(st.sampled_from([0, 3, 5, 7, 9]), min_size=1, max_size=5))
def test_round_trip_after_overrides(seed, lr, backend, ks):
    cfg = config.loads("", [f"run.seed={seed}", f"train.lr={lr!r}", f"run.backend={backend}",
                            "sweep.ks=" + ",".join(map(str, ks))])
    assert cfg.run.seed == seed and cfg.train.lr == lr and cfg.sweep.ks == tuple(ks)
    assert config.loads(config.dumps(cfg)) == cfg


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[generate]\ncount = 12\nkind_weights = object:1, sky:0\n[perturb]\nblur_large_sigma = 1, 3\n")
    cfg = config.load(path, ["generate.count=4"])
    assert cfg.generate.count == 4
    assert cfg.generate.kind_weights == {"object": 1.0, "sky": 0.0}
    assert cfg.perturb.blur_large_sigma == (1.0, 3.0)


@pytest.mark.parametrize("text,overrides", [
    ("[nope]\na = 1\n", []),
    ("[run]\nmystery = 1\n", []),
    ("[run]\nseed = abc\n", []),
    ("[run]\nbackend = magic\n", []),
    ("[perturb]\nblur_small_prob = 2\n", []),
    ("[sweep]\nks = 0, 4\n", []),
    ("", ["seed=3"]),
    ("not an ini", []),
])
def test_invalid_configs(text, overrides):
    with pytest.raises(ConfigError):
        config.loads(text, overrides)


def test_required_paths(tmp_path):
    cfg = config.loads("", [f"paths.data={tmp_path}", f"paths.checkpoint={tmp_path / 'none.dlyr'}"])
    cfg.require_paths("data")
    with pytest.raises(ConfigError):
        cfg.require_paths("checkpoint")
