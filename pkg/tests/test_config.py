import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rseed.config import PRESETS, ConfigError, EnhanceConfig, InitSetting, OptimizationMode, parse_kv


def test_documented_defaults():
    c = EnhanceConfig()
    assert (c.lr, c.lambda_re, c.lambda_e, c.lambda_s, c.lambda_i) == (1e-2, 12.0, 0.05, 0.03, 0.01)
    assert (c.tau, c.exposure_e, c.gamma_init, c.iterations) == (0.6, 0.6, 0.5, 2500)
    assert c.mode is OptimizationMode.SEED_ONLY and c.init is InitSetting.PRETRAINED_REFLECTANCE


@pytest.mark.parametrize("name, iters, tau", [("paired", 2500, 0.6), ("noref", 5000, 0.2), ("fast", 900, 0.6)])
def test_presets(name, iters, tau):
    c = EnhanceConfig.from_preset(name)
    assert (c.iterations, c.tau) == (iters, tau)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        EnhanceConfig.from_preset("turbo")


@pytest.mark.parametrize("kw", [dict(iterations=-1), dict(lr=0), dict(lambda_s=-0.1), dict(exposure_e=1.5),
                                dict(gamma_init=0), dict(mode="fancy"), dict(stage_channels=(8, 8))])
def test_violations(kw):
    with pytest.raises((ConfigError, ValueError)):
        EnhanceConfig(**kw)


def test_parse_kv_comments_and_errors():
    assert parse_kv("# c\n iterations = 10  # trailing\n\nlr=0.5\n") == {"iterations": 10, "lr": 0.5}
    with pytest.raises(ConfigError, match="line 1"):
        parse_kv("iterations 10")
    with pytest.raises(ConfigError, match="unknown"):
        parse_kv("bogus = 1")
    with pytest.raises(ConfigError, match="bad value"):
        parse_kv("iterations = ten")


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(PRESETS)), st.integers(0, 10**6), st.floats(1e-6, 10),
       st.sampled_from(list(OptimizationMode)), st.sampled_from(list(InitSetting)),
       st.floats(0, 100), st.floats(0.001, 0.999), st.integers(0, 2**32), st.text(
           st.characters(blacklist_characters="#\n\r", blacklist_categories=("Cs", "Cc", "Zs")), max_size=12))
def test_dumps_loads_round_trip(preset, iters, lr, mode, init, lam, e, seed, path):
    c = EnhanceConfig.from_preset(preset, iterations=iters, lr=lr, mode=mode, init=init, lambda_e=lam,
                                  exposure_e=e, rng_seed=seed, weights_r=path)
    assert EnhanceConfig.loads(c.dumps()) == c
