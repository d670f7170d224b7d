import pytest

from radardepth.config import CONFIG_ENV, Config, load_config, parse_override


def test_defaults():
    c = Config()
    assert (c.beta, c.gamma, c.sigma_r, c.alpha) == (2.0, 0.5, 1e-5, 0.85)
    assert (c.lambda_smooth, c.lambda_velocity, c.lambda_radar) == (1e-3, 0.02, 0.2)
    assert (c.window_h, c.window_w, c.window_stride) == (320, 8, 3)


def test_yaml_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("beta: 3.5\nbox_classes: [car, truck]\n")
    c = load_config(str(p))
    assert c.beta == 3.5 and c.box_classes == ["car", "truck"]


def test_env_and_overrides(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("beta: 3.5\n")
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert load_config().beta == 3.5
    assert load_config(overrides=["beta=4", "median_scaling=true"]).beta == 4
    assert load_config(overrides=["median_scaling=true"]).median_scaling is True


def test_unknown_and_invalid(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        load_config(overrides=["bta=1"])
    with pytest.raises(ValueError):
        load_config(overrides=["gamma=1.5"])
    with pytest.raises(ValueError):
        parse_override("beta")
    p = tmp_path / "list.yaml"
    p.write_text("- 1\n")
    with pytest.raises(ValueError):
        load_config(str(p))


def test_updated_ignores_none():
    c = Config().updated(beta=5.0, gamma=None)
    assert c.beta == 5.0 and c.gamma == 0.5
    assert Config(**c.to_dict()) == c
