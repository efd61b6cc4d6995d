"""Flat key=value configuration parsing and override precedence."""

from __future__ import annotations

import math

import pytest

from mvanomaly.config import (
    PipelineConfig,
    load_config,
    parse_config_text,
    parse_overrides,
    parse_views,
)


def test_defaults_wire_into_owned_configs():
    cfg = PipelineConfig()
    assert cfg.resolution == 64 and cfg.eta == 0.8 and cfg.lam3 == 0.8
    assert len(cfg.view_set()) == 9
    spec = cfg.synth_spec()
    assert (spec.seed, spec.n_normal, spec.n_anomalous) == (42, 40, 40)
    pc = cfg.prompt_config()
    assert (pc.length_normal, pc.length_anomaly, pc.deep_length, pc.deep_depth) == (14, 14, 4, 9)
    tc = cfg.train_config()
    assert (tc.epochs, tc.lr, tc.seed) == (15, 0.001, 0)
    assert tc.settings.lam3 == 0.8 and tc.settings.tau == 0.07


def test_validation_delegates_to_owned_configs():
    with pytest.raises(ValueError, match="at least one view angle"):
        PipelineConfig(x_angles=(), y_angles=())
    with pytest.raises(ValueError, match="finite"):
        PipelineConfig(x_angles=(math.nan,))
    with pytest.raises(ValueError, match="resolution"):
        PipelineConfig(resolution=4)
    with pytest.raises(ValueError, match="area fractions"):
        PipelineConfig(area_min=0.5, area_max=0.1)
    with pytest.raises(ValueError, match="position"):
        PipelineConfig(position="bogus")
    with pytest.raises(ValueError, match="optimizer"):
        PipelineConfig(optimizer="lbfgs")


def test_parse_overrides_types():
    out = parse_overrides({
        "resolution": "128",
        "eta": "1.5",
        "x_angles": "0.1, 0.2",
        "kinds": "color",
        "optimizer": "sgd",
    })
    assert out == {
        "resolution": 128,
        "eta": 1.5,
        "x_angles": (0.1, 0.2),
        "kinds": ("color",),
        "optimizer": "sgd",
    }
    with pytest.raises(ValueError, match="unknown config key"):
        parse_overrides({"granularity": "3"})


def test_parse_config_text_comments_and_errors():
    text = "# a comment\nresolution = 32\n\neta=0.4  # trailing\n"
    assert parse_config_text(text) == {"resolution": 32, "eta": 0.4}
    with pytest.raises(ValueError, match="line 2"):
        parse_config_text("resolution=32\nnonsense\n")


def test_load_config_precedence(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("resolution=32\neta=0.4\nepochs=3\n")
    cfg = load_config(p, overrides=parse_overrides({"eta": "1.1"}))
    assert cfg.resolution == 32  # from file
    assert cfg.eta == 1.1  # override wins
    assert cfg.epochs == 3
    assert cfg.lam3 == 0.8  # untouched default
    assert load_config().resolution == 64


def test_parse_views_grammar():
    out = parse_views("x=0.1,0.2; y=0.3")
    assert out == {"x_angles": (0.1, 0.2), "y_angles": (0.3,)}
    assert parse_views("y=-0.4") == {"y_angles": (-0.4,)}
    with pytest.raises(ValueError, match="bad view group"):
        parse_views("z=0.1")
    with pytest.raises(ValueError, match="empty view"):
        parse_views(" ; ")
