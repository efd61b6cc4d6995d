"""Shared fixtures: a tiny rendered dataset, one exported embedding tree."""

from __future__ import annotations

import contextlib
import io
import shutil
from pathlib import Path

import pytest

from clip_exporter import cli as exporter_cli
from clip_exporter import model as model_lib
from mvanomaly import cli as core_cli

CONFIG_TEXT = """\
resolution=32
grid=32
n_normal=1
n_anomalous=0
x_angles=0.0
y_angles=0.4
"""


@pytest.fixture(scope="session")
def model():
    return model_lib.build_model(seed=0)


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Synthesize and render one sample with the core CLI."""
    root = tmp_path_factory.mktemp("exporter")
    config = root / "config.txt"
    config.write_text(CONFIG_TEXT)
    dataset = root / "data"
    renders = root / "renders"
    rc = core_cli.main(["synth", "--config", str(config), "--out", str(dataset)])
    assert rc == 0
    rc = core_cli.main(
        ["render", "--config", str(config), str(dataset), "--out", str(renders)]
    )
    assert rc == 0
    return {"root": root, "config": config, "dataset": dataset, "renders": renders}


@pytest.fixture(scope="session")
def exported(model, workspace):
    """Run the export CLI into a tree that doubles as a scoreable dataset."""
    out = workspace["root"] / "export"
    (out / "s000").mkdir(parents=True)
    for name in ("points.mcle", "rgb.ppm", "mask.pgm"):
        shutil.copy(workspace["dataset"] / "s000" / name, out / "s000" / name)
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout):
        rc = exporter_cli.main(
            [
                "export",
                "--dataset", str(workspace["dataset"]),
                "--renders", str(workspace["renders"]),
                "--out", str(out),
                "--samples", "s000",
            ]
        )
    assert rc == 0
    return {"out": out, "message": stdout.getvalue(), **workspace}
