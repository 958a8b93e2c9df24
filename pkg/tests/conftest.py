from __future__ import annotations

import pytest
from click.testing import CliRunner

from wsireport.cli import main as cli_main
from wsireport.fixtures import write_fixture


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The bundled synthetic corpus, generated once per test session."""
    root = tmp_path_factory.mktemp("corpus")
    write_fixture(root, seed=11)
    return root


@pytest.fixture(scope="session")
def patch_root(corpus, tmp_path_factory):
    """All fixture slides tiled with default settings."""
    out = tmp_path_factory.mktemp("patches")
    result = CliRunner().invoke(
        cli_main, ["tile", "--manifest", str(corpus / "slides"), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture()
def runner():
    return CliRunner()
