"""End-to-end tests through the command line entry point"""

import os

import pytest

from cli import build_parser, main, resolve_config

MANIFEST = os.path.join("synth_0000", "synth", "manifest.json")


@pytest.fixture
def synthesized(tmp_path):
    work = str(tmp_path / "work")
    assert main(["synth", "--seed", "0", "--work-dir", work]) == 0
    return work, os.path.join(work, MANIFEST)


def write_config(tmp_path, text):
    path = tmp_path / "gr3d.yaml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_synth_writes_manifest_and_truth(synthesized):
    work, manifest = synthesized
    folder = os.path.dirname(manifest)
    for name in ("manifest.json", "ground_truth.json", "questions.jsonl", "stamp.json"):
        assert os.path.exists(os.path.join(folder, name))
    assert len(os.listdir(os.path.join(folder, "images"))) == 4


def test_extract_then_oracle_eval(synthesized, capsys):
    work, manifest = synthesized
    assert main(["extract", manifest, "--work-dir", work]) == 0
    assert main(["extract", manifest, "--work-dir", work]) == 0
    assert "extract synth_0000: up to date" in capsys.readouterr().out

    assert main(["eval", manifest, "--oracle-answers", "--work-dir", work]) == 0
    with open(os.path.join(work, "table_oracle.md"), "r", encoding="utf-8") as f:
        table = f.read()
    assert table.splitlines()[2].endswith("| 100.0 |")
    assert os.path.exists(os.path.join(work, "scores_oracle.csv"))


def test_run_against_mock_endpoint(synthesized, tmp_path, mock_server, monkeypatch, capsys):
    work, manifest = synthesized
    monkeypatch.setenv("GR3D_TEST_KEY", "test-key")
    config = write_config(tmp_path, (
        "version: 1\n"
        "query:\n"
        f"  endpoint: {mock_server.base_url}\n"
        "  api_key_env: GR3D_TEST_KEY\n"
        "  backoff_base: 0.001\n"
        "paths:\n"
        f"  cache_dir: {tmp_path / 'cache'}\n"
    ))
    assert main(["run", manifest, "--config", config, "--work-dir", work, "--method", "mock"]) == 0
    out = capsys.readouterr().out
    assert "ask synth_0000" in out
    assert "| mock |" in out
    assert mock_server.state.request_count > 0


def test_single_question(synthesized, tmp_path, mock_server, monkeypatch, capsys):
    work, manifest = synthesized
    monkeypatch.setenv("GR3D_TEST_KEY", "test-key")
    config = write_config(tmp_path, (
        "version: 1\n"
        f"query: {{endpoint: '{mock_server.base_url}', api_key_env: GR3D_TEST_KEY}}\n"
    ))
    for stage in ("extract", "annotate", "prompt"):
        assert main([stage, manifest, "--config", config, "--work-dir", work]) == 0
    assert main(["ask", manifest, "--question", "How many chairs?", "--config", config, "--work-dir", work]) == 0
    assert "💬 synth_0000: A" in capsys.readouterr().out
    assert mock_server.state.requests[0]["messages"][0]["content"][0]["text"].rstrip().endswith(
        'Give your final answer on a single line beginning with "ANSWER:".')


def test_unknown_config_key_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, "version: 1\nextract:\n  voxels: 0.1\n")
    assert main(["synth", "--config", config, "--work-dir", str(tmp_path)]) == 2
    assert "extract.voxels" in capsys.readouterr().err


def test_missing_manifest_exits_3(tmp_path, capsys):
    assert main(["extract", str(tmp_path / "nowhere.json"), "--work-dir", str(tmp_path)]) == 3
    assert "MissingFileError" in capsys.readouterr().err


def test_missing_key_exits_4(synthesized, tmp_path, monkeypatch):
    work, manifest = synthesized
    monkeypatch.delenv("GR3D_TEST_KEY", raising=False)
    config = write_config(tmp_path, "version: 1\nquery:\n  api_key_env: GR3D_TEST_KEY\n")
    assert main(["run", manifest, "--config", config, "--work-dir", work]) == 4


def test_work_dir_override_carries_the_cache(tmp_path):
    work = str(tmp_path / "elsewhere")
    config = resolve_config(build_parser().parse_args(["synth", "--work-dir", work]))
    assert config.paths.work_dir == work
    assert config.paths.cache_dir == os.path.join(work, "cache")


def test_work_dir_override_keeps_a_shared_cache(tmp_path):
    shared = str(tmp_path / "shared")
    path = write_config(tmp_path, f"version: 1\npaths:\n  cache_dir: {shared}\n")
    config = resolve_config(build_parser().parse_args(["synth", "--config", path, "--work-dir", str(tmp_path / "w")]))
    assert config.paths.cache_dir == shared
