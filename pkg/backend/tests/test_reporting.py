"""
Tests for output files, manifests, the pipeline registry and the orchestrator
"""

import json
import os

import pytest
from errors import ConfigError
from pipelines import ModesPipeline, Pipeline, PipelineManager, PipelineOutput, Table
from reporting import (
    build_manifest,
    format_value,
    manifest_path,
    read_csv,
    render_json,
    sidecar_path,
    write_csv,
)


@pytest.mark.unit
class TestFormatting:
    """Cell and document rendering"""

    def test_format_value(self):
        assert format_value(0.1) == "0.1"
        assert format_value(1 / 3) == repr(1 / 3)
        assert format_value(True) == "true"
        assert format_value(None) == ""
        assert format_value(7) == "7"

    def test_render_json_adds_hash(self):
        text = render_json({"b": 1, "a": 2.5}, manifest_hash="abc")
        assert json.loads(text) == {"a": 2.5, "b": 1, "manifest_hash": "abc"}
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')

    def test_render_json_wraps_lists(self):
        assert json.loads(render_json([1, 2], manifest_hash="x")) == {
            "data": [1, 2],
            "manifest_hash": "x",
        }


@pytest.mark.unit
class TestCsv:
    """CSV writing with the manifest hash line"""

    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "out" / "table.csv")
        write_csv(path, ["t", "flag"], [[0.1, True], [2.5e-7, False]], manifest_hash="h1")
        with open(path, encoding="utf-8") as f:
            assert f.readline() == "# manifest_hash=h1\n"
        table = read_csv(path)
        assert table["manifest_hash"] == "h1"
        assert table["header"] == ["t", "flag"]
        assert table["rows"] == [["0.1", "true"], ["2.5e-07", "false"]]

    def test_row_length_checked(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv(str(tmp_path / "bad.csv"), ["a", "b"], [[1.0]])


@pytest.mark.unit
class TestManifest:
    """Run manifests and their hashes"""

    def test_hash_ignores_wall_clock(self, reference_config):
        first = build_manifest(reference_config, "modes", {}, ["a.csv"], "2024-01-01T00:00:00")
        second = build_manifest(reference_config, "modes", {}, ["a.csv"], "2025-06-01T12:00:00")
        assert first.manifest_hash == second.manifest_hash
        assert len(first.manifest_hash) == 64

    def test_hash_covers_overrides(self, reference_config):
        plain = build_manifest(reference_config, "modes", {}, ["a.csv"])
        moved = build_manifest(reference_config, "modes", {"v": 0.3}, ["a.csv"])
        assert plain.manifest_hash != moved.manifest_hash

    def test_paths(self):
        assert manifest_path("/tmp/run/gate.json") == "/tmp/run/gate.manifest.json"
        assert sidecar_path("/tmp/run/sweep.csv", "meta") == "/tmp/run/sweep.meta.json"


class _Nameless(Pipeline):
    def get_pipeline_definition(self):
        return {"description": "no name"}

    def execute(self, config, **kwargs):
        return PipelineOutput(summary="")


@pytest.mark.unit
class TestPipelineManager:
    """Pipeline registration and dispatch"""

    def test_register_and_list(self):
        manager = PipelineManager()
        manager.register_pipeline(ModesPipeline())
        assert manager.names() == ["modes"]
        assert manager.get_pipeline_definitions()[0]["name"] == "modes"

    def test_nameless_rejected(self):
        with pytest.raises(ValueError):
            PipelineManager().register_pipeline(_Nameless())

    def test_unknown_pipeline(self, reference_config):
        with pytest.raises(KeyError, match="not found"):
            PipelineManager().execute_pipeline("nothing", reference_config)


@pytest.mark.integration
class TestDriveThroughSystem:
    """Document loading and output writing"""

    def test_all_pipelines_registered(self, system):
        assert set(system.pipeline_manager.names()) == {
            "modes",
            "transport-sweep",
            "equilibrium-sweep",
            "gate-eval",
            "optimize",
            "verify",
            "describe",
        }

    def test_default_config_path(self, system):
        physical = system.load_physical_config(overrides={"v": 0.4})
        assert physical.v == 0.4
        assert physical.d == 1e-5

    def test_missing_file(self, system, tmp_path):
        with pytest.raises(ConfigError):
            system.load_physical_config(str(tmp_path / "absent.json"))

    def test_write_outputs(self, system, reference_config, tmp_path):
        output = PipelineOutput(
            summary="done",
            document={"value": 1.5},
            table=Table(header=["x"], rows=[[1.0], [2.0]]),
            sidecars={"meta": {"kind": "test"}},
        )
        out = str(tmp_path / "run" / "result.json")
        table_out = str(tmp_path / "run" / "trace.csv")
        manifest, written = system.write_outputs(
            "describe", output, reference_config, {"v": 0.2}, out=out, table_out=table_out
        )
        assert written[0] == out
        assert written[-1] == manifest_path(out)
        assert os.path.exists(sidecar_path(out, "meta"))
        with open(out, encoding="utf-8") as f:
            assert json.load(f)["manifest_hash"] == manifest.manifest_hash
        assert read_csv(table_out)["manifest_hash"] == manifest.manifest_hash
        with open(manifest_path(out), encoding="utf-8") as f:
            saved = json.load(f)
        assert saved["subcommand"] == "describe"
        assert saved["outputs"] == [out, table_out, sidecar_path(out, "meta")]

    def test_csv_path_selects_table(self, system, reference_config, tmp_path):
        output = PipelineOutput(
            summary="done", document={"value": 1.5}, table=Table(header=["x"], rows=[[1.0]])
        )
        out = str(tmp_path / "result.csv")
        _, written = system.write_outputs("gate-eval", output, reference_config, out=out)
        assert read_csv(written[0])["rows"] == [["1.0"]]

    def test_table_required_for_csv(self, system, reference_config, tmp_path):
        output = PipelineOutput(summary="done", document={"value": 1.5})
        with pytest.raises(ConfigError):
            system.write_outputs(
                "describe", output, reference_config, out=str(tmp_path / "x.csv")
            )

    def test_default_output_location(self, system, runtime_config):
        output = PipelineOutput(summary="done", table=Table(header=["x"], rows=[]))
        path = system.default_output("modes", output)
        assert path == os.path.join(runtime_config.OUTPUT_DIR, "modes.csv")
