"""
API endpoint tests for the FastAPI application
"""

import logging

import pytest
from errors import ImaginaryFrequencyError


@pytest.mark.api
class TestPipelineListing:
    """GET /api/pipelines"""

    def test_lists_all_pipelines(self, test_client):
        response = test_client.get("/api/pipelines")
        assert response.status_code == 200
        names = [definition["name"] for definition in response.json()]
        assert sorted(names) == sorted(
            [
                "modes",
                "transport-sweep",
                "equilibrium-sweep",
                "gate-eval",
                "optimize",
                "verify",
                "describe",
            ]
        )


@pytest.mark.api
class TestConfigValidation:
    """POST /api/config/validate"""

    def test_valid(self, test_client, reference_document):
        response = test_client.post("/api/config/validate", json=reference_document)
        assert response.status_code == 200
        data = response.json()
        assert data["valid"] is True
        assert data["config"]["d"] == 1e-5

    def test_invalid(self, test_client, reference_document):
        response = test_client.post(
            "/api/config/validate", json={**reference_document, "d": -1.0}
        )
        assert response.status_code == 200
        data = response.json()
        assert data["valid"] is False
        assert data["error"]


@pytest.mark.api
class TestRunPipeline:
    """POST /api/run/{name} and /api/describe"""

    def test_unknown_pipeline(self, test_client):
        response = test_client.post("/api/run/teleport", json={})
        assert response.status_code == 404

    def test_describe(self, test_client, reference_document):
        response = test_client.post("/api/describe", json={"config": reference_document})
        assert response.status_code == 200
        data = response.json()
        assert data["pipeline"] == "describe"
        assert data["converged"] is True
        assert data["document"]["window"]["T"] > 0

    def test_modes_table(self, test_client, reference_document):
        response = test_client.post(
            "/api/run/modes",
            json={"config": reference_document, "arguments": {"samples": 11}},
        )
        assert response.status_code == 200
        table = response.json()["table"]
        assert table["header"][0] == "t_s"
        assert len(table["rows"]) == 11

    def test_overrides_validated(self, test_client, reference_document):
        response = test_client.post(
            "/api/describe",
            json={"config": reference_document, "overrides": {"d": 0.0}},
        )
        assert response.status_code == 422

    def test_gate_eval_needs_pulse(self, test_client, reference_document):
        response = test_client.post("/api/run/gate-eval", json={"config": reference_document})
        assert response.status_code == 422

    def test_invalid_pulse(self, test_client, reference_document):
        response = test_client.post(
            "/api/run/gate-eval",
            json={"config": reference_document, "pulse": {"segments": [], "mu": 0.0}},
        )
        assert response.status_code == 422

    def test_physics_failure(self, test_client, reference_document, mocker):
        mocker.patch(
            "pipelines.mode_frequency_table",
            side_effect=ImaginaryFrequencyError("zigzag frequency squared is negative"),
        )
        response = test_client.post("/api/run/modes", json={"config": reference_document})
        assert response.status_code == 409
        assert "negative" in response.json()["detail"]

    def test_unexpected_failure(self, test_client, reference_document, mocker):
        mocker.patch("pipelines.mode_frequency_table", side_effect=RuntimeError("boom"))
        response = test_client.post("/api/run/modes", json={"config": reference_document})
        assert response.status_code == 500


@pytest.mark.unit
class TestLoggingSetup:
    """Root logging is owned by the runtime config module"""

    def test_app_uses_config_logging(self, test_client):
        import app as app_module
        import config

        assert app_module.configure_logging is config.configure_logging

    def test_level_applied(self):
        from config import configure_logging

        configure_logging("warning")
        assert logging.getLogger().level == logging.WARNING
        configure_logging("info")
        assert logging.getLogger().level == logging.INFO
