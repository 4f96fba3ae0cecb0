import pytest
from fastapi.testclient import TestClient

from csegg_sidecar.app import Settings, create_app


@pytest.fixture()
def client():
    return TestClient(create_app(Settings(mode="mock")))


def make_client(**settings_kwargs) -> TestClient:
    return TestClient(create_app(Settings(**settings_kwargs)))


@pytest.fixture(params=["mock", "real"])
def any_mode_client(request):
    """Conformance suite target: both modes, real skipped when the models
    cannot load in this environment."""
    client = make_client(mode=request.param)
    if request.param == "real":
        health = client.get("/health")
        if health.status_code == 503:
            # wait briefly for the loader thread to settle, then give up
            import time

            for _ in range(10):
                time.sleep(0.2)
                health = client.get("/health")
                if health.status_code != 503:
                    break
            if health.status_code == 503:
                pytest.skip(f"real mode unavailable: {health.json().get('message')}")
    return client
