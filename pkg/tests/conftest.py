import numpy as np
import pytest

from pulse.platform import Platform

TOKENS = {"tok-alice": "Alice", "tok-bob": "Bob"}


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def platform(tmp_path):
    p = Platform(tmp_path / "data")
    yield p
    p.close()


@pytest.fixture
def make_platform(tmp_path):
    """Factory for platforms with custom clocks/timeouts."""
    created = []

    def factory(name="data", **kwargs):
        p = Platform(tmp_path / name, **kwargs)
        created.append(p)
        return p

    yield factory
    for p in created:
        p.close()


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, dt):
        self.now += dt
        return self.now


@pytest.fixture
def fake_clock():
    return FakeClock()


def auth(token="tok-alice"):
    return {"Authorization": f"Bearer {token}"}


@pytest.fixture
def client(platform):
    from fastapi.testclient import TestClient

    from pulse.config import ServiceConfig
    from pulse.service import create_app

    app = create_app(platform, TOKENS, config=ServiceConfig(sweep_interval=0.2))
    with TestClient(app) as c:
        yield c
