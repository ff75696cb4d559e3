"""Pytest configuration and shared fixtures for unit tests."""

import os

# Keep a developer's .env from changing output locations or spill behaviour mid-test.
os.environ.setdefault("NIDSIM_LOG_LEVEL", "WARNING")
os.environ.setdefault("NIDSIM_CAPTURE_SPILL_THRESHOLD", "1000000")

import pytest  # noqa: E402

from src.apps.base import AppLog  # noqa: E402
from src.apps.servers import install_services  # noqa: E402
from src.capture import Capture, attach_capture  # noqa: E402
from src.engine import Scheduler  # noqa: E402
from src.models import ServicesConfig, TopologyConfig  # noqa: E402
from src.netmodel.topology import build_reference_topology  # noqa: E402

SEED = 7


@pytest.fixture
def scheduler():
    """Fresh event scheduler at t=0."""
    return Scheduler()


@pytest.fixture
def topology(scheduler):
    """Reference three-LAN topology with default settings, no services running."""
    return build_reference_topology(TopologyConfig(), scheduler, SEED)


@pytest.fixture
def services():
    """Default credentials and session limits."""
    return ServicesConfig()


@pytest.fixture
def served_topology(topology, services):
    """Reference topology with FTP, HTTP, SSH and NTP listeners started."""
    install_services(topology, services, SEED)
    return topology


@pytest.fixture
def capture(topology):
    """In-memory capture fed by the Service-LAN SPAN port."""
    store = Capture()
    attach_capture(topology, capture=store)
    return store


@pytest.fixture
def app_log():
    return AppLog()
