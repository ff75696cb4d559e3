"""Benign application agents and the services they talk to."""

from src.apps.base import AppLog, BaseAgent, Exchange, ExchangeRecord
from src.apps.servers import (
    AGENT_CLASSES,
    ServiceMismatchError,
    install_services,
    run_benign_agent,
    serve,
)

__all__ = [
    "AGENT_CLASSES",
    "AppLog",
    "BaseAgent",
    "Exchange",
    "ExchangeRecord",
    "ServiceMismatchError",
    "install_services",
    "run_benign_agent",
    "serve",
]
