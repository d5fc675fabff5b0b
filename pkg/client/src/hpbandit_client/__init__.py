"""Reference client for the hpbandit ask/tell wire protocol."""

from .client import ClientSession, SchedulerServiceError, connect, default_server_command

__version__ = "0.1.0"

__all__ = [
    "ClientSession",
    "SchedulerServiceError",
    "connect",
    "default_server_command",
    "__version__",
]
