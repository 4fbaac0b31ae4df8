"""Gateway for containerized task and workflow executions with quotas, storage and experiments."""

__version__ = "0.1.0"
