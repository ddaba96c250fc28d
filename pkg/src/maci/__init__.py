"""MACI: manage parameterized experiment studies, execute them on a worker
fleet, and analyze the collected metrics."""

__version__ = "0.1.0"
