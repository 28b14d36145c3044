"""Verification and benchmarking harness behind the ``warp`` command."""

from .config import ConfigError, RunConfig, RunSection, load_config, parse_config

__all__ = ["ConfigError", "RunConfig", "RunSection", "load_config", "parse_config"]
