"""Command line, configuration and experiment orchestration."""
