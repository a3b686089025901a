"""Experiment orchestration: config, pipeline stages, caption logs, reports, CLI."""
