"""Datasets, configuration, experiment orchestration, telemetry and checkpoints."""
