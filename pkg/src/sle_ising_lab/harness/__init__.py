"""Experiment orchestration, statistics, persistence, plots and the CLI."""
