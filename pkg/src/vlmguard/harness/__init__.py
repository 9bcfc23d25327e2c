"""Synthetic fixtures, evaluation metrics, calibration and the CLI."""
