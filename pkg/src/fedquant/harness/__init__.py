"""Experiment runners, metrics, theory checks and the command-line entry point."""
