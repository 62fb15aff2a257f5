"""Evaluation: metrics, statistics, experiments and reports."""
