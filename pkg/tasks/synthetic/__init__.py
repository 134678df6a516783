"""Deterministic synthetic pixel-labeling tasks."""
