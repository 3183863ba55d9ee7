"""Bundled label-space fixtures."""
