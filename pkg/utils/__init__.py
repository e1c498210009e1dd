"""Utility modules for dataset files and config validation."""
