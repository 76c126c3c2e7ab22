"""Curriculum-weighted zero-shot learning with prototype refinement."""

__version__ = "0.1.0"
