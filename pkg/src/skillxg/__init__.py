"""Skill-adjusted expected-goals pipeline for NHL shot data."""

__version__ = "0.1.0"
