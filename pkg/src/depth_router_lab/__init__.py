"""Desk-scale lab for agentic depth-expert routing."""

__version__ = "0.1.0"
