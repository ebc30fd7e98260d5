"""Deterministic simulator and analytics for studying C2 communication shapes.

Everything here is a timing and byte-count model: no network code, no real
tooling. The package exists so defenders can generate labeled flow traces of
periodic beaconing next to event-driven agent coordination and measure how
well standard beacon detectors separate the two.
"""

__version__ = "0.1.0"
