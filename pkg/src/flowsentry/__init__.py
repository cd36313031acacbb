"""Programmable packet-monitoring probes, controller and event plane."""

__version__ = "0.1.0"
