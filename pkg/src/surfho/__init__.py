"""Vehicular mmWave handover simulator with an on-vehicle dual-beam
Huygens metasurface: surface model, codebook synthesis, channel and
link-budget math, handover protocol state machines, and a deterministic
trace-capable simulation engine."""

__version__ = "0.1.0"
