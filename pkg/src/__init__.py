"""
JamSim src package
Deterministic LTE uplink jamming and mitigation simulator
"""

__version__ = "1.0.0"
