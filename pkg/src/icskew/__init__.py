"""Inter-core skew metrology by multiport Hong-Ou-Mandel interference.

Simulation of coincidence scans, dip/peak fitting, pairwise skew
extraction, random-walk scaling fits and Fisher-information limits.
"""

__version__ = "0.1.0"
