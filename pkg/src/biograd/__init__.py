"""Training MLPs with exact and asymmetric error transport (BP, FA, DFA, BFA, BDFA)."""

__version__ = "0.1.0"
