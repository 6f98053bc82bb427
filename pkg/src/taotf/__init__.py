"""Two-stage approximately orthogonal training (PDOI init + all-layer SRIP)."""

__version__ = "0.1.0"
