"""srflab - a finite-difference laboratory for the Omega-Soliton-Ricci flow."""

__version__ = "0.1.0"
