"""Multiscale second-order renormalisation-group flow for the 4-dimensional
``n``-component ``|φ|⁴`` lattice model and the weakly self-avoiding walk (``n = 0``)."""

__version__ = "0.1.0"
