"""Static-ZZ cancellation by off-resonant resonator driving in coupled transmons."""

__version__ = "0.1.0"
